#include "vita/report.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vita/error.hpp"

namespace vita {

std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

constexpr const char* kRecordHeader = "image,label,predicted_class,target_class,cam,metric,baseline,astro,k,tau,phi,alpha,beta";

double parse_real(const std::string& s, std::size_t line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ParseError("records line " + std::to_string(line) + ": bad number \"" + s + "\"");
}

}  // namespace

void write_records_csv(std::ostream& out, const std::vector<EvalRecord>& records) {
    out << kRecordHeader << '\n';
    for (const auto& r : records) {
        out << r.image_id << ',' << r.label << ',' << r.predicted_class << ',' << r.target_class << ','
            << to_string(r.method) << ',' << to_string(r.metric) << ',' << format_real(r.baseline) << ','
            << format_real(r.astro) << ',';
        if (r.params) {
            const auto& p = *r.params;
            out << p.k << ',' << p.tau << ',' << format_real(p.phi) << ',' << format_real(p.alpha) << ','
                << format_real(p.beta);
        } else {
            out << ",,,,";
        }
        out << '\n';
    }
}

std::vector<EvalRecord> read_records_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) return {};
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kRecordHeader) throw ParseError("records: unexpected header \"" + line + "\"");

    std::vector<EvalRecord> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (line.back() == ',') f.emplace_back();
        if (f.size() != 13) throw ParseError("records line " + std::to_string(line_no) + ": expected 13 fields");
        EvalRecord r;
        r.image_id = f[0];
        r.label = static_cast<std::size_t>(parse_real(f[1], line_no));
        r.predicted_class = static_cast<std::size_t>(parse_real(f[2], line_no));
        r.target_class = static_cast<std::size_t>(parse_real(f[3], line_no));
        r.method = parse_cam_method(f[4]);
        r.metric = parse_metric(f[5]);
        r.baseline = parse_real(f[6], line_no);
        r.astro = parse_real(f[7], line_no);
        if (!f[8].empty()) {
            r.params = AstroParams{static_cast<int>(parse_real(f[8], line_no)), static_cast<int>(parse_real(f[9], line_no)),
                                   parse_real(f[10], line_no), parse_real(f[11], line_no), parse_real(f[12], line_no)};
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::string summary_json(const std::vector<StatsRow>& rows, std::size_t failures) {
    auto stats = [](const SummaryStats& s) {
        return nlohmann::ordered_json{{"mean", s.mean}, {"median", s.median}, {"sd", s.sd}};
    };
    nlohmann::ordered_json groups = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        groups.push_back({{"cam", to_string(r.method)},
                          {"metric", to_string(r.metric)},
                          {"n", r.n},
                          {"vit", stats(r.baseline)},
                          {"vita", stats(r.astro)},
                          {"p_value", r.p_value},
                          {"exact", r.exact}});
    }
    nlohmann::ordered_json j{{"groups", groups}, {"failures", failures}};
    return j.dump(2);
}

void write_grid_csv(std::ostream& out, const std::vector<GridRow>& rows) {
    out << "rank,k,tau,phi,alpha,beta,mean,baseline_mean,evaluated,failures\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        out << i + 1 << ',' << r.params.k << ',' << r.params.tau << ',' << format_real(r.params.phi) << ','
            << format_real(r.params.alpha) << ',' << format_real(r.params.beta) << ',' << format_real(r.mean) << ','
            << format_real(r.baseline_mean) << ',' << r.evaluated << ',' << r.failures << '\n';
    }
}

}  // namespace vita
