#include "vita/astro.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vita/error.hpp"

namespace vita {

void AstroParams::validate() const {
    if (k < 0) throw UsageError("astro: k must be >= 0");
    if (tau < 1) throw UsageError("astro: tau must be >= 1");
    if (!(alpha >= 1.0) || !std::isfinite(alpha)) throw UsageError("astro: alpha must be >= 1");
    // beta = 1 is accepted as the no-op end of the range.
    if (!(beta > 0.0 && beta <= 1.0)) throw UsageError("astro: beta must lie in (0, 1]");
    if (std::isnan(phi)) throw UsageError("astro: phi is NaN");
}

std::string AstroParams::to_string() const {
    auto real = [](double v) {
        char buf[32];
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, res.ptr);
    };
    return std::to_string(k) + ',' + std::to_string(tau) + ',' + real(phi) + ',' + real(alpha) + ',' + real(beta);
}

AstroParams parse_astro_params(const std::string& text) {
    std::vector<std::string> fields;
    std::stringstream ss(text);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 5) throw ParseError("--astro expects k,tau,phi,alpha,beta; got \"" + text + "\"");

    auto as_int = [&](const std::string& s, const char* name) {
        int v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) throw ParseError(std::string("bad ") + name + ": " + s);
        return v;
    };
    auto as_real = [&](const std::string& s, const char* name) {
        try {
            std::size_t used = 0;
            double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ParseError(std::string("bad ") + name + ": " + s);
        }
    };
    AstroParams p{as_int(fields[0], "k"), as_int(fields[1], "tau"), as_real(fields[2], "phi"),
                  as_real(fields[3], "alpha"), as_real(fields[4], "beta")};
    p.validate();
    return p;
}

int update_activity(int previous, double y_cls, double phi, int tau) {
    const int raw = y_cls >= phi ? previous + 1 : previous - 1;
    return std::clamp(raw, -tau, tau);
}

double modulation_factor(int activity, int tau, double alpha, double beta) {
    if (activity >= tau) return alpha;
    if (activity <= -tau) return beta;
    return 1.0;
}

namespace {

double mean_row_norm(const Tensor& y) {
    double total = 0.0;
    for (std::size_t r = 0; r < y.rows(); ++r) {
        double sq = 0.0;
        for (double v : y.row(r)) sq += v * v;
        total += std::sqrt(sq);
    }
    return total / static_cast<double>(y.rows());
}

}  // namespace

Tensor normalize_output(const Tensor& y0, const Tensor& yk) {
    if (y0.shape() != yk.shape() || y0.rank() != 2) {
        throw ShapeError("normalize_output: " + shape_str(y0.shape()) + " vs " + shape_str(yk.shape()));
    }
    const double target = mean_row_norm(y0);
    const double current = mean_row_norm(yk);
    if (!(current > 0.0)) throw NumericError("normalize_output: modulated output has zero mean norm");
    return scale(yk, target / current);
}

AstroResult astro_linear_forward(const Tensor& x, const Tensor& w, const Tensor& b, const AstroParams& params) {
    params.validate();
    const std::size_t neurons = w.rows();
    AstroState state(neurons);
    AstroTrace trace;

    Tensor y0 = linear(x, w, b);
    if (!y0.all_finite()) throw NumericError("astro layer: non-finite output at iteration 0");

    auto record = [&](const Tensor& y, std::vector<double> m) {
        trace.steps.push_back({state.t, std::vector<double>(y.row(0).begin(), y.row(0).end()), state.activity,
                               std::move(m), state.m_diag});
    };
    record(y0, std::vector<double>(neurons, 1.0));

    Tensor y = y0;
    Tensor modulated_w(w.shape());
    for (int t = 1; t <= params.k; ++t) {
        state.t = t;
        std::vector<double> m(neurons);
        for (std::size_t i = 0; i < neurons; ++i) {
            state.activity[i] = update_activity(state.activity[i], y.at(0, i), params.phi, params.tau);
            m[i] = modulation_factor(state.activity[i], params.tau, params.alpha, params.beta);
            state.m_diag[i] *= m[i];
        }
        for (std::size_t i = 0; i < neurons; ++i) {
            auto src = w.row(i);
            auto dst = modulated_w.row(i);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] = state.m_diag[i] * src[j];
        }
        y = linear(x, modulated_w, b);
        if (!y.all_finite()) throw NumericError("astro layer: non-finite output at iteration " + std::to_string(t));
        record(y, std::move(m));
    }

    trace.mean_norm_initial = mean_row_norm(y0);
    trace.mean_norm_final = mean_row_norm(y);
    if (params.k == 0) return {std::move(y0), std::move(trace)};
    Tensor out = normalize_output(y0, y);
    if (!out.all_finite()) throw NumericError("astro layer: non-finite normalized output");
    return {std::move(out), std::move(trace)};
}

void write_trace_jsonl(std::ostream& out, const AstroTrace& trace) {
    for (const auto& step : trace.steps) {
        nlohmann::json j{{"t", step.t},
                         {"y_cls", step.y_cls},
                         {"A", step.activity},
                         {"m", step.m},
                         {"M_diag", step.m_diag}};
        if (&step == &trace.steps.back()) {
            j["mean_norm_initial"] = trace.mean_norm_initial;
            j["mean_norm_final"] = trace.mean_norm_final;
        }
        out << j.dump() << '\n';
    }
}

void write_trace_jsonl(const std::filesystem::path& path, const AstroTrace& trace) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot open " + path.string() + " for writing");
    write_trace_jsonl(out, trace);
}

}  // namespace vita
