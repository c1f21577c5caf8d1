#include "vita/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <tuple>

#include <nlohmann/json.hpp>

#include "vita/error.hpp"

namespace vita {

namespace {

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) out.push_back(trim(f));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::size_t parse_index(const std::string& text, const std::string& what, std::size_t line) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size() || v < 0) {
        throw ParseError("manifest line " + std::to_string(line) + ": bad " + what + " \"" + text + "\"");
    }
    return static_cast<std::size_t>(v);
}

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path, std::size_t num_classes) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open manifest " + path.string());
    const auto base = path.parent_path();

    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            header = split_csv(trim(line));
            break;
        }
    }
    if (header.empty()) return {};
    const bool has_expected = header.size() == 4 && header[3] == "expected_class";
    if (header.size() < 3 || header[0] != "image" || header[1] != "heatmap" || header[2] != "label" ||
        (header.size() == 4 && !has_expected) || header.size() > 4) {
        throw ParseError("manifest line " + std::to_string(line_no) +
                         ": header must be image,heatmap,label[,expected_class]");
    }

    std::vector<ManifestEntry> entries;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto fields = split_csv(line);
        if (fields.size() != header.size()) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        }
        ManifestEntry e;
        e.image = base / fields[0];
        e.heatmap = base / fields[1];
        e.id = std::filesystem::path(fields[0]).stem().string();
        e.label = parse_index(fields[2], "label", line_no);
        if (e.label >= num_classes) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": label " + fields[2] +
                             " outside [0, " + std::to_string(num_classes) + ")");
        }
        if (has_expected && !fields[3].empty()) e.expected_class = parse_index(fields[3], "expected_class", line_no);
        if (!std::filesystem::exists(e.image)) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": missing image " + e.image.string());
        }
        if (!std::filesystem::exists(e.heatmap)) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": missing heatmap " + e.heatmap.string());
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

std::string to_string(TargetClass target) { return target == TargetClass::Predicted ? "predicted" : "label"; }

TargetClass parse_target_class(const std::string& text) {
    if (text == "predicted") return TargetClass::Predicted;
    if (text == "label") return TargetClass::Label;
    throw ParseError("unknown target class \"" + text + "\" (expected predicted or label)");
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

namespace {

std::vector<Heatmap> maps_from_capture(const CaptureBundle& capture, const VitConfig& config,
                                       const std::vector<CamMethod>& methods, const MetricConfig& cfg) {
    const SpatialActivation sa = tokens_to_grid(capture, config);
    std::vector<Heatmap> maps;
    maps.reserve(methods.size());
    for (CamMethod m : methods) {
        maps.push_back(upsample_bilinear(compute_cam(m, sa), cfg.comparison_resolution, cfg.comparison_resolution,
                                         cfg.renormalize_upsampled));
    }
    return maps;
}

std::vector<Heatmap> astro_maps(const VitModel& model, const Tensor& image, const AstroParams& astro,
                                std::size_t target, const std::vector<CamMethod>& methods, const MetricConfig& cfg,
                                std::optional<std::size_t> capture_block, std::optional<AstroTrace>* trace) {
    CaptureBundle capture = model.forward(image, {astro, capture_block});
    capture.backward(target);
    if (trace) *trace = capture.astro_trace();
    return maps_from_capture(capture, model.config(), methods, cfg);
}

}  // namespace

ImageExplanation explain_image(const VitModel& model, const Tensor& image, const std::optional<AstroParams>& astro,
                               const std::vector<CamMethod>& methods, std::optional<std::size_t> target_class,
                               const MetricConfig& metric_cfg, std::optional<std::size_t> capture_block) {
    ImageExplanation out;
    CaptureBundle baseline = model.forward(image, {std::nullopt, capture_block});
    out.predicted_class = argmax(baseline.logits().data());
    out.target_class = target_class.value_or(out.predicted_class);
    baseline.backward(out.target_class);
    out.baseline_maps = maps_from_capture(baseline, model.config(), methods, metric_cfg);
    if (astro) {
        out.astro_maps =
            astro_maps(model, image, *astro, out.target_class, methods, metric_cfg, capture_block, &out.trace);
    }
    return out;
}

EvalResult run_eval(const VitModel& model, const std::vector<ManifestEntry>& manifest, const EvalOptions& options) {
    options.metric_cfg.validate();
    if (options.astro) options.astro->validate();
    const PreprocessConfig pre = options.preprocess.value_or(PreprocessConfig::for_model(model.config()));

    struct PerImage {
        std::vector<EvalRecord> records;
        std::vector<EvalFailure> failures;
    };
    std::vector<PerImage> slots(manifest.size());

    parallel_for(manifest.size(), options.workers, [&](std::size_t i) {
        const ManifestEntry& e = manifest[i];
        PerImage& slot = slots[i];
        try {
            const Tensor image = preprocess_image(e.image, pre);
            const Heatmap truth = load_ground_truth(e.heatmap, options.metric_cfg.comparison_resolution);
            std::optional<std::size_t> target;
            if (options.target == TargetClass::Label) target = e.label;
            const ImageExplanation ex = explain_image(model, image, options.astro, options.methods, target,
                                                      options.metric_cfg, options.capture_block);
            for (std::size_t m = 0; m < options.methods.size(); ++m) {
                const Heatmap& astro_map = options.astro ? ex.astro_maps[m] : ex.baseline_maps[m];
                for (Metric metric : options.metrics) {
                    try {
                        EvalRecord r;
                        r.image_id = e.id;
                        r.label = e.label;
                        r.predicted_class = ex.predicted_class;
                        r.target_class = ex.target_class;
                        r.method = options.methods[m];
                        r.metric = metric;
                        r.baseline = compute_metric(metric, ex.baseline_maps[m], truth, options.metric_cfg);
                        r.astro = compute_metric(metric, astro_map, truth, options.metric_cfg);
                        r.params = options.astro;
                        slot.records.push_back(std::move(r));
                    } catch (const std::exception& err) {
                        slot.failures.push_back(
                            {e.id, to_string(options.methods[m]) + "/" + to_string(metric) + ": " + err.what()});
                    }
                }
            }
        } catch (const std::exception& err) {
            slot.failures.push_back({e.id, err.what()});
        }
    });

    EvalResult result;
    for (auto& s : slots) {
        std::move(s.records.begin(), s.records.end(), std::back_inserter(result.records));
        std::move(s.failures.begin(), s.failures.end(), std::back_inserter(result.failures));
    }
    return result;
}

GridSpace GridSpace::standard() {
    return {{4, 6, 8}, {1, 2, 3}, {-0.5, -0.2, 0.0, 0.2, 0.5}, {1.05, 1.2, 1.5}, {0.005, 0.05, 0.25}};
}

std::size_t GridSpace::size() const { return k.size() * tau.size() * phi.size() * alpha.size() * beta.size(); }

std::vector<AstroParams> GridSpace::combinations() const {
    std::vector<AstroParams> out;
    out.reserve(size());
    for (int kv : k)
        for (int tv : tau)
            for (double pv : phi)
                for (double av : alpha)
                    for (double bv : beta) out.push_back({kv, tv, pv, av, bv});
    return out;
}

void GridSpace::validate() const {
    if (k.empty() || tau.empty() || phi.empty() || alpha.empty() || beta.empty()) {
        throw UsageError("grid space: every parameter list must be non-empty");
    }
    for (const auto& p : combinations()) p.validate();
}

GridSpace parse_grid_space(const std::string& json_text) {
    GridSpace g;
    try {
        const auto j = nlohmann::json::parse(json_text);
        j.at("k").get_to(g.k);
        j.at("tau").get_to(g.tau);
        j.at("phi").get_to(g.phi);
        j.at("alpha").get_to(g.alpha);
        j.at("beta").get_to(g.beta);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("grid space: ") + e.what());
    }
    g.validate();
    return g;
}

std::vector<GridRow> grid_search(const VitModel& model, const std::vector<ManifestEntry>& manifest,
                                 const GridSpace& space, const GridOptions& options) {
    space.validate();
    options.metric_cfg.validate();
    if (manifest.empty()) throw UsageError("grid search needs a non-empty manifest");
    const PreprocessConfig pre = options.preprocess.value_or(PreprocessConfig::for_model(model.config()));
    const std::vector<CamMethod> methods{options.method};

    // Baseline work is shared by every combination.
    struct Cached {
        bool ok = false;
        Tensor image;
        Heatmap truth;
        std::size_t target = 0;
        double baseline = 0.0;
    };
    std::vector<Cached> cache(manifest.size());
    parallel_for(manifest.size(), options.workers, [&](std::size_t i) {
        try {
            Cached c;
            c.image = preprocess_image(manifest[i].image, pre);
            c.truth = load_ground_truth(manifest[i].heatmap, options.metric_cfg.comparison_resolution);
            std::optional<std::size_t> target;
            if (options.target == TargetClass::Label) target = manifest[i].label;
            const auto ex = explain_image(model, c.image, std::nullopt, methods, target, options.metric_cfg);
            c.target = ex.target_class;
            c.baseline = compute_metric(options.metric, ex.baseline_maps[0], c.truth, options.metric_cfg);
            c.ok = true;
            cache[i] = std::move(c);
        } catch (const std::exception&) {
            cache[i].ok = false;
        }
    });

    const auto combos = space.combinations();
    std::vector<GridRow> rows(combos.size());
    parallel_for(combos.size(), options.workers, [&](std::size_t ci) {
        GridRow& row = rows[ci];
        row.params = combos[ci];
        double sum = 0.0, base_sum = 0.0;
        for (const Cached& c : cache) {
            if (!c.ok) {
                ++row.failures;
                continue;
            }
            try {
                const auto maps =
                    astro_maps(model, c.image, combos[ci], c.target, methods, options.metric_cfg, std::nullopt, nullptr);
                sum += compute_metric(options.metric, maps[0], c.truth, options.metric_cfg);
                base_sum += c.baseline;
                ++row.evaluated;
            } catch (const std::exception&) {
                ++row.failures;
            }
        }
        const double n = static_cast<double>(row.evaluated);
        row.mean = row.evaluated ? sum / n : std::numeric_limits<double>::quiet_NaN();
        row.baseline_mean = row.evaluated ? base_sum / n : std::numeric_limits<double>::quiet_NaN();
    });

    std::stable_sort(rows.begin(), rows.end(), [](const GridRow& a, const GridRow& b) {
        const bool a_nan = std::isnan(a.mean), b_nan = std::isnan(b.mean);
        if (a_nan != b_nan) return b_nan;
        if (!a_nan && a.mean != b.mean) return a.mean > b.mean;
        const auto& p = a.params;
        const auto& q = b.params;
        return std::tie(p.k, p.tau, p.phi, p.alpha, p.beta) < std::tie(q.k, q.tau, q.phi, q.alpha, q.beta);
    });
    return rows;
}

SummaryStats summarize(std::span<const double> values) {
    if (values.empty()) throw NumericError("summary of an empty sample");
    SummaryStats s;
    const double n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    return s;
}

std::vector<StatsRow> stats_report(const std::vector<EvalRecord>& records) {
    std::vector<StatsRow> rows;
    for (CamMethod method : {CamMethod::GradCam, CamMethod::GradCamPlusPlus}) {
        for (Metric metric : {Metric::Spearman, Metric::Dsc, Metric::Ssim}) {
            std::vector<double> base, astro;
            for (const auto& r : records) {
                if (r.method == method && r.metric == metric) {
                    base.push_back(r.baseline);
                    astro.push_back(r.astro);
                }
            }
            if (base.empty()) continue;
            if (base.size() < 2) {
                throw NumericError("insufficient data: " + to_string(method) + "/" + to_string(metric) +
                                   " has fewer than two records");
            }
            StatsRow row;
            row.method = method;
            row.metric = metric;
            row.n = base.size();
            row.baseline = summarize(base);
            row.astro = summarize(astro);
            const auto test = wilcoxon_rank_sum_one_tailed(astro, base);
            row.p_value = test.p_value;
            row.exact = test.exact;
            rows.push_back(row);
        }
    }
    if (rows.empty()) throw NumericError("insufficient data: no records");
    return rows;
}

ExplainOutput explain_single(const VitModel& model, const std::filesystem::path& image_path,
                             const ExplainOptions& options, const std::filesystem::path& out_prefix) {
    if (options.astro) options.astro->validate();
    std::optional<std::size_t> target;
    if (options.target == TargetClass::Label) {
        if (!options.label) throw UsageError("--target-class label needs an explicit label");
        if (*options.label >= model.config().num_classes) throw UsageError("label outside the model's classes");
        target = options.label;
    }
    MetricConfig cfg;
    cfg.comparison_resolution = options.resolution;
    cfg.renormalize_upsampled = options.renormalize;

    const PreprocessConfig pre = options.preprocess.value_or(PreprocessConfig::for_model(model.config()));
    const Tensor image = preprocess_image(image_path, pre);
    const ImageExplanation ex = explain_image(model, image, options.astro, {options.method}, target, cfg);
    const Heatmap& map = options.astro ? ex.astro_maps[0] : ex.baseline_maps[0];

    ExplainOutput out;
    out.pgm = out_prefix;
    out.pgm += ".pgm";
    out.raw = out_prefix;
    out.raw += ".f32";
    out.sidecar = out_prefix;
    out.sidecar += ".json";
    out.predicted_class = ex.predicted_class;
    out.target_class = ex.target_class;

    if (out_prefix.has_parent_path()) std::filesystem::create_directories(out_prefix.parent_path());
    write_pgm(out.pgm, map);
    nlohmann::json extra{{"image", image_path.filename().string()},
                         {"method", to_string(options.method)},
                         {"predicted_class", ex.predicted_class},
                         {"target_class", ex.target_class},
                         {"dtype", "f32"}};
    if (options.astro) {
        const auto& p = *options.astro;
        extra["astro"] = {{"k", p.k}, {"tau", p.tau}, {"phi", p.phi}, {"alpha", p.alpha}, {"beta", p.beta}};
    } else {
        extra["astro"] = nullptr;
    }
    write_raw_f32(out.raw, out.sidecar, map, extra);
    if (options.trace_path && ex.trace) write_trace_jsonl(*options.trace_path, *ex.trace);
    return out;
}

}  // namespace vita
