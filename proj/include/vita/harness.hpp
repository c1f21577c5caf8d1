#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vita/astro.hpp"
#include "vita/cam.hpp"
#include "vita/metrics.hpp"
#include "vita/preprocess.hpp"
#include "vita/vit.hpp"

namespace vita {

struct ManifestEntry {
    std::string id;  // image file stem
    std::filesystem::path image;
    std::filesystem::path heatmap;
    std::size_t label = 0;
    std::optional<std::size_t> expected_class;
};

// CSV with header image,heatmap,label[,expected_class]. Relative paths are
// resolved against the manifest's directory. Entries keep file order.
// Throws ParseError naming the line for malformed rows, missing files or
// labels outside [0, num_classes).
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path, std::size_t num_classes);

enum class TargetClass { Predicted, Label };

std::string to_string(TargetClass target);
TargetClass parse_target_class(const std::string& text);

struct EvalOptions {
    std::optional<AstroParams> astro;
    std::vector<CamMethod> methods{CamMethod::GradCam, CamMethod::GradCamPlusPlus};
    std::vector<Metric> metrics{Metric::Spearman, Metric::Dsc, Metric::Ssim};
    MetricConfig metric_cfg;
    TargetClass target = TargetClass::Predicted;
    std::size_t workers = 1;
    std::optional<std::size_t> capture_block;
    std::optional<PreprocessConfig> preprocess;  // defaults to PreprocessConfig::for_model
};

struct EvalRecord {
    std::string image_id;
    std::size_t label = 0;
    std::size_t predicted_class = 0;
    std::size_t target_class = 0;
    CamMethod method = CamMethod::GradCam;
    Metric metric = Metric::Spearman;
    double baseline = 0.0;
    double astro = 0.0;
    std::optional<AstroParams> params;
};

struct EvalFailure {
    std::string image_id;
    std::string message;
};

struct EvalResult {
    std::vector<EvalRecord> records;
    std::vector<EvalFailure> failures;
};

// CAM maps for one image at comparison resolution, one per requested method.
struct ImageExplanation {
    std::size_t predicted_class = 0;
    std::size_t target_class = 0;
    std::vector<Heatmap> baseline_maps;
    std::vector<Heatmap> astro_maps;  // empty without astro params
    std::optional<AstroTrace> trace;
};

// The unmodulated forward picks the predicted class and yields the baseline
// maps; with `astro` set a second, astrocytic forward provides activations
// and gradients for the same target class.
ImageExplanation explain_image(const VitModel& model, const Tensor& image, const std::optional<AstroParams>& astro,
                               const std::vector<CamMethod>& methods, std::optional<std::size_t> target_class,
                               const MetricConfig& metric_cfg, std::optional<std::size_t> capture_block = std::nullopt);

// Baseline vs astrocytic alignment for every entry, method and metric.
// Records come back in manifest order, then method, then metric. Failing
// images (or undefined metrics) are skipped and reported in `failures`.
EvalResult run_eval(const VitModel& model, const std::vector<ManifestEntry>& manifest, const EvalOptions& options);

struct GridSpace {
    std::vector<int> k;
    std::vector<int> tau;
    std::vector<double> phi;
    std::vector<double> alpha;
    std::vector<double> beta;

    // k {4,6,8}, tau {1,2,3}, phi {-0.5,-0.2,0,0.2,0.5}, alpha {1.05,1.2,1.5},
    // beta {0.005,0.05,0.25}: 405 combinations.
    static GridSpace standard();

    std::size_t size() const;
    // Nested in k, tau, phi, alpha, beta order.
    std::vector<AstroParams> combinations() const;
    void validate() const;
};

GridSpace parse_grid_space(const std::string& json_text);

struct GridRow {
    AstroParams params;
    double mean = 0.0;           // mean astro metric over evaluated images; NaN if none
    double baseline_mean = 0.0;  // same images, unmodulated model
    std::size_t evaluated = 0;
    std::size_t failures = 0;
};

struct GridOptions {
    CamMethod method = CamMethod::GradCam;
    Metric metric = Metric::Ssim;
    MetricConfig metric_cfg;
    TargetClass target = TargetClass::Predicted;
    std::size_t workers = 1;
    std::optional<PreprocessConfig> preprocess;
};

// Every combination evaluated, ranked by mean descending; ties go to fewer
// iterations, then lexicographically smaller (k, tau, phi, alpha, beta).
// Combinations with no successful image rank last.
std::vector<GridRow> grid_search(const VitModel& model, const std::vector<ManifestEntry>& manifest,
                                 const GridSpace& space, const GridOptions& options);

struct SummaryStats {
    double mean = 0.0;
    double median = 0.0;
    double sd = 0.0;  // sample standard deviation
};

SummaryStats summarize(std::span<const double> values);

struct StatsRow {
    CamMethod method = CamMethod::GradCam;
    Metric metric = Metric::Spearman;
    std::size_t n = 0;
    SummaryStats baseline;
    SummaryStats astro;
    double p_value = 1.0;  // one-tailed rank-sum, astro greater
    bool exact = false;
};

// One row per (method, metric) group present, in enum order. Throws
// NumericError if a group has fewer than two records.
std::vector<StatsRow> stats_report(const std::vector<EvalRecord>& records);

struct ExplainOptions {
    std::optional<AstroParams> astro;
    CamMethod method = CamMethod::GradCam;
    TargetClass target = TargetClass::Predicted;
    std::optional<std::size_t> label;  // required when target == Label
    std::size_t resolution = 224;
    bool renormalize = true;
    std::optional<std::filesystem::path> trace_path;
    std::optional<PreprocessConfig> preprocess;
};

struct ExplainOutput {
    std::filesystem::path pgm, raw, sidecar;
    std::size_t predicted_class = 0;
    std::size_t target_class = 0;
};

// Writes <prefix>.pgm, <prefix>.f32 and <prefix>.json.
ExplainOutput explain_single(const VitModel& model, const std::filesystem::path& image,
                             const ExplainOptions& options, const std::filesystem::path& out_prefix);

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
// thrown by fn is rethrown after all threads join.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace vita
