#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vita/cam.hpp"

namespace vita {

enum class SsimMode { Windowed, Global };

struct MetricConfig {
    double dsc_percentile = 50.0;  // each map is binarized above its own percentile
    double ssim_c1 = 1e-4;         // (0.01 L)^2 with L = 1
    double ssim_c2 = 9e-4;         // (0.03 L)^2
    std::size_t ssim_window = 11;  // odd
    double ssim_sigma = 1.5;
    SsimMode ssim_mode = SsimMode::Windowed;
    std::size_t comparison_resolution = 224;
    bool renormalize_upsampled = true;

    void validate() const;
};

enum class Metric { Spearman, Dsc, Ssim };

std::string to_string(Metric metric);
Metric parse_metric(const std::string& text);
std::string to_string(SsimMode mode);
SsimMode parse_ssim_mode(const std::string& text);

// Average ranks (1-based); tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

// Pearson correlation of average ranks. Throws NumericError when either
// input is constant.
double spearman(std::span<const double> x, std::span<const double> y);

// Linear-interpolation percentile (same convention as numpy's default).
double percentile(std::span<const double> values, double pct);

// 2|X n Y| / (|X| + |Y|) with X, Y the pixels strictly above each map's
// percentile threshold. Two empty sets compare as identical (1.0).
double dsc(const Heatmap& x, const Heatmap& y, const MetricConfig& cfg);

// Windowed: mean SSIM over all fully-contained Gaussian windows.
// Global: the SSIM formula once over whole-image statistics.
double ssim(const Heatmap& x, const Heatmap& y, const MetricConfig& cfg);

double compute_metric(Metric metric, const Heatmap& x, const Heatmap& y, const MetricConfig& cfg);

struct RankSumResult {
    double rank_sum = 0.0;  // sum of ranks of sample a in the pooled data
    double u = 0.0;         // rank_sum - n_a (n_a + 1) / 2
    double p_value = 1.0;
    bool exact = false;
};

// One-tailed Wilcoxon rank-sum (Mann-Whitney) test with the alternative that
// `a` is stochastically greater than `b`. Uses the exact permutation
// distribution (ties handled through average ranks) when the smaller sample
// has at most `exact_threshold` values, otherwise the tie-corrected normal
// approximation with continuity correction.
RankSumResult wilcoxon_rank_sum_one_tailed(std::span<const double> a, std::span<const double> b,
                                           std::size_t exact_threshold = 8);

// Forces one route; used to cross-check the two.
double rank_sum_p_exact(std::span<const double> a, std::span<const double> b);
double rank_sum_p_normal(std::span<const double> a, std::span<const double> b);

}  // namespace vita
