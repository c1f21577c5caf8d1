#include "vita/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vita/error.hpp"

namespace vita {

void MetricConfig::validate() const {
    if (!(dsc_percentile > 0.0 && dsc_percentile < 100.0)) throw UsageError("dsc percentile must lie in (0, 100)");
    if (!(ssim_c1 > 0.0) || !(ssim_c2 > 0.0)) throw UsageError("SSIM constants must be positive");
    if (ssim_window == 0 || ssim_window % 2 == 0) throw UsageError("SSIM window must be odd");
    if (!(ssim_sigma > 0.0)) throw UsageError("SSIM sigma must be positive");
    if (comparison_resolution == 0) throw UsageError("comparison resolution must be positive");
}

std::string to_string(Metric metric) {
    switch (metric) {
        case Metric::Spearman: return "spearman";
        case Metric::Dsc: return "dsc";
        case Metric::Ssim: return "ssim";
    }
    return "?";
}

Metric parse_metric(const std::string& text) {
    if (text == "spearman") return Metric::Spearman;
    if (text == "dsc") return Metric::Dsc;
    if (text == "ssim") return Metric::Ssim;
    throw ParseError("unknown metric \"" + text + "\" (expected spearman, dsc or ssim)");
}

std::string to_string(SsimMode mode) { return mode == SsimMode::Windowed ? "windowed" : "global"; }

SsimMode parse_ssim_mode(const std::string& text) {
    if (text == "windowed") return SsimMode::Windowed;
    if (text == "global") return SsimMode::Global;
    throw ParseError("unknown SSIM mode \"" + text + "\"");
}

std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
        i = j + 1;
    }
    return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("spearman: inputs differ in length");
    if (x.size() < 2) throw NumericError("spearman: need at least two values");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw NumericError("spearman: correlation undefined for a constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double percentile(std::span<const double> values, double pct) {
    if (values.empty()) throw NumericError("percentile of an empty set");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = pct / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double f = pos - static_cast<double>(lo);
    return sorted[lo] + f * (sorted[hi] - sorted[lo]);
}

namespace {

void require_same_size(const Heatmap& x, const Heatmap& y, const char* what) {
    if (x.width != y.width || x.height != y.height) {
        throw ShapeError(std::string(what) + ": resolution mismatch " + std::to_string(x.width) + "x" +
                         std::to_string(x.height) + " vs " + std::to_string(y.width) + "x" + std::to_string(y.height));
    }
}

std::vector<double> gaussian_kernel(std::size_t size, double sigma) {
    std::vector<double> k(size);
    const double c = static_cast<double>(size / 2);
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - c;
        k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    }
    const double s = std::accumulate(k.begin(), k.end(), 0.0);
    for (double& v : k) v /= s;
    return k;
}

// Separable "valid" correlation: output is (h - w + 1) x (wd - w + 1).
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t width, std::size_t height,
                                 const std::vector<double>& k) {
    const std::size_t w = k.size(), ow = width - w + 1, oh = height - w + 1;
    std::vector<double> rows(height * ow);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < w; ++i) acc += k[i] * img[y * width + x + i];
            rows[y * ow + x] = acc;
        }
    std::vector<double> out(oh * ow);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < w; ++i) acc += k[i] * rows[(y + i) * ow + x];
            out[y * ow + x] = acc;
        }
    return out;
}

double ssim_formula(double mx, double my, double vx, double vy, double cxy, double c1, double c2) {
    return ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

}  // namespace

double dsc(const Heatmap& x, const Heatmap& y, const MetricConfig& cfg) {
    require_same_size(x, y, "dsc");
    if (x.values.empty()) throw ShapeError("dsc: empty heatmaps");
    const double tx = percentile(x.values, cfg.dsc_percentile);
    const double ty = percentile(y.values, cfg.dsc_percentile);
    std::size_t nx = 0, ny = 0, both = 0;
    for (std::size_t i = 0; i < x.values.size(); ++i) {
        const bool in_x = x.values[i] > tx;
        const bool in_y = y.values[i] > ty;
        nx += in_x;
        ny += in_y;
        both += in_x && in_y;
    }
    if (nx + ny == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(nx + ny);
}

double ssim(const Heatmap& x, const Heatmap& y, const MetricConfig& cfg) {
    require_same_size(x, y, "ssim");
    if (x.values.empty()) throw ShapeError("ssim: empty heatmaps");
    const double c1 = cfg.ssim_c1, c2 = cfg.ssim_c2;

    if (cfg.ssim_mode == SsimMode::Global) {
        const double n = static_cast<double>(x.values.size());
        const double mx = std::accumulate(x.values.begin(), x.values.end(), 0.0) / n;
        const double my = std::accumulate(y.values.begin(), y.values.end(), 0.0) / n;
        double vx = 0.0, vy = 0.0, cxy = 0.0;
        for (std::size_t i = 0; i < x.values.size(); ++i) {
            vx += (x.values[i] - mx) * (x.values[i] - mx);
            vy += (y.values[i] - my) * (y.values[i] - my);
            cxy += (x.values[i] - mx) * (y.values[i] - my);
        }
        return ssim_formula(mx, my, vx / n, vy / n, cxy / n, c1, c2);
    }

    if (cfg.ssim_window > x.width || cfg.ssim_window > x.height) {
        throw ShapeError("ssim: window larger than the image");
    }
    const auto k = gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma);
    const std::size_t n = x.values.size();
    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = x.values[i] * x.values[i];
        yy[i] = y.values[i] * y.values[i];
        xy[i] = x.values[i] * y.values[i];
    }
    const auto mu_x = filter_valid(x.values, x.width, x.height, k);
    const auto mu_y = filter_valid(y.values, x.width, x.height, k);
    const auto e_xx = filter_valid(xx, x.width, x.height, k);
    const auto e_yy = filter_valid(yy, x.width, x.height, k);
    const auto e_xy = filter_valid(xy, x.width, x.height, k);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
        const double vx = e_xx[i] - mu_x[i] * mu_x[i];
        const double vy = e_yy[i] - mu_y[i] * mu_y[i];
        const double cxy = e_xy[i] - mu_x[i] * mu_y[i];
        total += ssim_formula(mu_x[i], mu_y[i], vx, vy, cxy, c1, c2);
    }
    return total / static_cast<double>(mu_x.size());
}

double compute_metric(Metric metric, const Heatmap& x, const Heatmap& y, const MetricConfig& cfg) {
    switch (metric) {
        case Metric::Spearman:
            require_same_size(x, y, "spearman");
            return spearman(x.values, y.values);
        case Metric::Dsc: return dsc(x, y, cfg);
        case Metric::Ssim: return ssim(x, y, cfg);
    }
    throw UsageError("unknown metric");
}

namespace {

struct Pooled {
    std::vector<double> ranks_a, ranks_b;
    double tie_term = 0.0;  // sum over tie groups of t^3 - t
};

Pooled pool(std::span<const double> a, std::span<const double> b) {
    std::vector<double> all(a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    const auto ranks = average_ranks(all);
    Pooled p;
    p.ranks_a.assign(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(a.size()));
    p.ranks_b.assign(ranks.begin() + static_cast<std::ptrdiff_t>(a.size()), ranks.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j] == all[i]) ++j;
        const double t = static_cast<double>(j - i);
        p.tie_term += t * t * t - t;
        i = j;
    }
    return p;
}

void require_nonempty(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw NumericError("rank-sum test needs two non-empty samples");
}

}  // namespace

double rank_sum_p_exact(std::span<const double> a, std::span<const double> b) {
    require_nonempty(a, b);
    const Pooled p = pool(a, b);
    // Doubled average ranks are integers, so subset sums can be counted exactly.
    const bool small_is_a = a.size() <= b.size();
    const auto& small_ranks = small_is_a ? p.ranks_a : p.ranks_b;
    const std::size_t m = small_ranks.size();

    std::vector<long> doubled;
    doubled.reserve(p.ranks_a.size() + p.ranks_b.size());
    for (double r : p.ranks_a) doubled.push_back(std::lround(2.0 * r));
    for (double r : p.ranks_b) doubled.push_back(std::lround(2.0 * r));
    long observed = 0;
    for (double r : small_ranks) observed += std::lround(2.0 * r);

    std::vector<long> sorted = doubled;
    std::sort(sorted.rbegin(), sorted.rend());
    const long max_sum = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(m), 0L);

    // ways[j][s]: number of j-subsets with doubled rank sum s.
    std::vector<std::vector<double>> ways(m + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t i = 0; i < doubled.size(); ++i) {
        const long r = doubled[i];
        for (std::size_t j = std::min(i + 1, m); j >= 1; --j) {
            auto& dst = ways[j];
            const auto& src = ways[j - 1];
            for (long s = max_sum - r; s >= 0; --s) {
                if (src[static_cast<std::size_t>(s)] != 0.0) dst[static_cast<std::size_t>(s + r)] += src[static_cast<std::size_t>(s)];
            }
        }
    }
    const auto& dist = ways[m];
    const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
    double tail = 0.0;
    if (small_is_a) {
        // P(W_a >= observed)
        for (long s = observed; s <= max_sum; ++s) tail += dist[static_cast<std::size_t>(s)];
    } else {
        // W_a = total_rank - W_b, so W_a >= obs_a  <=>  W_b <= obs_b.
        for (long s = 0; s <= std::min(observed, max_sum); ++s) tail += dist[static_cast<std::size_t>(s)];
    }
    return tail / total;
}

double rank_sum_p_normal(std::span<const double> a, std::span<const double> b) {
    require_nonempty(a, b);
    const Pooled p = pool(a, b);
    const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size()), n = n1 + n2;
    const double w = std::accumulate(p.ranks_a.begin(), p.ranks_a.end(), 0.0);
    const double u = w - n1 * (n1 + 1.0) / 2.0;
    const double mu = n1 * n2 / 2.0;
    const double tie_correction = n > 1.0 ? p.tie_term / (n * (n - 1.0)) : 0.0;
    const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_correction);
    if (!(var > 0.0)) return 1.0;  // every value tied: no evidence for the alternative
    const double z = (u - mu - 0.5) / std::sqrt(var);
    return 0.5 * std::erfc(z / std::sqrt(2.0));
}

RankSumResult wilcoxon_rank_sum_one_tailed(std::span<const double> a, std::span<const double> b,
                                           std::size_t exact_threshold) {
    require_nonempty(a, b);
    const Pooled p = pool(a, b);
    RankSumResult r;
    r.rank_sum = std::accumulate(p.ranks_a.begin(), p.ranks_a.end(), 0.0);
    const double n1 = static_cast<double>(a.size());
    r.u = r.rank_sum - n1 * (n1 + 1.0) / 2.0;
    r.exact = std::min(a.size(), b.size()) <= exact_threshold;
    r.p_value = r.exact ? rank_sum_p_exact(a, b) : rank_sum_p_normal(a, b);
    return r;
}

}  // namespace vita
