#include "vita/cam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vita/error.hpp"
#include "vita/vit.hpp"

namespace vita {

Heatmap::Heatmap(std::size_t w, std::size_t h, std::vector<double> v) : width(w), height(h), values(std::move(v)) {
    if (values.size() != w * h) throw ShapeError("heatmap size does not match its dimensions");
}

Heatmap minmax_normalize(Heatmap map) {
    if (map.values.empty()) return map;
    const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
    const double min = *lo, max = *hi;
    if (!(max > min)) {
        std::fill(map.values.begin(), map.values.end(), 0.0);
        return map;
    }
    const double range = max - min;
    // (max - min) / range is exactly 1 in IEEE arithmetic.
    for (double& v : map.values) v = (v - min) / range;
    return map;
}

SpatialActivation tokens_to_grid(const Tensor& activation, const Tensor& gradient, std::size_t grid) {
    if (activation.rank() != 2) throw ShapeError("tokens_to_grid expects [tokens x C]");
    if (activation.rows() != 1 + grid * grid) {
        throw ShapeError("token count " + std::to_string(activation.rows()) + " does not match a " +
                         std::to_string(grid) + "x" + std::to_string(grid) + " grid plus CLS");
    }
    if (gradient.shape() != activation.shape()) throw ShapeError("gradient shape differs from activation");
    const std::size_t c = activation.cols();
    SpatialActivation sa{grid, c, Tensor({grid, grid, c}), Tensor({grid, grid, c})};
    const std::size_t offset = c;  // skip CLS row
    std::copy(activation.data().begin() + static_cast<std::ptrdiff_t>(offset), activation.data().end(),
              sa.activation.data().begin());
    std::copy(gradient.data().begin() + static_cast<std::ptrdiff_t>(offset), gradient.data().end(),
              sa.gradient.data().begin());
    return sa;
}

SpatialActivation tokens_to_grid(const CaptureBundle& capture, const VitConfig& config) {
    return tokens_to_grid(capture.activation(), capture.gradient(), config.grid());
}

std::string to_string(CamMethod method) {
    return method == CamMethod::GradCam ? "gradcam" : "gradcampp";
}

CamMethod parse_cam_method(const std::string& text) {
    if (text == "gradcam") return CamMethod::GradCam;
    if (text == "gradcampp" || text == "gradcam++") return CamMethod::GradCamPlusPlus;
    throw ParseError("unknown CAM method \"" + text + "\" (expected gradcam or gradcampp)");
}

namespace {

Heatmap weighted_map(const SpatialActivation& sa, const std::vector<double>& weights) {
    const std::size_t cells = sa.grid * sa.grid, c = sa.channels;
    Heatmap map(sa.grid, sa.grid);
    for (std::size_t p = 0; p < cells; ++p) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) acc += weights[ch] * sa.activation[p * c + ch];
        map.values[p] = std::max(acc, 0.0);
    }
    return minmax_normalize(std::move(map));
}

}  // namespace

Heatmap grad_cam(const SpatialActivation& sa) {
    const std::size_t cells = sa.grid * sa.grid, c = sa.channels;
    std::vector<double> weights(c, 0.0);
    for (std::size_t p = 0; p < cells; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) weights[ch] += sa.gradient[p * c + ch];
    for (double& w : weights) w /= static_cast<double>(cells);
    return weighted_map(sa, weights);
}

Heatmap grad_cam_pp(const SpatialActivation& sa) {
    const std::size_t cells = sa.grid * sa.grid, c = sa.channels;
    std::vector<double> activation_sum(c, 0.0);
    for (std::size_t p = 0; p < cells; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) activation_sum[ch] += sa.activation[p * c + ch];

    std::vector<double> weights(c, 0.0);
    for (std::size_t p = 0; p < cells; ++p) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double g = sa.gradient[p * c + ch];
            const double g2 = g * g;
            const double denom = 2.0 * g2 + activation_sum[ch] * g2 * g;
            const double a = denom != 0.0 ? g2 / denom : 0.0;
            weights[ch] += a * std::max(g, 0.0);
        }
    }
    return weighted_map(sa, weights);
}

Heatmap compute_cam(CamMethod method, const SpatialActivation& sa) {
    return method == CamMethod::GradCam ? grad_cam(sa) : grad_cam_pp(sa);
}

Heatmap resize_bilinear(const Heatmap& map, std::size_t width, std::size_t height) {
    if (map.width == 0 || map.height == 0) throw ShapeError("cannot resize an empty heatmap");
    if (width == 0 || height == 0) throw ShapeError("resize target must be non-empty");
    struct Tap {
        std::size_t i0, i1;
        double f;
    };
    auto taps = [](std::size_t src, std::size_t dst) {
        std::vector<Tap> out(dst);
        const double ratio = static_cast<double>(src) / static_cast<double>(dst);
        for (std::size_t i = 0; i < dst; ++i) {
            double s = (static_cast<double>(i) + 0.5) * ratio - 0.5;
            s = std::clamp(s, 0.0, static_cast<double>(src - 1));
            const auto i0 = static_cast<std::size_t>(std::floor(s));
            const std::size_t i1 = std::min(i0 + 1, src - 1);
            out[i] = {i0, i1, s - static_cast<double>(i0)};
        }
        return out;
    };
    const auto xs = taps(map.width, width);
    const auto ys = taps(map.height, height);
    Heatmap out(width, height);
    for (std::size_t y = 0; y < height; ++y) {
        const auto& ty = ys[y];
        for (std::size_t x = 0; x < width; ++x) {
            const auto& tx = xs[x];
            const double top = (1.0 - tx.f) * map.at(ty.i0, tx.i0) + tx.f * map.at(ty.i0, tx.i1);
            const double bottom = (1.0 - tx.f) * map.at(ty.i1, tx.i0) + tx.f * map.at(ty.i1, tx.i1);
            out.at(y, x) = (1.0 - ty.f) * top + ty.f * bottom;
        }
    }
    return out;
}

Heatmap upsample_bilinear(const Heatmap& map, std::size_t width, std::size_t height, bool renormalize) {
    if (width < map.width || height < map.height) throw ShapeError("upsample target smaller than the source map");
    Heatmap out = resize_bilinear(map, width, height);
    return renormalize ? minmax_normalize(std::move(out)) : out;
}

void write_pgm(const std::filesystem::path& path, const Heatmap& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot open " + path.string() + " for writing");
    out << "P5\n" << map.width << ' ' << map.height << "\n255\n";
    std::vector<unsigned char> bytes(map.values.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(map.values[i], 0.0, 1.0) * 255.0));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw LoadError("write failed for " + path.string());
}

void write_raw_f32(const std::filesystem::path& path, const std::filesystem::path& sidecar, const Heatmap& map,
                   const nlohmann::json& extra) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot open " + path.string() + " for writing");
    std::vector<float> raw(map.values.begin(), map.values.end());
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!out) throw LoadError("write failed for " + path.string());

    nlohmann::json meta = extra;
    meta["width"] = map.width;
    meta["height"] = map.height;
    std::ofstream side(sidecar);
    if (!side) throw LoadError("cannot open " + sidecar.string() + " for writing");
    side << meta.dump(2) << '\n';
}

Heatmap read_raw_f32(const std::filesystem::path& path, const std::filesystem::path& sidecar) {
    std::ifstream meta(sidecar);
    if (!meta) throw LoadError("missing sidecar " + sidecar.string());
    std::size_t w = 0, h = 0;
    try {
        const auto j = nlohmann::json::parse(meta);
        w = j.at("width").get<std::size_t>();
        h = j.at("height").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("bad sidecar " + sidecar.string() + ": " + e.what());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    std::vector<float> raw(w * h);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)))) {
        throw LoadError("truncated raw heatmap " + path.string());
    }
    return Heatmap(w, h, std::vector<double>(raw.begin(), raw.end()));
}

}  // namespace vita
