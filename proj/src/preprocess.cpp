#include "vita/preprocess.hpp"

#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "vita/error.hpp"
#include "vita/vit.hpp"

namespace vita {

PreprocessConfig PreprocessConfig::for_model(const VitConfig& config) {
    PreprocessConfig cfg;
    cfg.crop = config.image_size;
    cfg.resize_shorter = static_cast<std::size_t>(std::lround(static_cast<double>(config.image_size) * 256.0 / 224.0));
    return cfg;
}

namespace {

Tensor preprocess_mat(const cv::Mat& rgb, const PreprocessConfig& cfg) {
    if (cfg.crop == 0 || cfg.resize_shorter < cfg.crop) throw UsageError("preprocess: resize must be >= crop");
    const int w = rgb.cols, h = rgb.rows;
    if (w <= 0 || h <= 0) throw LoadError("empty image");
    const double s = static_cast<double>(cfg.resize_shorter) / static_cast<double>(std::min(w, h));
    const int nw = w <= h ? static_cast<int>(cfg.resize_shorter) : static_cast<int>(std::lround(w * s));
    const int nh = h <= w ? static_cast<int>(cfg.resize_shorter) : static_cast<int>(std::lround(h * s));
    cv::Mat resized;
    if (nw == w && nh == h) {
        resized = rgb;
    } else {
        cv::resize(rgb, resized, cv::Size(nw, nh), 0, 0, cv::INTER_LINEAR);
    }
    const int c = static_cast<int>(cfg.crop);
    const int x0 = (nw - c) / 2, y0 = (nh - c) / 2;
    const cv::Mat crop = resized(cv::Rect(x0, y0, c, c));

    Tensor out({3, cfg.crop, cfg.crop});
    for (int y = 0; y < c; ++y) {
        const auto* px = crop.ptr<cv::Vec3b>(y);
        for (int x = 0; x < c; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                const double v = px[x][ch] / 255.0;
                out[(static_cast<std::size_t>(ch) * cfg.crop + static_cast<std::size_t>(y)) * cfg.crop +
                    static_cast<std::size_t>(x)] = (v - cfg.mean[static_cast<std::size_t>(ch)]) /
                                                   cfg.std[static_cast<std::size_t>(ch)];
            }
    }
    return out;
}

}  // namespace

Tensor preprocess_rgb(std::span<const std::uint8_t> rgb, std::size_t width, std::size_t height,
                      const PreprocessConfig& cfg) {
    if (rgb.size() != width * height * 3) throw ShapeError("preprocess_rgb: buffer size does not match dimensions");
    const cv::Mat view(static_cast<int>(height), static_cast<int>(width), CV_8UC3,
                       const_cast<std::uint8_t*>(rgb.data()));
    return preprocess_mat(view, cfg);
}

Tensor preprocess_image(const std::filesystem::path& path, const PreprocessConfig& cfg) {
    if (!std::filesystem::exists(path)) throw LoadError("image not found: " + path.string());
    const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw LoadError("cannot decode image: " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return preprocess_mat(rgb, cfg);
}

Heatmap load_ground_truth(const std::filesystem::path& path, std::size_t resolution) {
    Heatmap map;
    if (path.extension() == ".f32") {
        auto sidecar = path;
        sidecar.replace_extension(".json");
        map = read_raw_f32(path, sidecar);
    } else {
        if (!std::filesystem::exists(path)) throw LoadError("heatmap not found: " + path.string());
        const cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE | cv::IMREAD_ANYDEPTH);
        if (gray.empty()) throw LoadError("cannot decode heatmap: " + path.string());
        cv::Mat as_double;
        gray.convertTo(as_double, CV_64F);
        map = Heatmap(static_cast<std::size_t>(gray.cols), static_cast<std::size_t>(gray.rows));
        for (int y = 0; y < gray.rows; ++y)
            for (int x = 0; x < gray.cols; ++x)
                map.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = as_double.at<double>(y, x);
    }
    for (double v : map.values)
        if (!std::isfinite(v)) throw LoadError("non-finite value in heatmap " + path.string());
    return resize_bilinear(minmax_normalize(std::move(map)), resolution, resolution);
}

}  // namespace vita
