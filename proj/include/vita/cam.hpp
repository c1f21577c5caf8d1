#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vita/tensor.hpp"

namespace vita {

class CaptureBundle;
struct VitConfig;

// Single-channel relevance map, row-major.
struct Heatmap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> values;

    Heatmap() = default;
    Heatmap(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), values(w * h, fill) {}
    Heatmap(std::size_t w, std::size_t h, std::vector<double> v);

    double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
};

// Min-max scales to [0, 1]. A constant map becomes all zeros.
Heatmap minmax_normalize(Heatmap map);

// Patch-token activations laid out on the g x g grid, CLS dropped.
struct SpatialActivation {
    std::size_t grid = 0;
    std::size_t channels = 0;
    Tensor activation;  // [g x g x C]
    Tensor gradient;    // [g x g x C]
};

// Tokens 1..g^2 map to grid cells in raster order.
SpatialActivation tokens_to_grid(const Tensor& activation, const Tensor& gradient, std::size_t grid);
SpatialActivation tokens_to_grid(const CaptureBundle& capture, const VitConfig& config);

enum class CamMethod { GradCam, GradCamPlusPlus };

std::string to_string(CamMethod method);
CamMethod parse_cam_method(const std::string& text);

// Channel weights are the spatial mean of the gradient.
Heatmap grad_cam(const SpatialActivation& sa);

// Channel weights from the closed-form higher-order expression
//   a = g^2 / (2 g^2 + sum_ab(A_ab) g^3),   w_c = sum_ij a_ij relu(g_ij)
// with a := 0 where the denominator vanishes.
Heatmap grad_cam_pp(const SpatialActivation& sa);

Heatmap compute_cam(CamMethod method, const SpatialActivation& sa);

// Bilinear resampling with pixel-center alignment (align_corners = false):
// source coordinate = (dst + 0.5) * src_size / dst_size - 0.5, clamped.
Heatmap resize_bilinear(const Heatmap& map, std::size_t width, std::size_t height);

// resize_bilinear to a size no smaller than the input, optionally followed by
// min-max renormalization.
Heatmap upsample_bilinear(const Heatmap& map, std::size_t width, std::size_t height, bool renormalize = true);

// 8-bit binary PGM (P5); values are clamped to [0, 1] and rounded.
void write_pgm(const std::filesystem::path& path, const Heatmap& map);

// Raw little-endian f32 values plus a JSON sidecar {"width", "height"} merged
// with `extra`.
void write_raw_f32(const std::filesystem::path& path, const std::filesystem::path& sidecar, const Heatmap& map,
                   const nlohmann::json& extra = nlohmann::json::object());
Heatmap read_raw_f32(const std::filesystem::path& path, const std::filesystem::path& sidecar);

}  // namespace vita
