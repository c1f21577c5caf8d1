#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>

#include "vita/cam.hpp"
#include "vita/tensor.hpp"

namespace vita {

struct VitConfig;

// Standard ImageNet evaluation transform: resize the shorter side, center
// crop, scale to [0, 1], normalize per channel.
struct PreprocessConfig {
    std::size_t resize_shorter = 256;
    std::size_t crop = 224;
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};

    // Keeps the 256/224 resize-to-crop ratio for non-224 models.
    static PreprocessConfig for_model(const VitConfig& config);
};

// Interleaved 8-bit RGB, row-major. Returns [3 x crop x crop].
Tensor preprocess_rgb(std::span<const std::uint8_t> rgb, std::size_t width, std::size_t height,
                      const PreprocessConfig& cfg);

// Throws LoadError for missing or undecodable files.
Tensor preprocess_image(const std::filesystem::path& path, const PreprocessConfig& cfg);

// Grayscale image (any format OpenCV decodes) or raw f32 with a ".json"
// sidecar next to it. Min-max normalized, then bilinearly resized to
// resolution x resolution.
Heatmap load_ground_truth(const std::filesystem::path& path, std::size_t resolution);

}  // namespace vita
