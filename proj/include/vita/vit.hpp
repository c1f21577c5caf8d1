#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vita/astro.hpp"
#include "vita/container.hpp"
#include "vita/tape.hpp"
#include "vita/tensor.hpp"

namespace vita {

struct VitConfig {
    std::size_t image_size = 224;
    std::size_t patch_size = 16;
    std::size_t embed_dim = 768;
    std::size_t num_heads = 12;
    std::size_t num_blocks = 12;
    double mlp_ratio = 4.0;
    std::size_t num_classes = 1000;
    double ln_eps = 1e-6;

    static VitConfig vit_base_patch16_224() { return {}; }

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t tokens() const { return 1 + grid() * grid(); }
    std::size_t head_dim() const { return embed_dim / num_heads; }
    std::size_t mlp_dim() const;

    void validate() const;
};

// Preset name ("vit_base_patch16_224") or path to a JSON file with VitConfig fields.
VitConfig resolve_config(const std::string& name_or_path);
VitConfig config_from_json(const std::string& json_text);
std::string config_to_json(const VitConfig& config);

struct BlockWeights {
    Tensor norm1_w, norm1_b;
    Tensor qkv_w, qkv_b;    // [3D x D], [3D]
    Tensor proj_w, proj_b;  // attention output projection [D x D], [D]
    Tensor norm2_w, norm2_b;
    Tensor fc1_w, fc1_b;    // [H x D], [H]
    Tensor fc2_w, fc2_b;    // [D x H], [D]
};

struct VitWeights {
    Tensor patch_w;    // [D x 3 x P x P]
    Tensor patch_b;    // [D]
    Tensor cls_token;  // [1 x 1 x D]
    Tensor pos_embed;  // [1 x T x D]
    std::vector<BlockWeights> blocks;
    Tensor norm_w, norm_b;
    Tensor head_w, head_b;  // [C x D], [C]
};

// Canonical tensor names and expected shapes, in file order.
std::vector<std::pair<std::string, Shape>> expected_tensors(const VitConfig& config);

VitWeights load_weights(const std::filesystem::path& path, const VitConfig& config);
VitWeights weights_from_entries(std::vector<NamedTensor> entries, const VitConfig& config);
std::vector<NamedTensor> weights_to_entries(const VitWeights& weights, const VitConfig& config);

// Deterministic random weights for tests and demos. Linear weights are drawn
// from N(0, scale^2); layer-norm gains are near 1.
VitWeights random_weights(const VitConfig& config, std::uint64_t seed, double scale = 0.2);

// image is [3 x H x W], already normalized. Returns [tokens x D].
Tensor patchify_embed(const Tensor& image, const VitWeights& weights, const VitConfig& config);

struct ForwardOptions {
    std::optional<AstroParams> astro;
    // Encoder block whose input is captured for CAM. Defaults to the last.
    std::optional<std::size_t> capture_block;
};

// Logits plus the captured residual-stream activation and, after backward(),
// its gradient. Owns the tape for the suffix from the capture point to the
// logits, so it is not copyable.
class CaptureBundle {
public:
    CaptureBundle(std::unique_ptr<Tape> tape, Var activation, Var logits, std::optional<AstroTrace> trace);

    const Tensor& logits() const;
    const Tensor& activation() const;
    // Throws UsageError until backward() has run.
    const Tensor& gradient() const;
    bool has_gradient() const { return !gradient_.empty(); }
    const std::optional<AstroTrace>& astro_trace() const { return trace_; }

    // Fills gradient() with d logits[class_index] / d activation.
    void backward(std::size_t class_index);

private:
    std::unique_ptr<Tape> tape_;
    Var activation_;
    Var logits_;
    Tensor gradient_;
    std::optional<AstroTrace> trace_;
};

class VitModel {
public:
    VitModel(VitConfig config, VitWeights weights);

    const VitConfig& config() const { return config_; }
    const VitWeights& weights() const { return weights_; }

    // Taped forward from the capture block onward.
    CaptureBundle forward(const Tensor& image, const ForwardOptions& options = {}) const;

    // Untaped logits of the unmodulated model.
    Tensor logits(const Tensor& image) const;

    // Untaped logits computed from a residual-stream value entering block
    // `from_block`. Used for finite-difference checks.
    Tensor logits_from(const Tensor& residual, std::size_t from_block) const;

    // argmax of the unmodulated logits, lowest index on ties.
    std::size_t predict(const Tensor& image) const;

    // Residual stream entering `block` (tokens x D) for the given image.
    Tensor residual_before(const Tensor& image, std::size_t block,
                           const std::optional<AstroParams>& astro = std::nullopt,
                           AstroTrace* trace = nullptr) const;

private:
    Tensor block_forward(const Tensor& x, std::size_t block, const std::optional<AstroParams>& astro,
                         AstroTrace* trace) const;
    Tensor head_forward(const Tensor& x) const;

    VitConfig config_;
    VitWeights weights_;
};

}  // namespace vita
