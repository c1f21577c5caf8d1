#include "vita/vit.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vita/error.hpp"

namespace vita {

std::size_t VitConfig::mlp_dim() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(embed_dim) * mlp_ratio));
}

void VitConfig::validate() const {
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
        throw UsageError("config: image_size must be a positive multiple of patch_size");
    }
    if (num_heads == 0 || embed_dim == 0 || embed_dim % num_heads != 0) {
        throw UsageError("config: embed_dim must be a positive multiple of num_heads");
    }
    if (num_blocks < 2) throw UsageError("config: num_blocks must be >= 2");
    if (num_classes == 0) throw UsageError("config: num_classes must be positive");
    if (!(mlp_ratio > 0.0) || mlp_dim() == 0) throw UsageError("config: mlp_ratio must be positive");
    if (!(ln_eps > 0.0)) throw UsageError("config: ln_eps must be positive");
}

VitConfig config_from_json(const std::string& json_text) {
    VitConfig c;
    try {
        const auto j = nlohmann::json::parse(json_text);
        c.image_size = j.value("image_size", c.image_size);
        c.patch_size = j.value("patch_size", c.patch_size);
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        c.num_heads = j.value("num_heads", c.num_heads);
        c.num_blocks = j.value("num_blocks", c.num_blocks);
        c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
        c.num_classes = j.value("num_classes", c.num_classes);
        c.ln_eps = j.value("ln_eps", c.ln_eps);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string config_to_json(const VitConfig& c) {
    nlohmann::json j{{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
                     {"num_heads", c.num_heads},   {"num_blocks", c.num_blocks}, {"mlp_ratio", c.mlp_ratio},
                     {"num_classes", c.num_classes}, {"ln_eps", c.ln_eps}};
    return j.dump(2);
}

VitConfig resolve_config(const std::string& name_or_path) {
    if (name_or_path == "vit_base_patch16_224" || name_or_path == "vit_b16") return VitConfig::vit_base_patch16_224();
    std::ifstream in(name_or_path);
    if (!in) throw ParseError("unknown model preset or unreadable config file: " + name_or_path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

std::vector<std::pair<std::string, Shape>> expected_tensors(const VitConfig& c) {
    const std::size_t d = c.embed_dim, h = c.mlp_dim(), p = c.patch_size;
    std::vector<std::pair<std::string, Shape>> out{
        {"patch_embed.proj.weight", {d, 3, p, p}},
        {"patch_embed.proj.bias", {d}},
        {"cls_token", {1, 1, d}},
        {"pos_embed", {1, c.tokens(), d}},
    };
    for (std::size_t b = 0; b < c.num_blocks; ++b) {
        const std::string pre = "blocks." + std::to_string(b) + ".";
        out.insert(out.end(), {
                                  {pre + "norm1.weight", {d}},
                                  {pre + "norm1.bias", {d}},
                                  {pre + "attn.qkv.weight", {3 * d, d}},
                                  {pre + "attn.qkv.bias", {3 * d}},
                                  {pre + "attn.proj.weight", {d, d}},
                                  {pre + "attn.proj.bias", {d}},
                                  {pre + "norm2.weight", {d}},
                                  {pre + "norm2.bias", {d}},
                                  {pre + "mlp.fc1.weight", {h, d}},
                                  {pre + "mlp.fc1.bias", {h}},
                                  {pre + "mlp.fc2.weight", {d, h}},
                                  {pre + "mlp.fc2.bias", {d}},
                              });
    }
    out.insert(out.end(), {
                              {"norm.weight", {d}},
                              {"norm.bias", {d}},
                              {"head.weight", {c.num_classes, d}},
                              {"head.bias", {c.num_classes}},
                          });
    return out;
}

namespace {

// Visits every weight tensor in canonical order.
template <typename Weights, typename Fn>
void for_each_tensor(Weights& w, const VitConfig& c, Fn&& fn) {
    auto names = expected_tensors(c);
    std::size_t i = 0;
    auto next = [&](auto& t) {
        fn(names[i].first, names[i].second, t);
        ++i;
    };
    next(w.patch_w);
    next(w.patch_b);
    next(w.cls_token);
    next(w.pos_embed);
    for (auto& b : w.blocks) {
        next(b.norm1_w);
        next(b.norm1_b);
        next(b.qkv_w);
        next(b.qkv_b);
        next(b.proj_w);
        next(b.proj_b);
        next(b.norm2_w);
        next(b.norm2_b);
        next(b.fc1_w);
        next(b.fc1_b);
        next(b.fc2_w);
        next(b.fc2_b);
    }
    next(w.norm_w);
    next(w.norm_b);
    next(w.head_w);
    next(w.head_b);
}

}  // namespace

VitWeights weights_from_entries(std::vector<NamedTensor> entries, const VitConfig& config) {
    config.validate();
    std::map<std::string, Tensor*> by_name;
    for (auto& e : entries) by_name[e.name] = &e.tensor;

    VitWeights w;
    w.blocks.resize(config.num_blocks);
    for_each_tensor(w, config, [&](const std::string& name, const Shape& shape, Tensor& dst) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw LoadError("missing tensor \"" + name + "\"");
        if (it->second->shape() != shape) {
            throw LoadError("shape mismatch for \"" + name + "\": file has " + shape_str(it->second->shape()) +
                            ", expected " + shape_str(shape));
        }
        if (!it->second->all_finite()) throw LoadError("non-finite values in \"" + name + "\"");
        dst = std::move(*it->second);
    });
    return w;
}

VitWeights load_weights(const std::filesystem::path& path, const VitConfig& config) {
    return weights_from_entries(read_container(path), config);
}

std::vector<NamedTensor> weights_to_entries(const VitWeights& weights, const VitConfig& config) {
    std::vector<NamedTensor> out;
    for_each_tensor(weights, config, [&](const std::string& name, const Shape& shape, const Tensor& t) {
        if (t.shape() != shape) throw ShapeError("weights tensor \"" + name + "\" has wrong shape");
        out.push_back({name, t});
    });
    return out;
}

VitWeights random_weights(const VitConfig& config, std::uint64_t seed, double scale) {
    config.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    VitWeights w;
    w.blocks.resize(config.num_blocks);
    for_each_tensor(w, config, [&](const std::string& name, const Shape& shape, Tensor& dst) {
        dst = Tensor(shape);
        const bool is_norm_gain = name.ends_with("norm1.weight") || name.ends_with("norm2.weight") ||
                                  name == "norm.weight";
        for (double& v : dst.data()) v = is_norm_gain ? 1.0 + 0.1 * normal(rng) : scale * normal(rng);
    });
    return w;
}

Tensor patchify_embed(const Tensor& image, const VitWeights& weights, const VitConfig& config) {
    const std::size_t s = config.image_size, p = config.patch_size, g = config.grid(), d = config.embed_dim;
    if (image.shape() != Shape{3, s, s}) {
        throw ShapeError("image must be " + shape_str({3, s, s}) + ", got " + shape_str(image.shape()));
    }
    const std::size_t patch_len = 3 * p * p;
    Tensor patches({g * g, patch_len});
    for (std::size_t gy = 0; gy < g; ++gy) {
        for (std::size_t gx = 0; gx < g; ++gx) {
            double* dst = patches.row(gy * g + gx).data();
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t ky = 0; ky < p; ++ky)
                    for (std::size_t kx = 0; kx < p; ++kx)
                        *dst++ = image[(c * s + gy * p + ky) * s + gx * p + kx];
        }
    }
    const Tensor kernel = weights.patch_w.reshaped({d, patch_len});
    const Tensor projected = linear(patches, kernel, weights.patch_b);

    Tensor tokens({config.tokens(), d});
    for (std::size_t j = 0; j < d; ++j) tokens.at(0, j) = weights.cls_token[j] + weights.pos_embed[j];
    for (std::size_t t = 1; t < config.tokens(); ++t)
        for (std::size_t j = 0; j < d; ++j) tokens.at(t, j) = projected.at(t - 1, j) + weights.pos_embed[t * d + j];
    return tokens;
}

CaptureBundle::CaptureBundle(std::unique_ptr<Tape> tape, Var activation, Var logits, std::optional<AstroTrace> trace)
    : tape_(std::move(tape)), activation_(activation), logits_(logits), trace_(std::move(trace)) {}

const Tensor& CaptureBundle::logits() const { return tape_->value(logits_); }
const Tensor& CaptureBundle::activation() const { return tape_->value(activation_); }

const Tensor& CaptureBundle::gradient() const {
    if (gradient_.empty()) throw UsageError("gradient requested before backward()");
    return gradient_;
}

void CaptureBundle::backward(std::size_t class_index) {
    if (class_index >= logits().size()) throw UsageError("class index " + std::to_string(class_index) + " out of range");
    gradient_ = tape_->gradient(logits_, class_index, activation_);
}

VitModel::VitModel(VitConfig config, VitWeights weights) : config_(config), weights_(std::move(weights)) {
    config_.validate();
    if (weights_.blocks.size() != config_.num_blocks) throw ShapeError("weights: block count does not match config");
    for_each_tensor(weights_, config_, [](const std::string& name, const Shape& shape, const Tensor& t) {
        if (t.shape() != shape) throw ShapeError("weights tensor \"" + name + "\" has wrong shape");
    });
}

namespace {

Tensor attention_heads(const Tensor& h, const BlockWeights& bw, const VitConfig& c) {
    const std::size_t d = c.embed_dim, hd = c.head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    const Tensor qkv = linear(h, bw.qkv_w, bw.qkv_b);
    std::vector<Tensor> heads;
    heads.reserve(c.num_heads);
    for (std::size_t i = 0; i < c.num_heads; ++i) {
        const Tensor q = slice_cols(qkv, i * hd, (i + 1) * hd);
        const Tensor k = slice_cols(qkv, d + i * hd, d + (i + 1) * hd);
        const Tensor v = slice_cols(qkv, 2 * d + i * hd, 2 * d + (i + 1) * hd);
        const Tensor p = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt));
        heads.push_back(matmul(p, v));
    }
    return concat_cols(heads);
}

Var taped_block(Tape& tape, Var x, const BlockWeights& bw, const VitConfig& c) {
    const std::size_t d = c.embed_dim, hd = c.head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    const Var h = taped::layer_norm(tape, x, bw.norm1_w, bw.norm1_b, c.ln_eps);
    const Var qkv = taped::linear(tape, h, bw.qkv_w, bw.qkv_b);
    std::vector<Var> heads;
    heads.reserve(c.num_heads);
    for (std::size_t i = 0; i < c.num_heads; ++i) {
        const Var q = taped::slice_cols(tape, qkv, i * hd, (i + 1) * hd);
        const Var k = taped::slice_cols(tape, qkv, d + i * hd, d + (i + 1) * hd);
        const Var v = taped::slice_cols(tape, qkv, 2 * d + i * hd, 2 * d + (i + 1) * hd);
        const Var scores = taped::scale(tape, taped::matmul(tape, q, taped::transpose(tape, k)), inv_sqrt);
        heads.push_back(taped::matmul(tape, taped::softmax_rows(tape, scores), v));
    }
    const Var attn = taped::linear(tape, taped::concat_cols(tape, heads), bw.proj_w, bw.proj_b);
    const Var x1 = taped::add(tape, x, attn);
    const Var h2 = taped::layer_norm(tape, x1, bw.norm2_w, bw.norm2_b, c.ln_eps);
    const Var mlp = taped::linear(tape, taped::gelu(tape, taped::linear(tape, h2, bw.fc1_w, bw.fc1_b)), bw.fc2_w,
                                  bw.fc2_b);
    return taped::add(tape, x1, mlp);
}

}  // namespace

Tensor VitModel::block_forward(const Tensor& x, std::size_t block, const std::optional<AstroParams>& astro,
                               AstroTrace* trace) const {
    const BlockWeights& bw = weights_.blocks[block];
    const Tensor heads = attention_heads(layer_norm(x, bw.norm1_w, bw.norm1_b, config_.ln_eps), bw, config_);
    Tensor attn;
    if (block == 0 && astro) {
        AstroResult r = astro_linear_forward(heads, bw.proj_w, bw.proj_b, *astro);
        attn = std::move(r.output);
        if (trace) *trace = std::move(r.trace);
    } else {
        attn = linear(heads, bw.proj_w, bw.proj_b);
    }
    const Tensor x1 = add(x, attn);
    const Tensor h2 = layer_norm(x1, bw.norm2_w, bw.norm2_b, config_.ln_eps);
    return add(x1, linear(gelu(linear(h2, bw.fc1_w, bw.fc1_b)), bw.fc2_w, bw.fc2_b));
}

Tensor VitModel::head_forward(const Tensor& x) const {
    const Tensor normed = layer_norm(x, weights_.norm_w, weights_.norm_b, config_.ln_eps);
    Tensor cls({1, config_.embed_dim});
    std::copy(normed.row(0).begin(), normed.row(0).end(), cls.row(0).begin());
    return linear(cls, weights_.head_w, weights_.head_b).reshaped({config_.num_classes});
}

Tensor VitModel::residual_before(const Tensor& image, std::size_t block, const std::optional<AstroParams>& astro,
                                 AstroTrace* trace) const {
    if (block > config_.num_blocks) throw UsageError("block index out of range");
    Tensor x = patchify_embed(image, weights_, config_);
    for (std::size_t b = 0; b < block; ++b) x = block_forward(x, b, astro, trace);
    return x;
}

Tensor VitModel::logits_from(const Tensor& residual, std::size_t from_block) const {
    if (residual.shape() != Shape{config_.tokens(), config_.embed_dim}) {
        throw ShapeError("residual must be " + shape_str({config_.tokens(), config_.embed_dim}));
    }
    Tensor x = residual;
    for (std::size_t b = from_block; b < config_.num_blocks; ++b) x = block_forward(x, b, std::nullopt, nullptr);
    return head_forward(x);
}

Tensor VitModel::logits(const Tensor& image) const {
    return logits_from(residual_before(image, 0), 0);
}

std::size_t VitModel::predict(const Tensor& image) const { return argmax(logits(image).data()); }

CaptureBundle VitModel::forward(const Tensor& image, const ForwardOptions& options) const {
    const std::size_t capture = options.capture_block.value_or(config_.num_blocks - 1);
    if (capture == 0 || capture >= config_.num_blocks) {
        throw UsageError("capture block must be in [1, num_blocks)");
    }
    std::optional<AstroTrace> trace;
    AstroTrace scratch;
    Tensor residual = residual_before(image, capture, options.astro, options.astro ? &scratch : nullptr);
    if (options.astro) trace = std::move(scratch);

    auto tape = std::make_unique<Tape>();
    const Var activation = tape->leaf(std::move(residual));
    Var x = activation;
    for (std::size_t b = capture; b < config_.num_blocks; ++b) x = taped_block(*tape, x, weights_.blocks[b], config_);
    const Var normed = taped::layer_norm(*tape, x, weights_.norm_w, weights_.norm_b, config_.ln_eps);
    const Var cls = taped::select_row(*tape, normed, 0);
    const Var logits = taped::linear(*tape, cls, weights_.head_w, weights_.head_b);
    return CaptureBundle(std::move(tape), activation, logits, std::move(trace));
}

}  // namespace vita
