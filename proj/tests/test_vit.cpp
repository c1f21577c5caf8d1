#include <doctest.h>

#include <cmath>

#include "support/toy.hpp"
#include "vita/error.hpp"
#include "vita/vit.hpp"

using namespace vita;
using vita::testing::random_image;
using vita::testing::toy_config;
using vita::testing::toy_model;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat dense(const Mat& x, const Tensor& w, const Tensor& b) {
    Mat y(x.size(), std::vector<double>(w.rows(), 0.0));
    for (std::size_t r = 0; r < x.size(); ++r)
        for (std::size_t o = 0; o < w.rows(); ++o) {
            double s = b[o];
            for (std::size_t i = 0; i < w.cols(); ++i) s += x[r][i] * w.at(o, i);
            y[r][o] = s;
        }
    return y;
}

Mat norm(const Mat& x, const Tensor& g, const Tensor& b, double eps) {
    Mat y = x;
    for (auto& row : y) {
        double mu = 0, var = 0;
        for (double v : row) mu += v / row.size();
        for (double v : row) var += (v - mu) * (v - mu) / row.size();
        for (std::size_t i = 0; i < row.size(); ++i) row[i] = (row[i] - mu) / std::sqrt(var + eps) * g[i] + b[i];
    }
    return y;
}

// Loop-by-loop ViT forward over plain nested vectors.
std::vector<double> reference_logits(const VitConfig& c, const VitWeights& w, const Tensor& img) {
    const std::size_t g = c.grid(), p = c.patch_size, d = c.embed_dim, s = c.image_size, T = c.tokens();
    Mat x(T, std::vector<double>(d));
    for (std::size_t j = 0; j < d; ++j) x[0][j] = w.cls_token[j] + w.pos_embed[j];
    for (std::size_t gy = 0; gy < g; ++gy)
        for (std::size_t gx = 0; gx < g; ++gx)
            for (std::size_t o = 0; o < d; ++o) {
                double acc = w.patch_b[o];
                for (std::size_t ch = 0; ch < 3; ++ch)
                    for (std::size_t ky = 0; ky < p; ++ky)
                        for (std::size_t kx = 0; kx < p; ++kx)
                            acc += w.patch_w[((o * 3 + ch) * p + ky) * p + kx] *
                                   img[(ch * s + gy * p + ky) * s + gx * p + kx];
                const std::size_t t = 1 + gy * g + gx;
                x[t][o] = acc + w.pos_embed[t * d + o];
            }

    const std::size_t hd = c.head_dim();
    for (const auto& b : w.blocks) {
        const Mat qkv = dense(norm(x, b.norm1_w, b.norm1_b, c.ln_eps), b.qkv_w, b.qkv_b);
        Mat heads(T, std::vector<double>(d, 0.0));
        for (std::size_t h = 0; h < c.num_heads; ++h)
            for (std::size_t i = 0; i < T; ++i) {
                std::vector<double> sc(T);
                double mx = -1e300;
                for (std::size_t j = 0; j < T; ++j) {
                    double dot = 0;
                    for (std::size_t e = 0; e < hd; ++e) dot += qkv[i][h * hd + e] * qkv[j][d + h * hd + e];
                    sc[j] = dot / std::sqrt(double(hd));
                    mx = std::max(mx, sc[j]);
                }
                double z = 0;
                for (double& v : sc) z += (v = std::exp(v - mx));
                for (std::size_t j = 0; j < T; ++j)
                    for (std::size_t e = 0; e < hd; ++e) heads[i][h * hd + e] += sc[j] / z * qkv[j][2 * d + h * hd + e];
            }
        const Mat attn = dense(heads, b.proj_w, b.proj_b);
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < d; ++j) x[i][j] += attn[i][j];
        Mat hidden = dense(norm(x, b.norm2_w, b.norm2_b, c.ln_eps), b.fc1_w, b.fc1_b);
        for (auto& row : hidden)
            for (double& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
        const Mat mlp = dense(hidden, b.fc2_w, b.fc2_b);
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < d; ++j) x[i][j] += mlp[i][j];
    }
    const Mat cls = norm({x[0]}, w.norm_w, w.norm_b, c.ln_eps);
    return dense(cls, w.head_w, w.head_b)[0];
}

}  // namespace

TEST_CASE("config validation and presets") {
    const VitConfig b16 = resolve_config("vit_base_patch16_224");
    CHECK(b16.tokens() == 197);
    CHECK(b16.grid() == 14);
    CHECK(b16.mlp_dim() == 3072);
    CHECK(b16.head_dim() == 64);
    VitConfig bad = toy_config();
    bad.num_blocks = 1;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = toy_config();
    bad.patch_size = 4;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    const VitConfig rt = config_from_json(config_to_json(toy_config()));
    CHECK(rt.embed_dim == 8);
    CHECK(rt.num_classes == 5);
    CHECK_THROWS_AS(resolve_config("no_such_model"), ParseError);
}

TEST_CASE("patch embedding follows raster order") {
    const VitConfig c = toy_config();
    VitWeights w = random_weights(c, 1);
    // Output channel 0 sums the red channel of its patch; everything else zero.
    w.patch_w = Tensor(w.patch_w.shape());
    for (std::size_t i = 0; i < 9; ++i) w.patch_w[i] = 1.0;
    w.patch_b = Tensor(w.patch_b.shape());
    w.cls_token = Tensor(w.cls_token.shape());
    w.pos_embed = Tensor(w.pos_embed.shape());
    w.cls_token[0] = 42.0;

    Tensor img({3, 9, 9});
    for (std::size_t y = 0; y < 9; ++y)
        for (std::size_t x = 0; x < 9; ++x) img[y * 9 + x] = double(y * 9 + x);
    const Tensor tokens = patchify_embed(img, w, c);
    CHECK(tokens.shape() == Shape{10, 8});
    CHECK(tokens.at(0, 0) == 42.0);
    // Top-left patch: rows 0..2, cols 0..2.
    CHECK(tokens.at(1, 0) == 0 + 1 + 2 + 9 + 10 + 11 + 18 + 19 + 20);
    // Second patch moves right by 3 columns: each of 9 pixels +3.
    CHECK(tokens.at(2, 0) == tokens.at(1, 0) + 27);
    // Fourth patch starts a new patch row: each pixel +27.
    CHECK(tokens.at(4, 0) == tokens.at(1, 0) + 243);
    CHECK(tokens.at(5, 1) == 0.0);
    CHECK_THROWS_AS(patchify_embed(Tensor({3, 8, 8}), w, c), ShapeError);
}

TEST_CASE("forward matches the loop-level oracle") {
    const VitModel model = toy_model();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Tensor img = random_image(model.config(), seed);
        const auto ref = reference_logits(model.config(), model.weights(), img);
        const Tensor got = model.logits(img);
        REQUIRE(got.size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got[i] - ref[i]) < 1e-10);

        const CaptureBundle cap = model.forward(img);
        CHECK(cap.logits().shape() == Shape{1, 5});
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(cap.logits()[i] - got[i]) < 1e-12);
    }
}

TEST_CASE("astro identity settings reproduce the plain model") {
    const VitModel model = toy_model();
    const Tensor img = random_image(model.config(), 3);
    const Tensor plain = model.forward(img).logits();
    const Tensor k0 = model.forward(img, {AstroParams{0, 2, 0.0, 1.5, 0.05}, std::nullopt}).logits();
    CHECK(k0 == plain);
    const Tensor ones = model.forward(img, {AstroParams{6, 1, 0.0, 1.0, 1.0}, std::nullopt}).logits();
    for (std::size_t i = 0; i < plain.size(); ++i) CHECK(std::abs(ones[i] - plain[i]) <= 1e-12 * std::max(1.0, std::abs(plain[i])));

    const auto modulated = model.forward(img, {AstroParams{6, 3, -0.5, 1.5, 0.05}, std::nullopt});
    REQUIRE(modulated.astro_trace().has_value());
    CHECK(modulated.astro_trace()->steps.size() == 7);
    CHECK_FALSE(modulated.logits() == plain);
}

TEST_CASE("predict breaks ties toward the lowest class") {
    const VitConfig c = toy_config();
    VitWeights w = random_weights(c, 2);
    w.head_w = Tensor(w.head_w.shape());
    w.head_b = Tensor::vector({0.0, 3.0, 1.0, 3.0, 3.0});
    const VitModel model(c, std::move(w));
    CHECK(model.predict(random_image(c, 1)) == 1);
}

TEST_CASE("capture gradient matches central finite differences") {
    const VitModel model = toy_model(11, 0.3);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const Tensor img = random_image(model.config(), 20 + seed);
        CaptureBundle cap = model.forward(img);
        const std::size_t cls = model.predict(img);
        cap.backward(cls);
        const Tensor residual = cap.activation();
        const Tensor& grad = cap.gradient();
        double worst = 0.0;
        std::size_t checked = 0;
        for (std::size_t i = 0; i < residual.size(); ++i) {
            if (std::abs(grad[i]) <= 1e-6) continue;
            Tensor plus = residual, minus = residual;
            plus[i] += 1e-3;
            minus[i] -= 1e-3;
            const double fd = (model.logits_from(plus, 1)[cls] - model.logits_from(minus, 1)[cls]) / 2e-3;
            worst = std::max(worst, std::abs(fd - grad[i]) / std::max(std::abs(fd), std::abs(grad[i])));
            ++checked;
        }
        CHECK(checked > residual.size() / 2);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("patch tokens receive nonzero gradient") {
    const VitModel model = toy_model();
    CaptureBundle cap = model.forward(random_image(model.config(), 4));
    CHECK_THROWS_AS(cap.gradient(), UsageError);
    CHECK_THROWS_AS(cap.backward(5), UsageError);
    cap.backward(0);
    const Tensor& g = cap.gradient();
    CHECK(g.shape() == Shape{10, 8});
    for (std::size_t t = 1; t < 10; ++t) {
        double n = 0;
        for (double v : g.row(t)) n += v * v;
        CHECK(n > 0.0);
    }
}

TEST_CASE("capture block bounds") {
    const VitModel model = toy_model();
    const Tensor img = random_image(model.config(), 1);
    CHECK_THROWS_AS(model.forward(img, {std::nullopt, 0}), UsageError);
    CHECK_THROWS_AS(model.forward(img, {std::nullopt, 2}), UsageError);
    CHECK_NOTHROW(model.forward(img, {std::nullopt, 1}));
}

TEST_CASE("model rejects weights of the wrong shape") {
    const VitConfig c = toy_config();
    VitWeights w = random_weights(c, 1);
    w.blocks[1].fc1_w = Tensor({3, 3});
    CHECK_THROWS_AS(VitModel(c, std::move(w)), ShapeError);
}
