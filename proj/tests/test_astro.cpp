#include <doctest.h>

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "support/toy.hpp"
#include "vita/astro.hpp"
#include "vita/error.hpp"

using namespace vita;
using vita::testing::naive_matmul;
using vita::testing::random_tensor;

namespace {

struct RefResult {
    std::vector<std::vector<int>> activity;
    std::vector<std::vector<double>> m_diag;
    Tensor y_last, y_hat;
};

// Straight-line re-simulation: modulated weights are materialized, matmul is
// the naive oracle.
RefResult reference_sim(const Tensor& x, const Tensor& w, const Tensor& b, const AstroParams& p) {
    const std::size_t n = w.rows(), d = w.cols();
    auto run = [&](const std::vector<double>& m) {
        Tensor wm(w.shape());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) wm.at(i, j) = m[i] * w.at(i, j);
        Tensor y = naive_matmul(x, transpose(wm));
        for (std::size_t r = 0; r < y.rows(); ++r)
            for (std::size_t c = 0; c < n; ++c) y.at(r, c) += b.empty() ? 0.0 : b[c];
        return y;
    };
    auto mean_norm = [](const Tensor& y) {
        double s = 0;
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double q = 0;
            for (std::size_t c = 0; c < y.cols(); ++c) q += y.at(r, c) * y.at(r, c);
            s += std::sqrt(q);
        }
        return s / static_cast<double>(y.rows());
    };

    RefResult out;
    std::vector<int> a(n, 0);
    std::vector<double> m(n, 1.0);
    out.activity.push_back(a);
    out.m_diag.push_back(m);
    const Tensor y0 = run(m);
    Tensor y = y0;
    for (int t = 1; t <= p.k; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            a[i] += y.at(0, i) >= p.phi ? 1 : -1;
            a[i] = std::clamp(a[i], -p.tau, p.tau);
            m[i] *= a[i] == p.tau ? p.alpha : (a[i] == -p.tau ? p.beta : 1.0);
        }
        out.activity.push_back(a);
        out.m_diag.push_back(m);
        y = run(m);
    }
    out.y_last = y;
    out.y_hat = p.k == 0 ? y0 : scale(y, mean_norm(y0) / mean_norm(y));
    return out;
}

double mean_row_norm(const Tensor& y) {
    double s = 0;
    for (std::size_t r = 0; r < y.rows(); ++r) {
        double q = 0;
        for (double v : y.row(r)) q += v * v;
        s += std::sqrt(q);
    }
    return s / static_cast<double>(y.rows());
}

}  // namespace

TEST_CASE("activity update") {
    CHECK(update_activity(2, 1.0, 0.0, 2) == 2);
    CHECK(update_activity(0, 0.3, 0.3, 2) == 1);
    CHECK(update_activity(-1, -5.0, 0.0, 2) == -2);
    CHECK(update_activity(-2, -5.0, 0.0, 2) == -2);
    CHECK(update_activity(1, -0.1, 0.0, 3) == 0);
}

TEST_CASE("modulation factor") {
    CHECK(modulation_factor(2, 2, 1.5, 0.05) == 1.5);
    CHECK(modulation_factor(-2, 2, 1.5, 0.05) == 0.05);
    CHECK(modulation_factor(1, 2, 1.5, 0.05) == 1.0);
    CHECK(modulation_factor(0, 1, 1.5, 0.05) == 1.0);
}

TEST_CASE("params validation and parsing") {
    CHECK_NOTHROW(AstroParams{6, 3, -0.5, 1.5, 0.05}.validate());
    CHECK_NOTHROW(AstroParams{0, 1, 0.0, 1.0, 1.0}.validate());
    CHECK_THROWS_AS((AstroParams{-1, 1, 0.0, 1.5, 0.5}.validate()), UsageError);
    CHECK_THROWS_AS((AstroParams{2, 0, 0.0, 1.5, 0.5}.validate()), UsageError);
    CHECK_THROWS_AS((AstroParams{2, 1, 0.0, 0.9, 0.5}.validate()), UsageError);
    CHECK_THROWS_AS((AstroParams{2, 1, 0.0, 1.5, 0.0}.validate()), UsageError);
    CHECK_THROWS_AS((AstroParams{2, 1, 0.0, 1.5, 1.5}.validate()), UsageError);
    CHECK_THROWS_AS((AstroParams{2, 1, std::nan(""), 1.5, 0.5}.validate()), UsageError);

    const AstroParams p = parse_astro_params("6,3,-0.5,1.5,0.05");
    CHECK(p == AstroParams{6, 3, -0.5, 1.5, 0.05});
    CHECK(parse_astro_params(p.to_string()) == p);
    CHECK_THROWS_AS(parse_astro_params("6,3,-0.5,1.5"), ParseError);
    CHECK_THROWS_AS(parse_astro_params("6,x,-0.5,1.5,0.05"), ParseError);
    CHECK_THROWS_AS(parse_astro_params("6.5,3,-0.5,1.5,0.05"), ParseError);
}

TEST_CASE("excitatory single-neuron trace") {
    const Tensor x = Tensor::matrix({{1}}), w = Tensor::matrix({{1}}), b = Tensor::vector({0});
    const AstroResult r = astro_linear_forward(x, w, b, {2, 1, 0.0, 2.0, 0.5});
    REQUIRE(r.trace.steps.size() == 3);
    CHECK(r.trace.steps[0].y_cls == std::vector<double>{1.0});
    CHECK(r.trace.steps[1].activity == std::vector<int>{1});
    CHECK(r.trace.steps[1].m == std::vector<double>{2.0});
    CHECK(r.trace.steps[1].y_cls == std::vector<double>{2.0});
    CHECK(r.trace.steps[2].activity == std::vector<int>{1});
    CHECK(r.trace.steps[2].m_diag == std::vector<double>{4.0});
    CHECK(r.trace.steps[2].y_cls == std::vector<double>{4.0});
    CHECK(r.output[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("inhibitory single-neuron trace") {
    const Tensor x = Tensor::matrix({{-1}}), w = Tensor::matrix({{1}}), b = Tensor::vector({0});
    const AstroResult r = astro_linear_forward(x, w, b, {2, 1, 0.0, 2.0, 0.5});
    CHECK(r.trace.steps[1].activity == std::vector<int>{-1});
    CHECK(r.trace.steps[1].m == std::vector<double>{0.5});
    CHECK(r.trace.steps[1].y_cls == std::vector<double>{-0.5});
    CHECK(r.trace.steps[2].m_diag == std::vector<double>{0.25});
    CHECK(r.trace.steps[2].y_cls == std::vector<double>{-0.25});
    CHECK(r.output[0] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("matches the reference simulation on random layers") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const Tensor x = random_tensor({5, 4}, seed), w = random_tensor({3, 4}, seed + 1000),
                     b = random_tensor({3}, seed + 2000, -0.3, 0.3);
        const AstroParams p{static_cast<int>(seed % 7), 1 + static_cast<int>(seed % 3), -0.2 + 0.02 * double(seed % 20),
                            1.2, 0.25};
        const AstroResult got = astro_linear_forward(x, w, b, p);
        const RefResult ref = reference_sim(x, w, b, p);
        REQUIRE(got.trace.steps.size() == static_cast<std::size_t>(p.k) + 1);
        for (int t = 0; t <= p.k; ++t) {
            CHECK(got.trace.steps[t].activity == ref.activity[t]);
            for (std::size_t i = 0; i < 3; ++i)
                CHECK(got.trace.steps[t].m_diag[i] == doctest::Approx(ref.m_diag[t][i]).epsilon(1e-12));
        }
        for (std::size_t i = 0; i < got.output.size(); ++i)
            CHECK(std::abs(got.output[i] - ref.y_hat[i]) <= 1e-12 * std::max(1.0, std::abs(ref.y_hat[i])));
    }
}

TEST_CASE("k = 0 and alpha = beta = 1 leave the layer unchanged") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Tensor x = random_tensor({6, 5}, seed), w = random_tensor({4, 5}, seed + 1),
                     b = random_tensor({4}, seed + 2);
        const Tensor plain = linear(x, w, b);
        CHECK(astro_linear_forward(x, w, b, {0, 2, 0.0, 1.5, 0.05}).output == plain);
        const Tensor id = astro_linear_forward(x, w, b, {8, 1, 0.0, 1.0, 1.0}).output;
        for (std::size_t i = 0; i < plain.size(); ++i)
            CHECK(std::abs(id[i] - plain[i]) <= 1e-12 * std::max(1.0, std::abs(plain[i])));
    }
}

TEST_CASE("saturated excitation gives alpha^k") {
    const Tensor x = random_tensor({4, 3}, 3, 0.5, 1.0);
    const Tensor w = random_tensor({5, 3}, 4, 0.5, 1.0);
    for (int k : {4, 6, 8}) {
        const AstroResult r = astro_linear_forward(x, w, Tensor({5}), {k, 1, -10.0, 1.5, 0.05});
        for (double m : r.trace.steps.back().m_diag) CHECK(m == std::pow(1.5, k));
    }
}

TEST_CASE("output keeps the mean token norm of y(0)") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Tensor x = random_tensor({7, 6}, seed), w = random_tensor({6, 6}, seed + 50),
                     b = random_tensor({6}, seed + 99);
        const AstroResult r = astro_linear_forward(x, w, b, {6, 2, 0.0, 1.5, 0.25});
        const double n0 = mean_row_norm(linear(x, w, b));
        CHECK(std::abs(mean_row_norm(r.output) - n0) <= 1e-9 * n0);
        CHECK(r.trace.mean_norm_initial == doctest::Approx(n0).epsilon(1e-12));
    }
}

TEST_CASE("only the CLS row drives the state") {
    Tensor x = random_tensor({5, 4}, 1);
    const Tensor w = random_tensor({3, 4}, 2), b = random_tensor({3}, 3);
    const AstroParams p{4, 2, 0.0, 1.2, 0.5};
    const AstroResult a = astro_linear_forward(x, w, b, p);
    for (std::size_t c = 0; c < 4; ++c) x.at(3, c) *= -7.0;
    const AstroResult c = astro_linear_forward(x, w, b, p);
    CHECK(a.trace.steps.back().m_diag == c.trace.steps.back().m_diag);
}

TEST_CASE("permuting neurons permutes the result") {
    const Tensor x = random_tensor({4, 3}, 10), w = random_tensor({3, 3}, 11), b = random_tensor({3}, 12);
    const std::vector<std::size_t> perm{2, 0, 1};
    Tensor wp(w.shape()), bp(b.shape());
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) wp.at(i, j) = w.at(perm[i], j);
        bp[i] = b[perm[i]];
    }
    const AstroParams p{5, 1, 0.1, 1.5, 0.05};
    const Tensor y = astro_linear_forward(x, w, b, p).output, yp = astro_linear_forward(x, wp, bp, p).output;
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t i = 0; i < 3; ++i) CHECK(yp.at(r, i) == doctest::Approx(y.at(r, perm[i])).epsilon(1e-12));
}

TEST_CASE("errors") {
    CHECK_THROWS_AS(astro_linear_forward(Tensor({2, 3}), Tensor({2, 4}), Tensor({2}), {1, 1, 0, 1.5, 0.5}), ShapeError);
    CHECK_THROWS_AS(normalize_output(Tensor({2, 2}, 1.0), Tensor({2, 2})), NumericError);

    Tensor x({1, 1}, 1.0);
    const Tensor w = Tensor::matrix({{1e300}});
    try {
        astro_linear_forward(x, w, Tensor({1}), {3, 1, 0.0, 1e10, 0.5});
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("iteration") != std::string::npos);
    }
}

TEST_CASE("trace jsonl has one object per iteration") {
    const AstroResult r =
        astro_linear_forward(random_tensor({3, 2}, 1), random_tensor({2, 2}, 2), Tensor({2}), {3, 1, 0.0, 1.5, 0.5});
    std::ostringstream out;
    write_trace_jsonl(out, r.trace);
    std::istringstream in(out.str());
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line);) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("t"));
        CHECK(j["M_diag"].size() == 2);
        ++lines;
    }
    CHECK(lines >= 4);
}
