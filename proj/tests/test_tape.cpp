#include <doctest.h>

#include <cmath>
#include <functional>

#include "support/toy.hpp"
#include "vita/error.hpp"
#include "vita/tape.hpp"

using namespace vita;
using vita::testing::random_tensor;

namespace {

// Central differences of a scalar function of x.
Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor plus = x, minus = x;
        plus[i] += h;
        minus[i] -= h;
        g[i] = (f(plus) - f(minus)) / (2.0 * h);
    }
    return g;
}

double max_rel_error(const Tensor& analytic, const Tensor& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        if (std::abs(analytic[i]) <= 1e-6) continue;
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / std::max(std::abs(analytic[i]), std::abs(numeric[i])));
    }
    return worst;
}

}  // namespace

TEST_CASE("gradient of a sum is all ones") {
    Tape tape;
    const Var x = tape.leaf(random_tensor({3, 4}, 1));
    const Var s = taped::sum(tape, x);
    const Tensor g = tape.gradient(s, 0, x);
    for (double v : g.data()) CHECK(v == 1.0);
}

TEST_CASE("gradient of a dot product is the weight") {
    Tape tape;
    const Tensor w = random_tensor({2, 5}, 2);
    const Var x = tape.leaf(random_tensor({2, 5}, 3));
    const Var s = taped::sum(tape, taped::mul(tape, x, w));
    CHECK(tape.gradient(s, 0, x) == w);
}

TEST_CASE("targets not on the tape are rejected") {
    Tape a, b;
    const Var xa = a.leaf(Tensor({2, 2}, 1.0));
    const Var xb = b.leaf(Tensor({2, 2}, 1.0));
    const Var s = taped::sum(a, xa);
    CHECK_THROWS_AS(a.gradient(s, 0, xb), UsageError);
    CHECK_THROWS_AS(a.gradient(s, 1, xa), UsageError);
    CHECK_THROWS_AS(a.gradient(xa, 0, s), UsageError);
}

TEST_CASE("unreachable target gets a zero gradient") {
    Tape tape;
    const Var x = tape.leaf(Tensor({2, 2}, 1.0));
    const Var y = tape.leaf(Tensor({2, 2}, 2.0));
    const Var s = taped::sum(tape, y);
    CHECK(tape.gradient(s, 0, x) == Tensor({2, 2}));
}

TEST_CASE("composite ops agree with central finite differences") {
    const Tensor w1 = random_tensor({6, 4}, 10, -0.5, 0.5);
    const Tensor b1 = random_tensor({6}, 11, -0.5, 0.5);
    const Tensor gamma = random_tensor({6}, 12, 0.5, 1.5);
    const Tensor beta = random_tensor({6}, 13, -0.2, 0.2);
    const Tensor probe = random_tensor({1, 6}, 14);
    const Tensor no_bias;

    // scores = softmax(h h^T / 2) h, h = gelu(layer_norm(x W1^T + b1)), then
    // a CLS-style row selection and a linear readout.
    auto build = [&](Tape& tape, Var x) {
        const Var h = taped::gelu(tape, taped::layer_norm(tape, taped::linear(tape, x, w1, b1), gamma, beta, 1e-6));
        const Var a = taped::softmax_rows(tape, taped::scale(tape, taped::matmul(tape, h, taped::transpose(tape, h)), 0.5));
        const Var mixed = taped::matmul(tape, a, h);
        const Var both = taped::concat_cols(tape, std::vector<Var>{taped::slice_cols(tape, mixed, 0, 3),
                                                                   taped::slice_cols(tape, h, 3, 6)});
        const Var res = taped::add(tape, both, h);
        return taped::linear(tape, taped::select_row(tape, res, 1), probe, no_bias);
    };

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Tensor x0 = random_tensor({3, 4}, 100 + seed);
        Tape tape;
        const Var x = tape.leaf(x0);
        const Var out = build(tape, x);
        const Tensor analytic = tape.gradient(out, 0, x);

        const auto f = [&](const Tensor& xv) {
            Tape t;
            return t.value(build(t, t.leaf(xv)))[0];
        };
        const Tensor numeric = finite_difference(f, x0, 1e-3);
        CHECK(max_rel_error(analytic, numeric) < 1e-4);
    }
}
