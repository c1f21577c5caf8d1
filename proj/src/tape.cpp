#include "vita/tape.hpp"

#include <algorithm>
#include <cmath>

#include "vita/error.hpp"

namespace vita {

Var Tape::leaf(Tensor value) { return record(std::move(value), {}, nullptr); }

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardRule rule) {
    nodes_.push_back({std::move(value), std::move(inputs), std::move(rule)});
    return {nodes_.size() - 1, this};
}

void Tape::check_owned(Var v) const {
    if (v.owner != this || v.id >= nodes_.size()) throw UsageError("variable is not recorded on this tape");
}

const Tensor& Tape::value(Var v) const {
    check_owned(v);
    return nodes_[v.id].value;
}

Tensor Tape::gradient(Var output, std::size_t flat_index, Var target) const {
    check_owned(output);
    check_owned(target);
    if (target.id > output.id) throw UsageError("gradient target was recorded after the output");
    const Tensor& out = nodes_[output.id].value;
    if (flat_index >= out.size()) throw UsageError("gradient selector out of range");

    // Only nodes in [target, output] can lie on a path between them.
    std::vector<Tensor> grads(nodes_.size());
    grads[output.id] = Tensor(out.shape());
    grads[output.id][flat_index] = 1.0;

    for (std::size_t id = output.id + 1; id-- > target.id + 1;) {
        if (grads[id].empty()) continue;
        const Node& node = nodes_[id];
        if (!node.backward) continue;
        std::vector<Tensor> in_grads(node.inputs.size());
        for (std::size_t i = 0; i < node.inputs.size(); ++i) in_grads[i] = Tensor(nodes_[node.inputs[i]].value.shape());
        node.backward(grads[id], in_grads);
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
            const std::size_t src = node.inputs[i];
            if (src < target.id) continue;
            if (grads[src].empty()) {
                grads[src] = std::move(in_grads[i]);
            } else {
                for (std::size_t j = 0; j < grads[src].size(); ++j) grads[src][j] += in_grads[i][j];
            }
        }
    }
    if (grads[target.id].empty()) return Tensor(nodes_[target.id].value.shape());
    return std::move(grads[target.id]);
}

namespace taped {

Var matmul(Tape& tape, Var a, Var b) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    return tape.record(vita::matmul(av, bv), {a.id, b.id},
                       [av, bv](const Tensor& g, std::vector<Tensor>& grads) {
                           grads[0] = vita::matmul(g, vita::transpose(bv));
                           grads[1] = vita::matmul(vita::transpose(av), g);
                       });
}

Var linear(Tape& tape, Var x, const Tensor& w, const Tensor& bias) {
    const Tensor& xv = tape.value(x);
    // Weights are long-lived and shared; only the reference is captured.
    const Tensor* wp = &w;
    return tape.record(vita::linear(xv, w, bias), {x.id}, [wp](const Tensor& g, std::vector<Tensor>& grads) {
        grads[0] = vita::matmul(g, *wp);
    });
}

Var transpose(Tape& tape, Var a) {
    return tape.record(vita::transpose(tape.value(a)), {a.id},
                       [](const Tensor& g, std::vector<Tensor>& grads) { grads[0] = vita::transpose(g); });
}

Var softmax_rows(Tape& tape, Var x) {
    Tensor y = vita::softmax_rows(tape.value(x));
    Tensor saved = y;
    return tape.record(std::move(y), {x.id}, [y = std::move(saved)](const Tensor& g, std::vector<Tensor>& grads) {
        Tensor& gx = grads[0];
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) dot += g.at(r, j) * y.at(r, j);
            for (std::size_t j = 0; j < y.cols(); ++j) gx.at(r, j) = y.at(r, j) * (g.at(r, j) - dot);
        }
    });
}

Var layer_norm(Tape& tape, Var x, const Tensor& gamma, const Tensor& beta, double eps) {
    const Tensor& xv = tape.value(x);
    const std::size_t d = xv.shape().back();
    const std::size_t n = xv.size() / d;
    // Save normalized values and inverse std per vector.
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(n);
    for (std::size_t v = 0; v < n; ++v) {
        const double* in = xv.data().data() + v * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= static_cast<double>(d);
        inv_std[v] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) xhat[v * d + j] = (in[j] - mean) * inv_std[v];
    }
    Tensor y(xv.shape());
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t j = 0; j < d; ++j) y[v * d + j] = xhat[v * d + j] * gamma[j] + beta[j];

    const Tensor* gp = &gamma;
    return tape.record(std::move(y), {x.id},
                       [xhat = std::move(xhat), inv_std = std::move(inv_std), gp, d, n](
                           const Tensor& g, std::vector<Tensor>& grads) {
                           Tensor& gx = grads[0];
                           std::vector<double> dxhat(d);
                           for (std::size_t v = 0; v < n; ++v) {
                               double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                               for (std::size_t j = 0; j < d; ++j) {
                                   dxhat[j] = g[v * d + j] * (*gp)[j];
                                   mean_dxhat += dxhat[j];
                                   mean_dxhat_xhat += dxhat[j] * xhat[v * d + j];
                               }
                               mean_dxhat /= static_cast<double>(d);
                               mean_dxhat_xhat /= static_cast<double>(d);
                               for (std::size_t j = 0; j < d; ++j) {
                                   gx[v * d + j] =
                                       inv_std[v] * (dxhat[j] - mean_dxhat - xhat[v * d + j] * mean_dxhat_xhat);
                               }
                           }
                       });
}

Var gelu(Tape& tape, Var x) {
    Tensor xv = tape.value(x);
    Tensor y = vita::gelu(xv);
    return tape.record(std::move(y), {x.id}, [xv = std::move(xv)](const Tensor& g, std::vector<Tensor>& grads) {
        for (std::size_t i = 0; i < xv.size(); ++i) grads[0][i] = g[i] * vita::gelu_grad(xv[i]);
    });
}

Var add(Tape& tape, Var a, Var b) {
    return tape.record(vita::add(tape.value(a), tape.value(b)), {a.id, b.id},
                       [](const Tensor& g, std::vector<Tensor>& grads) {
                           grads[0] = g;
                           grads[1] = g;
                       });
}

Var scale(Tape& tape, Var a, double s) {
    return tape.record(vita::scale(tape.value(a), s), {a.id},
                       [s](const Tensor& g, std::vector<Tensor>& grads) { grads[0] = vita::scale(g, s); });
}

Var mul(Tape& tape, Var a, const Tensor& w) {
    const Tensor& av = tape.value(a);
    if (av.shape() != w.shape()) throw ShapeError("mul: " + shape_str(av.shape()) + " vs " + shape_str(w.shape()));
    Tensor y(av.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * w[i];
    return tape.record(std::move(y), {a.id}, [w](const Tensor& g, std::vector<Tensor>& grads) {
        for (std::size_t i = 0; i < w.size(); ++i) grads[0][i] = g[i] * w[i];
    });
}

Var sum(Tape& tape, Var a) {
    const Tensor& av = tape.value(a);
    double s = 0.0;
    for (double v : av.data()) s += v;
    return tape.record(Tensor({1}, {s}), {a.id}, [](const Tensor& g, std::vector<Tensor>& grads) {
        std::fill(grads[0].data().begin(), grads[0].data().end(), g[0]);
    });
}

Var slice_cols(Tape& tape, Var a, std::size_t begin, std::size_t end) {
    return tape.record(vita::slice_cols(tape.value(a), begin, end), {a.id},
                       [begin](const Tensor& g, std::vector<Tensor>& grads) {
                           for (std::size_t r = 0; r < g.rows(); ++r)
                               for (std::size_t c = 0; c < g.cols(); ++c) grads[0].at(r, begin + c) = g.at(r, c);
                       });
}

Var concat_cols(Tape& tape, std::span<const Var> parts) {
    std::vector<Tensor> values;
    std::vector<std::size_t> ids, widths;
    for (Var p : parts) {
        values.push_back(tape.value(p));
        ids.push_back(p.id);
        widths.push_back(values.back().cols());
    }
    return tape.record(vita::concat_cols(values), std::move(ids),
                       [widths = std::move(widths)](const Tensor& g, std::vector<Tensor>& grads) {
                           std::size_t offset = 0;
                           for (std::size_t i = 0; i < widths.size(); ++i) {
                               grads[i] = vita::slice_cols(g, offset, offset + widths[i]);
                               offset += widths[i];
                           }
                       });
}

Var select_row(Tape& tape, Var a, std::size_t r) {
    const Tensor& av = tape.value(a);
    if (av.rank() != 2 || r >= av.rows()) throw ShapeError("select_row out of range");
    Tensor y({1, av.cols()});
    std::copy(av.row(r).begin(), av.row(r).end(), y.row(0).begin());
    return tape.record(std::move(y), {a.id}, [r](const Tensor& g, std::vector<Tensor>& grads) {
        std::copy(g.row(0).begin(), g.row(0).end(), grads[0].row(r).begin());
    });
}

}  // namespace taped
}  // namespace vita
