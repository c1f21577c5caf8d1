#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "vita/tensor.hpp"

namespace vita {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
    std::size_t id = 0;
    const Tape* owner = nullptr;
};

// Single-use reverse-mode recorder. Values are appended in evaluation order,
// so node ids are a topological order and the graph is acyclic by
// construction. Backward rules close over the values they need.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    // Vars refer back to the tape by address.
    Tape(Tape&&) = delete;
    Tape& operator=(Tape&&) = delete;

    // Gradient flows to leaves but stops there.
    Var leaf(Tensor value);

    const Tensor& value(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    // d output[flat_index] / d target. target must be on this tape and must
    // precede output.
    Tensor gradient(Var output, std::size_t flat_index, Var target) const;

    // Adds grad_in contributions for each input given grad_out.
    using BackwardRule = std::function<void(const Tensor& grad_out, std::vector<Tensor>& grads)>;
    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardRule rule);

    void check_owned(Var v) const;

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardRule backward;
    };
    std::vector<Node> nodes_;
};

// Differentiable ops. Arguments passed as Tensor are constants.
namespace taped {

Var matmul(Tape& tape, Var a, Var b);
Var linear(Tape& tape, Var x, const Tensor& w, const Tensor& bias);
Var transpose(Tape& tape, Var a);
Var softmax_rows(Tape& tape, Var x);
Var layer_norm(Tape& tape, Var x, const Tensor& gamma, const Tensor& beta, double eps);
Var gelu(Tape& tape, Var x);
Var add(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var a, double s);
Var mul(Tape& tape, Var a, const Tensor& w);
Var sum(Tape& tape, Var a);
Var slice_cols(Tape& tape, Var a, std::size_t begin, std::size_t end);
Var concat_cols(Tape& tape, std::span<const Var> parts);
// Row r of a matrix as a [1 x cols] matrix.
Var select_row(Tape& tape, Var a, std::size_t r);

}  // namespace taped

}  // namespace vita
