#include "vita/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "vita/error.hpp"

namespace vita {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
    }
    return shape_[axis];
}

std::span<const double> Tensor::row(std::size_t r) const {
    assert(rank() == 2 && r < shape_[0]);
    return {data_.data() + r * shape_[1], shape_[1]};
}

std::span<double> Tensor::row(std::size_t r) {
    assert(rank() == 2 && r < shape_[0]);
    return {data_.data() + r * shape_[1], shape_[1]};
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(what) + " expects a matrix, got " + shape_str(t.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
    }
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            const double* brow = b.row(p).data();
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_matrix(x, "linear");
    require_matrix(w, "linear");
    const std::size_t t = x.rows(), in = x.cols(), out_dim = w.rows();
    if (w.cols() != in) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    }
    if (!bias.empty() && bias.size() != out_dim) {
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " vs weight " + shape_str(w.shape()));
    }
    Tensor out({t, out_dim});
    for (std::size_t r = 0; r < t; ++r) {
        const double* xr = x.row(r).data();
        double* yr = out.row(r).data();
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double* wr = w.row(o).data();
            double acc = 0.0;
            for (std::size_t d = 0; d < in; ++d) acc += xr[d] * wr[d];
            yr[o] = bias.empty() ? acc : acc + bias[o];
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    Tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    require_matrix(x, "softmax_rows");
    Tensor out(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (double& v : o) v /= sum;
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() == 0) throw ShapeError("layer_norm on a scalar");
    const std::size_t d = x.shape().back();
    if (gamma.size() != d || beta.size() != d) {
        throw ShapeError("layer_norm: affine size does not match last axis of " + shape_str(x.shape()));
    }
    Tensor out(x.shape());
    const std::size_t n = x.size() / d;
    for (std::size_t v = 0; v < n; ++v) {
        const double* in = x.data().data() + v * d;
        double* o = out.data().data() + v * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) o[j] = (in[j] - mean) * inv * gamma[j] + beta[j];
    }
    return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu(x[i]);
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    require_matrix(a, "slice_cols");
    if (begin > end || end > a.cols()) throw ShapeError("slice_cols: bad column range");
    Tensor out({a.rows(), end - begin});
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto src = a.row(r);
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin),
                  src.begin() + static_cast<std::ptrdiff_t>(end), out.row(r).begin());
    }
    return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) return {};
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        require_matrix(p, "concat_cols");
        if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
        cols += p.cols();
    }
    Tensor out({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        auto dst = out.row(r).begin();
        for (const auto& p : parts) dst = std::copy(p.row(r).begin(), p.row(r).end(), dst);
    }
    return out;
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw ShapeError("argmax of empty range");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

}  // namespace vita
