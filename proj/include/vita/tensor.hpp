#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vita {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::initializer_list<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    // 2-D accessors; no bounds checks beyond debug asserts.
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

    std::size_t rows() const { return dim(0); }
    std::size_t cols() const { return dim(1); }

    std::span<const double> row(std::size_t r) const;
    std::span<double> row(std::size_t r);

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Plain (untaped) kernels. All 2-D arguments are [rows x cols].

// a[m x k] * b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x[t x in] * w[out x in]^T + bias[out]; bias may be empty.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& x);
// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor gelu(const Tensor& x);
double gelu(double x);
double gelu_grad(double x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor> parts);

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace vita
