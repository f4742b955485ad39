#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace subquant {

// Dense row-major float tensor. Shape and data are fixed at construction.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<float> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  // Same data, new shape with identical element count.
  Tensor reshaped(std::vector<std::size_t> shape) const;

  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

std::size_t shape_volume(std::span<const std::size_t> shape);
std::string shape_string(std::span<const std::size_t> shape);

// Row-major 2-D matrix. The tag keeps weight and input matrices apart at
// compile time; both share the same storage layout.
template <class Tag>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

struct WeightTag {};
struct InputTag {};

// W in R^{OC x J}, J = K*K*IC, column j = ic*K*K + ky*K + kx.
using WeightMatrix = Matrix<WeightTag>;
// X in R^{J x P}, P = N*out_h*out_w, column p = n*out_h*out_w + y*out_w + x.
using InputMatrix = Matrix<InputTag>;

enum class ActivationKind { identity, relu, leaky_relu };

struct Activation {
  ActivationKind kind = ActivationKind::identity;
  float slope = 0.01f;  // leaky_relu only

  double operator()(double v) const {
    switch (kind) {
      case ActivationKind::relu: return v > 0.0 ? v : 0.0;
      case ActivationKind::leaky_relu: return v > 0.0 ? v : v * static_cast<double>(slope);
      case ActivationKind::identity: break;
    }
    return v;
  }
  friend bool operator==(const Activation&, const Activation&) = default;
};

struct ConvGeometry {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // Throws ShapeError when the output would be empty.
  std::size_t output_extent(std::size_t input_extent) const;
};

// Lowers an [N, IC, H, W] tensor into the J x P patch matrix.
// Rows are channel-major: the K*K kernel taps of input channel c occupy rows
// [c*K*K, (c+1)*K*K), so permuting input channels permutes whole row blocks.
InputMatrix im2col(const Tensor& input, const ConvGeometry& geometry);

// output[c, p] = f(sum_j W[c, j] * X[j, p] + bias[c]), double accumulation.
// Returns a tensor of shape {OC, P}. `bias` may be empty.
Tensor conv_reference(const WeightMatrix& weights, const InputMatrix& input, Activation f,
                      std::span<const float> bias = {});

// Reshapes an {OC, P} result back to [N, OC, out_h, out_w].
Tensor columns_to_nchw(const Tensor& columns, std::size_t batch, std::size_t out_h, std::size_t out_w);
// Inverse of columns_to_nchw: [N, C, H, W] -> {C, N*H*W}.
Tensor nchw_to_columns(const Tensor& nchw);

}  // namespace subquant
