#include "subquant/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "subquant/error.hpp"

namespace subquant {

std::size_t shape_volume(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(std::span<const std::size_t> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)), data_(shape_volume(shape_), 0.0f) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_volume(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) +
                     " elements");
  }
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <class Tag>
Matrix<Tag>::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix " + std::to_string(rows_) + "x" + std::to_string(cols_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
}

template class Matrix<WeightTag>;
template class Matrix<InputTag>;

std::size_t ConvGeometry::output_extent(std::size_t input_extent) const {
  if (kernel == 0 || stride == 0) throw ShapeError("kernel and stride must be positive");
  const std::size_t padded = input_extent + 2 * padding;
  if (padded < kernel) {
    throw ShapeError("kernel " + std::to_string(kernel) + " larger than padded input " + std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

InputMatrix im2col(const Tensor& input, const ConvGeometry& g) {
  if (input.rank() != 4) throw ShapeError("im2col expects [N, C, H, W], got " + shape_string(input.shape()));
  const std::size_t n = input.dim(0), channels = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = g.output_extent(h), ow = g.output_extent(w);
  const std::size_t k = g.kernel;
  const std::size_t rows = channels * k * k;
  const std::size_t pixels = oh * ow;
  InputMatrix out(rows, n * pixels);
  const auto src = input.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const float* plane = src.data() + (b * channels + c) * h * w;
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          auto row = out.row(c * k * k + ky * k + kx);
          float* dst = row.data() + b * pixels;
          for (std::size_t y = 0; y < oh; ++y) {
            // signed arithmetic for the padded border
            const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.padding);
            for (std::size_t x = 0; x < ow; ++x) {
              const long ix = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.padding);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(w);
              dst[y * ow + x] = inside ? plane[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] : 0.0f;
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv_reference(const WeightMatrix& weights, const InputMatrix& input, Activation f,
                      std::span<const float> bias) {
  if (weights.cols() != input.rows()) {
    throw ShapeError("weight columns " + std::to_string(weights.cols()) + " != input rows " +
                     std::to_string(input.rows()));
  }
  if (!bias.empty() && bias.size() != weights.rows()) {
    throw ShapeError("bias length " + std::to_string(bias.size()) + " != output channels " +
                     std::to_string(weights.rows()));
  }
  const std::size_t oc = weights.rows(), cols = weights.cols(), p = input.cols();
  Tensor out({oc, p});
  std::vector<double> acc(p);
  for (std::size_t c = 0; c < oc; ++c) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = 0; j < cols; ++j) {
      const double wv = weights(c, j);
      if (wv == 0.0) continue;
      const float* xr = input.row(j).data();
      for (std::size_t q = 0; q < p; ++q) acc[q] += wv * static_cast<double>(xr[q]);
    }
    const double b = bias.empty() ? 0.0 : static_cast<double>(bias[c]);
    for (std::size_t q = 0; q < p; ++q) out[c * p + q] = static_cast<float>(f(acc[q] + b));
  }
  return out;
}

Tensor columns_to_nchw(const Tensor& columns, std::size_t batch, std::size_t out_h, std::size_t out_w) {
  if (columns.rank() != 2 || columns.dim(1) != batch * out_h * out_w) {
    throw ShapeError("cannot reshape " + shape_string(columns.shape()) + " to batch " + std::to_string(batch) + " of " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const std::size_t channels = columns.dim(0), pixels = out_h * out_w;
  Tensor out({batch, channels, out_h, out_w});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < pixels; ++i)
        out[(b * channels + c) * pixels + i] = columns[c * batch * pixels + b * pixels + i];
  return out;
}

Tensor nchw_to_columns(const Tensor& nchw) {
  if (nchw.rank() != 4) throw ShapeError("expected [N, C, H, W], got " + shape_string(nchw.shape()));
  const std::size_t batch = nchw.dim(0), channels = nchw.dim(1), pixels = nchw.dim(2) * nchw.dim(3);
  Tensor out({channels, batch * pixels});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < pixels; ++i)
        out[c * batch * pixels + b * pixels + i] = nchw[(b * channels + c) * pixels + i];
  return out;
}

}  // namespace subquant
