#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "subquant/tensor.hpp"

namespace subquant {

// Symmetric uniform quantizer with k bits and step (scale) delta.
struct QuantSpec {
  int bits = 8;
  float scale = 1.0f;

  std::int32_t qmin() const { return -(std::int32_t{1} << (bits - 1)); }
  std::int32_t qmax() const { return (std::int32_t{1} << (bits - 1)) - 1; }
  void validate() const;  // bits in [2, 16], scale > 0 and finite
};

// clamp(round(x / scale), -2^(k-1), 2^(k-1)-1); ties round away from zero.
std::int32_t quantize(double x, const QuantSpec& spec);
// scale * q
double dequantize(std::int32_t q, const QuantSpec& spec);

enum class GranularityMode { layerwise, channelwise, method1, method2 };

// Group geometry after resolving a GranularityConfig against one layer.
struct GroupShape {
  std::size_t rows = 1;
  std::size_t cols = 1;
  friend bool operator==(const GroupShape&, const GroupShape&) = default;
};

struct GranularityConfig {
  GranularityMode mode = GranularityMode::channelwise;
  std::size_t rows_per_group = 1;     // method1 / method2
  std::size_t cols_per_group = 1;     // method1
  std::size_t horizontal_groups = 1;  // method2: #Col = ceil(J / #H)

  static GranularityConfig layerwise() { return {GranularityMode::layerwise, 0, 0, 1}; }
  static GranularityConfig channelwise() { return {GranularityMode::channelwise, 1, 0, 1}; }
  static GranularityConfig method1(std::size_t rows, std::size_t cols) { return {GranularityMode::method1, rows, cols, 1}; }
  static GranularityConfig method2(std::size_t rows, std::size_t h) { return {GranularityMode::method2, rows, 0, h}; }

  void validate() const;
  // Resolves the per-layer group shape, clamping oversize groups to the matrix.
  GroupShape resolve(std::size_t out_channels, std::size_t weights_per_output) const;
  std::string describe() const;
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

// Contiguous #V x #H tiling of an OC x J weight matrix; the last row/column
// groups are ragged when the group size does not divide the extent.
class SubMatrixPartition {
 public:
  SubMatrixPartition() = default;
  SubMatrixPartition(std::size_t out_channels, std::size_t weights_per_output, GroupShape group);

  std::size_t out_channels() const { return out_channels_; }
  std::size_t weights_per_output() const { return weights_per_output_; }
  std::size_t rows_per_group() const { return group_.rows; }
  std::size_t cols_per_group() const { return group_.cols; }
  std::size_t groups_v() const { return groups_v_; }
  std::size_t groups_h() const { return groups_h_; }
  std::size_t group_count() const { return groups_v_ * groups_h_; }

  IndexRange row_range(std::size_t v) const;
  IndexRange col_range(std::size_t h) const;
  std::size_t group_of_row(std::size_t c) const { return c / group_.rows; }
  std::size_t group_of_col(std::size_t j) const { return j / group_.cols; }

  friend bool operator==(const SubMatrixPartition&, const SubMatrixPartition&) = default;

 private:
  std::size_t out_channels_ = 0;
  std::size_t weights_per_output_ = 0;
  GroupShape group_;
  std::size_t groups_v_ = 0;
  std::size_t groups_h_ = 0;
};

SubMatrixPartition make_partition(std::size_t out_channels, std::size_t weights_per_output,
                                  const GranularityConfig& config);

// Calibrated scales of one layer.
struct ScaleSet {
  std::size_t rows_per_group = 1;
  std::size_t cols_per_group = 1;
  std::size_t groups_v = 1;
  std::size_t groups_h = 1;
  std::vector<float> weight_scales;  // groups_v x groups_h, row-major
  float input_scale = 1.0f;
  int weight_bits = 4;
  int act_bits = 8;

  static ScaleSet for_partition(const SubMatrixPartition& partition, int weight_bits, int act_bits);
  float weight_scale(std::size_t v, std::size_t h) const { return weight_scales[v * groups_h + h]; }
  float& weight_scale(std::size_t v, std::size_t h) { return weight_scales[v * groups_h + h]; }
  SubMatrixPartition partition(std::size_t out_channels, std::size_t weights_per_output) const;
  // Throws ShapeError when dimensions disagree with the partition or a scale is not positive.
  void validate(const SubMatrixPartition& partition) const;

  friend bool operator==(const ScaleSet&, const ScaleSet&) = default;
};

// Sentinel scale for all-zero groups.
inline constexpr float kDegenerateScale = 1.0f;

// max(|values|) / 2^(k-1), or kDegenerateScale if every value is zero.
float init_scale(std::span<const float> values, int bits);
float init_group_scale(const WeightMatrix& w, const SubMatrixPartition& partition, std::size_t v, std::size_t h,
                       int bits);

// Integer codes of a quantized matrix, row-major with the source layout.
struct CodeMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> codes;
  const std::int32_t* row(std::size_t r) const { return codes.data() + r * cols; }
};

CodeMatrix quantize_weights(const WeightMatrix& w, const SubMatrixPartition& partition, const ScaleSet& scales);
// Codes of a single group written into `codes` (an OC x J code matrix).
void quantize_weight_group(const WeightMatrix& w, const SubMatrixPartition& partition, std::size_t v, std::size_t h,
                           const QuantSpec& spec, CodeMatrix& codes);
CodeMatrix quantize_inputs(const InputMatrix& x, const QuantSpec& spec);

// Exact integer partial sums S[c][h][p] = sum_{j in cols(h)} Qw[c,j] * Qx[j,p].
class PartialSums {
 public:
  PartialSums() = default;
  PartialSums(std::size_t out_channels, std::size_t groups_h, std::size_t pixels)
      : oc_(out_channels), h_(groups_h), p_(pixels), sums_(out_channels * groups_h * pixels, 0) {}

  std::size_t pixels() const { return p_; }
  std::size_t groups_h() const { return h_; }
  std::int64_t* at(std::size_t c, std::size_t h) { return sums_.data() + (c * h_ + h) * p_; }
  const std::int64_t* at(std::size_t c, std::size_t h) const { return sums_.data() + (c * h_ + h) * p_; }

 private:
  std::size_t oc_ = 0, h_ = 0, p_ = 0;
  std::vector<std::int64_t> sums_;
};

struct OpCounters {
  std::uint64_t integer_macs = 0;
  std::uint64_t rescale_multiplies = 0;
};

// Computes S[c][h][:] for the given output rows and horizontal group.
void compute_partial_sums(const CodeMatrix& wcodes, const CodeMatrix& xcodes, const SubMatrixPartition& partition,
                          IndexRange rows, std::size_t h, int weight_bits, int act_bits, PartialSums& out,
                          OpCounters* counters = nullptr);
PartialSums compute_all_partial_sums(const CodeMatrix& wcodes, const CodeMatrix& xcodes,
                                     const SubMatrixPartition& partition, int weight_bits, int act_bits,
                                     OpCounters* counters = nullptr);

// One output row: out[p] = f(sum_h (dw[v(c),h] * dx) * S[c][h][p] + bias[c]).
// Both the layer forward and the calibration objective go through this, so
// cached and from-scratch evaluations agree bit-for-bit.
void combine_row(const PartialSums& sums, std::size_t c, std::span<const float> group_row_scales, float input_scale,
                 double bias, Activation f, std::span<float> out, OpCounters* counters = nullptr);

// Sub-layerwise quantized layer (integer sub-matrix products rescaled per group).
// Returns {OC, P}. `bias` may be empty.
Tensor quantized_forward_layer(const WeightMatrix& w, const InputMatrix& x, const SubMatrixPartition& partition,
                               const ScaleSet& scales, std::span<const float> bias, Activation f,
                               OpCounters* counters = nullptr);

}  // namespace subquant
