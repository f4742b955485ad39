#include "subquant/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "subquant/error.hpp"

namespace subquant {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

std::int64_t max_abs_code(int bits) { return std::int64_t{1} << (bits - 1); }

}  // namespace

void QuantSpec::validate() const {
  if (bits < 2 || bits > 16) throw ShapeError("bit-width must be in [2, 16], got " + std::to_string(bits));
  if (!(scale > 0.0f) || !std::isfinite(scale)) throw ShapeError("scale must be positive and finite");
}

std::int32_t quantize(double x, const QuantSpec& spec) {
  if (std::isnan(x)) return 0;
  const double r = std::round(x / static_cast<double>(spec.scale));
  if (r <= spec.qmin()) return spec.qmin();
  if (r >= spec.qmax()) return spec.qmax();
  return static_cast<std::int32_t>(r);
}

double dequantize(std::int32_t q, const QuantSpec& spec) { return static_cast<double>(spec.scale) * q; }

void GranularityConfig::validate() const {
  switch (mode) {
    case GranularityMode::method1:
      if (rows_per_group == 0 || cols_per_group == 0) throw ShapeError("method1 needs positive #Row and #Col");
      break;
    case GranularityMode::method2:
      if (rows_per_group == 0 || horizontal_groups == 0) throw ShapeError("method2 needs positive #Row and #H");
      break;
    case GranularityMode::layerwise:
    case GranularityMode::channelwise: break;
  }
}

GroupShape GranularityConfig::resolve(std::size_t oc, std::size_t j) const {
  validate();
  if (oc == 0 || j == 0) throw ShapeError("weight matrix must be non-empty");
  switch (mode) {
    case GranularityMode::layerwise: return {oc, j};
    case GranularityMode::channelwise: return {1, j};
    case GranularityMode::method1: return {std::min(rows_per_group, oc), std::min(cols_per_group, j)};
    case GranularityMode::method2: return {std::min(rows_per_group, oc), ceil_div(j, horizontal_groups)};
  }
  return {1, j};
}

std::string GranularityConfig::describe() const {
  switch (mode) {
    case GranularityMode::layerwise: return "layerwise";
    case GranularityMode::channelwise: return "channelwise";
    case GranularityMode::method1:
      return "method1(row=" + std::to_string(rows_per_group) + ",col=" + std::to_string(cols_per_group) + ")";
    case GranularityMode::method2:
      return "method2(row=" + std::to_string(rows_per_group) + ",h=" + std::to_string(horizontal_groups) + ")";
  }
  return "?";
}

SubMatrixPartition::SubMatrixPartition(std::size_t oc, std::size_t j, GroupShape group)
    : out_channels_(oc), weights_per_output_(j), group_(group) {
  if (oc == 0 || j == 0) throw ShapeError("partition of an empty matrix");
  group_.rows = std::clamp<std::size_t>(group.rows, 1, oc);
  group_.cols = std::clamp<std::size_t>(group.cols, 1, j);
  groups_v_ = ceil_div(oc, group_.rows);
  groups_h_ = ceil_div(j, group_.cols);
}

IndexRange SubMatrixPartition::row_range(std::size_t v) const {
  return {v * group_.rows, std::min(out_channels_, (v + 1) * group_.rows)};
}

IndexRange SubMatrixPartition::col_range(std::size_t h) const {
  return {h * group_.cols, std::min(weights_per_output_, (h + 1) * group_.cols)};
}

SubMatrixPartition make_partition(std::size_t oc, std::size_t j, const GranularityConfig& config) {
  return SubMatrixPartition(oc, j, config.resolve(oc, j));
}

ScaleSet ScaleSet::for_partition(const SubMatrixPartition& p, int weight_bits, int act_bits) {
  ScaleSet s;
  s.rows_per_group = p.rows_per_group();
  s.cols_per_group = p.cols_per_group();
  s.groups_v = p.groups_v();
  s.groups_h = p.groups_h();
  s.weight_scales.assign(p.group_count(), kDegenerateScale);
  s.weight_bits = weight_bits;
  s.act_bits = act_bits;
  return s;
}

SubMatrixPartition ScaleSet::partition(std::size_t oc, std::size_t j) const {
  return SubMatrixPartition(oc, j, {rows_per_group, cols_per_group});
}

void ScaleSet::validate(const SubMatrixPartition& p) const {
  if (groups_v != p.groups_v() || groups_h != p.groups_h() || rows_per_group != p.rows_per_group() ||
      cols_per_group != p.cols_per_group() || weight_scales.size() != p.group_count()) {
    throw ShapeError("scale grid " + std::to_string(groups_v) + "x" + std::to_string(groups_h) +
                     " does not match partition " + std::to_string(p.groups_v()) + "x" + std::to_string(p.groups_h()));
  }
  QuantSpec{weight_bits, input_scale}.validate();
  QuantSpec{act_bits, input_scale}.validate();
  for (float s : weight_scales) QuantSpec{weight_bits, s}.validate();
}

float init_scale(std::span<const float> values, int bits) {
  if (values.empty()) throw ShapeError("init_scale of an empty group");
  double m = 0.0;
  for (float v : values) m = std::max(m, std::fabs(static_cast<double>(v)));
  if (m == 0.0) return kDegenerateScale;
  return static_cast<float>(m / static_cast<double>(max_abs_code(bits)));
}

float init_group_scale(const WeightMatrix& w, const SubMatrixPartition& p, std::size_t v, std::size_t h, int bits) {
  const IndexRange rows = p.row_range(v), cols = p.col_range(h);
  std::vector<float> values;
  values.reserve(rows.size() * cols.size());
  for (std::size_t c = rows.begin; c < rows.end; ++c)
    for (std::size_t j = cols.begin; j < cols.end; ++j) values.push_back(w(c, j));
  return init_scale(values, bits);
}

void quantize_weight_group(const WeightMatrix& w, const SubMatrixPartition& p, std::size_t v, std::size_t h,
                           const QuantSpec& spec, CodeMatrix& codes) {
  const IndexRange rows = p.row_range(v), cols = p.col_range(h);
  for (std::size_t c = rows.begin; c < rows.end; ++c)
    for (std::size_t j = cols.begin; j < cols.end; ++j) codes.codes[c * codes.cols + j] = quantize(w(c, j), spec);
}

CodeMatrix quantize_weights(const WeightMatrix& w, const SubMatrixPartition& p, const ScaleSet& scales) {
  scales.validate(p);
  CodeMatrix codes{w.rows(), w.cols(), std::vector<std::int32_t>(w.rows() * w.cols())};
  for (std::size_t v = 0; v < p.groups_v(); ++v)
    for (std::size_t h = 0; h < p.groups_h(); ++h)
      quantize_weight_group(w, p, v, h, QuantSpec{scales.weight_bits, scales.weight_scale(v, h)}, codes);
  return codes;
}

CodeMatrix quantize_inputs(const InputMatrix& x, const QuantSpec& spec) {
  spec.validate();
  CodeMatrix codes{x.rows(), x.cols(), std::vector<std::int32_t>(x.rows() * x.cols())};
  const auto src = x.data();
  for (std::size_t i = 0; i < src.size(); ++i) codes.codes[i] = quantize(src[i], spec);
  return codes;
}

namespace {

template <class Acc>
void accumulate_row(const std::int32_t* wrow, const CodeMatrix& x, IndexRange cols, std::int64_t* out) {
  const std::size_t p = x.cols;
  std::vector<Acc> acc(p, 0);
  for (std::size_t j = cols.begin; j < cols.end; ++j) {
    const Acc wv = wrow[j];
    if (wv == 0) continue;
    const std::int32_t* xr = x.row(j);
    for (std::size_t q = 0; q < p; ++q) acc[q] += wv * static_cast<Acc>(xr[q]);
  }
  std::copy(acc.begin(), acc.end(), out);
}

}  // namespace

void compute_partial_sums(const CodeMatrix& w, const CodeMatrix& x, const SubMatrixPartition& p, IndexRange rows,
                          std::size_t h, int weight_bits, int act_bits, PartialSums& out, OpCounters* counters) {
  const IndexRange cols = p.col_range(h);
  const std::int32_t wlo = -static_cast<std::int32_t>(max_abs_code(weight_bits));
  const std::int32_t whi = static_cast<std::int32_t>(max_abs_code(weight_bits)) - 1;
  // int32 accumulation is exact while |sum| <= 2^(kw-1) * 2^(ka-1) * #Col fits.
  const bool narrow = max_abs_code(weight_bits) * max_abs_code(act_bits) * static_cast<std::int64_t>(cols.size()) <=
                      std::numeric_limits<std::int32_t>::max();
  for (std::size_t c = rows.begin; c < rows.end; ++c) {
    const std::int32_t* wrow = w.row(c);
    for (std::size_t j = cols.begin; j < cols.end; ++j) {
      if (wrow[j] < wlo || wrow[j] > whi) throw std::logic_error("weight code outside the k-bit range");
    }
    if (narrow)
      accumulate_row<std::int32_t>(wrow, x, cols, out.at(c, h));
    else
      accumulate_row<std::int64_t>(wrow, x, cols, out.at(c, h));
  }
  if (counters) counters->integer_macs += rows.size() * cols.size() * x.cols;
}

PartialSums compute_all_partial_sums(const CodeMatrix& w, const CodeMatrix& x, const SubMatrixPartition& p,
                                     int weight_bits, int act_bits, OpCounters* counters) {
  if (w.cols != x.rows) {
    throw ShapeError("weight columns " + std::to_string(w.cols) + " != input rows " + std::to_string(x.rows));
  }
  PartialSums sums(w.rows, p.groups_h(), x.cols);
  for (std::size_t h = 0; h < p.groups_h(); ++h)
    compute_partial_sums(w, x, p, IndexRange{0, w.rows}, h, weight_bits, act_bits, sums, counters);
  return sums;
}

void combine_row(const PartialSums& sums, std::size_t c, std::span<const float> group_row_scales, float input_scale,
                 double bias, Activation f, std::span<float> out, OpCounters* counters) {
  const std::size_t hs = sums.groups_h(), p = sums.pixels();
  std::vector<double> rescale(hs);
  for (std::size_t h = 0; h < hs; ++h)
    rescale[h] = static_cast<double>(group_row_scales[h]) * static_cast<double>(input_scale);
  for (std::size_t q = 0; q < p; ++q) {
    double acc = 0.0;
    for (std::size_t h = 0; h < hs; ++h) acc += rescale[h] * static_cast<double>(sums.at(c, h)[q]);
    out[q] = static_cast<float>(f(acc + bias));
  }
  if (counters) counters->rescale_multiplies += hs * p;
}

Tensor quantized_forward_layer(const WeightMatrix& w, const InputMatrix& x, const SubMatrixPartition& p,
                               const ScaleSet& scales, std::span<const float> bias, Activation f,
                               OpCounters* counters) {
  if (w.cols() != x.rows()) {
    throw ShapeError("weight columns " + std::to_string(w.cols()) + " != input rows " + std::to_string(x.rows()));
  }
  if (p.out_channels() != w.rows() || p.weights_per_output() != w.cols()) {
    throw ShapeError("partition does not cover the weight matrix");
  }
  if (!bias.empty() && bias.size() != w.rows()) throw ShapeError("bias length does not match output channels");
  scales.validate(p);
  const CodeMatrix wc = quantize_weights(w, p, scales);
  const CodeMatrix xc = quantize_inputs(x, QuantSpec{scales.act_bits, scales.input_scale});
  const PartialSums sums = compute_all_partial_sums(wc, xc, p, scales.weight_bits, scales.act_bits, counters);
  Tensor out({w.rows(), x.cols()});
  for (std::size_t c = 0; c < w.rows(); ++c) {
    const std::size_t v = p.group_of_row(c);
    std::span<const float> row_scales(scales.weight_scales.data() + v * p.groups_h(), p.groups_h());
    combine_row(sums, c, row_scales, scales.input_scale, bias.empty() ? 0.0 : bias[c], f,
                out.data().subspan(c * x.cols(), x.cols()), counters);
  }
  return out;
}

}  // namespace subquant
