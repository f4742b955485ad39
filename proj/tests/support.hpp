#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "subquant/bundle.hpp"
#include "subquant/model.hpp"
#include "subquant/rng.hpp"
#include "subquant/tensor.hpp"

namespace subquant::test {

inline std::filesystem::path fixture_dir() { return SUBQUANT_FIXTURE_DIR; }
inline std::filesystem::path golden_dir() { return SUBQUANT_GOLDEN_DIR; }

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }
inline double normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline std::vector<float> normal_values(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(scale * normal(rng));
  return v;
}

inline Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  const std::size_t n = shape_volume(shape);
  return Tensor(std::move(shape), normal_values(rng, n, scale));
}

inline WeightMatrix random_weights(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  return WeightMatrix(rows, cols, normal_values(rng, rows * cols, scale));
}

inline InputMatrix random_inputs(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  return InputMatrix(rows, cols, normal_values(rng, rows * cols, scale));
}

inline Layer make_conv(std::string id, std::string input, std::size_t ic, std::size_t oc, std::size_t k,
                       std::size_t stride, Rng* rng) {
  Layer l;
  l.id = std::move(id);
  l.kind = LayerKind::conv;
  l.inputs = {std::move(input)};
  l.in_channels = ic;
  l.out_channels = oc;
  l.geometry = {k, stride, k / 2};
  if (rng) {
    l.weight = random_tensor(*rng, {oc, ic, k, k}, std::sqrt(2.0 / static_cast<double>(ic * k * k)));
    l.bias = normal_values(*rng, oc, 0.1);
  }
  return l;
}

inline Layer make_node(std::string id, LayerKind kind, std::vector<std::string> inputs) {
  Layer l;
  l.id = std::move(id);
  l.kind = kind;
  l.inputs = std::move(inputs);
  return l;
}

inline ModelGraph load_fixture_net() { return prepare_for_quantization(load_bundle(fixture_dir() / "resnet20_tiny")); }

inline Tensor fixture_batch(std::size_t count) {
  auto all = read_tensor_set(fixture_dir() / "resnet20_tiny_calib.ptqc");
  all.resize(std::min(count, all.size()));
  return stack_samples(all);
}

inline double max_relative_change(const Tensor& a, const Tensor& b) {
  double diff = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - b[i]));
    norm = std::max(norm, std::abs(static_cast<double>(b[i])));
  }
  return norm > 0 ? diff / norm : diff;
}

}  // namespace subquant::test
