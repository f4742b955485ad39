#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "subquant/model.hpp"
#include "subquant/quant.hpp"

namespace subquant {

enum class DistanceMetric { euclidean, cosine };

std::string_view to_string(DistanceMetric metric);
DistanceMetric distance_metric_from_string(std::string_view name);  // throws InputError

struct CalibConfig {
  double alpha = 0.5;
  double beta = 1.5;
  std::size_t grid_size = 100;   // n
  std::size_t iterations = 2;    // #Iter
  DistanceMetric metric = DistanceMetric::euclidean;
  std::size_t samples = 128;
  int weight_bits = 4;
  int act_bits = 8;
  std::uint64_t seed = 0;  // calibration-sample subsampling

  void validate() const;  // 0 < alpha <= 1 <= beta, n >= 2, #Iter >= 1
};

// n candidates evenly spaced over [alpha*delta, beta*delta], endpoints included.
// A single-point grid is {delta}.
std::vector<float> scale_space(double alpha, double beta, float delta, std::size_t n);

// Euclidean: sqrt(sum (x - y)^2). Cosine: 1 - <x,y>/(|x||y|), 0 when both are zero.
double distance(const Tensor& x, const Tensor& reference, DistanceMetric metric);

// One weighted layer lowered to matrices: X (J x P) and the float target (OC x P).
struct LayerProblem {
  WeightMatrix weights;
  std::vector<float> bias;
  Activation activation;
  InputMatrix input;
  Tensor target;  // {OC, P}

  static LayerProblem from_layer(const Layer& layer, const Tensor& input, const Tensor& target);
};

// Enumerates scale_space around `center` (default: max|X| / 2^(k_a-1)) and returns
// the input scale with the smallest output distance; ties go to the smaller scale.
// With `weight_scales` the weights are quantized at those scales, otherwise they
// stay in float. An `incumbent` is evaluated first and only displaced by a strict
// improvement.
struct InputScaleSearch {
  float scale = 1.0f;
  double distance = 0.0;
};
InputScaleSearch search_input_scale(const LayerProblem& problem, const SubMatrixPartition* partition,
                                    const ScaleSet* weight_scales, const CalibConfig& cfg,
                                    std::optional<float> center = std::nullopt,
                                    std::optional<float> incumbent = std::nullopt);

// Objective values recorded while the weight search runs.
struct WeightSearchTrace {
  double initial = 0.0;
  std::vector<double> after_group;  // one entry per visited (v, h)
  std::vector<double> after_sweep;
  std::size_t evaluations = 0;
};

// Iterative coordinate search over the sub-matrix scales with the input scale
// fixed. Returns the weight scales (input scale and bit-widths filled in).
ScaleSet search_weight_scales(const LayerProblem& problem, const SubMatrixPartition& partition, float input_scale,
                              const CalibConfig& cfg, WeightSearchTrace* trace = nullptr);

// Distance of the sub-layerwise output for a fixed scale set, computed along the
// same path the searches use.
double evaluate_scales(const LayerProblem& problem, const SubMatrixPartition& partition, const ScaleSet& scales,
                       DistanceMetric metric);

struct LayerCalibration {
  ScaleSet scales;
  Tensor output;  // quantized layer output, NCHW
  double step1_distance = 0.0;
  double step2_distance = 0.0;
  double step3_distance = 0.0;
  double final_distance = 0.0;
};

// Four-step per-layer procedure: input scale with float weights, weight scales,
// input scale again, final quantized output.
LayerCalibration calibrate_layer(const Layer& layer, const Tensor& input, const Tensor& target,
                                 const GranularityConfig& granularity, const CalibConfig& cfg);

// Float reference activations for every node plus the batch that produced them.
struct CalibrationSet {
  Tensor inputs;  // [N, C, H, W]
  ActivationMap references;

  static CalibrationSet collect(const ModelGraph& graph, Tensor inputs);
};

struct LayerReport {
  std::string id;
  bool quantized = false;
  std::size_t out_channels = 0;
  std::size_t weights_per_output = 0;
  std::size_t pixels = 0;
  std::size_t rows_per_group = 0;
  std::size_t cols_per_group = 0;
  std::size_t groups_v = 0;
  std::size_t groups_h = 0;
  float input_scale = 0.0f;
  double step1_distance = 0.0;
  double step2_distance = 0.0;
  double step3_distance = 0.0;
  double distance = 0.0;  // layer output vs float reference
};

struct NetworkCalibration {
  std::map<std::string, ScaleSet> scales;
  std::vector<LayerReport> layers;  // weighted layers in topological order
  Tensor output;                    // quantized network output
  double output_distance = 0.0;
  double mean_layer_distance = 0.0;  // over quantized layers
};

// Layer-by-layer calibration in topological order. Each layer sees the outputs
// of the already-quantized prefix; targets are always the float references.
NetworkCalibration calibrate_network(const ModelGraph& graph, const CalibrationSet& set,
                                     const GranularityConfig& granularity, const CalibConfig& cfg);

// Runs the network with fixed scales (layers without an entry run in float).
ActivationMap forward_quantized(const ModelGraph& graph, const std::map<std::string, ScaleSet>& scales,
                                const Tensor& input);

// Deterministic subset of `count` sample indices (all of them when count >= total).
std::vector<std::size_t> select_samples(std::size_t total, std::size_t count, std::uint64_t seed);

}  // namespace subquant
