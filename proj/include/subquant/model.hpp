#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "subquant/permutation.hpp"
#include "subquant/tensor.hpp"

namespace subquant {

enum class LayerKind {
  input,
  conv,
  linear,
  batchnorm,
  relu,
  leaky_relu,
  residual_add,
  maxpool,
  avgpool,       // global average pooling to 1x1
  shortcut_pad,  // parameter-free downsampling shortcut: spatial stride + zero channel padding
  output,
};

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);  // throws InputError

struct BatchNormParams {
  std::vector<float> gamma, beta, mean, var;
  float epsilon = 1e-5f;

  std::size_t channels() const { return gamma.size(); }
  void validate() const;
};

struct Layer {
  std::string id;
  LayerKind kind = LayerKind::input;
  std::vector<std::string> inputs;

  // conv / linear. For linear, kernel is 1 and in_channels is the flattened feature count.
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  ConvGeometry geometry;  // conv and maxpool; shortcut_pad uses stride only
  Activation activation;  // fused into conv/linear, or the slope of a leaky_relu node
  std::optional<Tensor> weight;  // conv: [OC, IC, K, K]; linear: [OC, IC]
  std::vector<float> bias;       // empty when the layer has none
  std::optional<BatchNormParams> batchnorm;
  bool quantize = true;

  bool has_weights() const { return kind == LayerKind::conv || kind == LayerKind::linear; }
  // J = K*K*IC
  std::size_t weights_per_output() const { return geometry.kernel * geometry.kernel * in_channels; }

  WeightMatrix weight_matrix() const;
  void set_weight_matrix(const WeightMatrix& w);
};

struct Segment {
  std::string id;
  std::vector<std::string> layers;  // 2-3 conv ids inside one residual block
  // Committed reorderings, one per adjacent layer pair. Empty until reordered.
  std::vector<Permutation> permutations;
};

// Per-sample activation shape, [C, H, W].
using SampleShape = std::vector<std::size_t>;

class ModelGraph {
 public:
  std::vector<Layer> layers;  // topological order
  std::vector<Segment> segments;
  SampleShape input_shape;

  std::size_t index_of(std::string_view id) const;  // throws ShapeError
  bool contains(std::string_view id) const;
  const Layer& layer(std::string_view id) const { return layers[index_of(id)]; }
  Layer& layer(std::string_view id) { return layers[index_of(id)]; }
  std::vector<std::string> consumers(std::string_view id) const;
  // Last node in topological order; its output is the network output.
  const Layer& output_layer() const { return layers.back(); }

  // Structural checks: unique ids, topological order, arity, segment chains.
  // Throws InputError naming the offending layer.
  void validate() const;
  // Propagates per-sample shapes through the graph (weights not required).
  std::map<std::string, SampleShape> infer_shapes() const;
  // Ids of the nodes strictly between two segment layers (per-channel ops only).
  std::vector<std::string> chain_between(std::string_view from, std::string_view to) const;
};

// Marks the first and last weighted layers quantize=false unless `explicit_flags`
// names them.
void apply_default_quantize_flags(ModelGraph& graph, const std::vector<std::string>& explicit_flags);

// W'[c,:] = W[c,:]*gamma/sqrt(var+eps); b' = (b-mean)*gamma/sqrt(var+eps) + beta.
Layer fold_batchnorm(const Layer& conv, const BatchNormParams& bn);

// Folds every batchnorm whose only producer is a conv/linear with no other consumer.
ModelGraph fold_batchnorms(const ModelGraph& graph);
// Moves relu/leaky_relu nodes into the preceding conv/linear when it has a single consumer.
ModelGraph fuse_activations(const ModelGraph& graph);
// fold_batchnorms followed by fuse_activations.
ModelGraph prepare_for_quantization(const ModelGraph& graph);

// Batch-level helpers shared by the float and quantized executors.
InputMatrix layer_input_matrix(const Layer& layer, const Tensor& input);
Tensor layer_output_tensor(const Layer& layer, const Tensor& columns, const Tensor& input);
// Evaluates a non-weighted node on its inputs.
Tensor run_plain_node(const Layer& layer, const std::vector<const Tensor*>& inputs);
// Float evaluation of any node.
Tensor run_float_node(const Layer& layer, const std::vector<const Tensor*>& inputs);

using ActivationMap = std::map<std::string, Tensor>;

// Runs the float network on an [N, C, H, W] batch, keeping every node's output.
ActivationMap forward_float(const ModelGraph& graph, const Tensor& input);

// Stacks [C, H, W] samples into one [N, C, H, W] batch.
Tensor stack_samples(const std::vector<Tensor>& samples);

}  // namespace subquant
