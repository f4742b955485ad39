#include "subquant/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>

#include "subquant/error.hpp"

namespace subquant {

namespace {

struct KindName {
  LayerKind kind;
  std::string_view name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::input, "input"},
    {LayerKind::conv, "conv"},
    {LayerKind::linear, "linear"},
    {LayerKind::batchnorm, "batchnorm"},
    {LayerKind::relu, "relu"},
    {LayerKind::leaky_relu, "leaky-relu"},
    {LayerKind::residual_add, "residual-add"},
    {LayerKind::maxpool, "maxpool"},
    {LayerKind::avgpool, "avgpool"},
    {LayerKind::shortcut_pad, "shortcut-pad"},
    {LayerKind::output, "output"},
};

std::string where(const Layer& l) { return "layer '" + l.id + "'"; }

bool is_per_channel_op(LayerKind k) {
  return k == LayerKind::relu || k == LayerKind::leaky_relu || k == LayerKind::batchnorm;
}

std::size_t expected_arity(LayerKind k) {
  switch (k) {
    case LayerKind::input: return 0;
    case LayerKind::residual_add: return 2;
    default: return 1;
  }
}

Tensor apply_elementwise(const Tensor& in, Activation f) {
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<float>(f(in[i]));
  return out;
}

Tensor apply_batchnorm(const Tensor& in, const BatchNormParams& bn) {
  const std::size_t n = in.dim(0), c = in.dim(1), plane = in.dim(2) * in.dim(3);
  Tensor out(in.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(bn.var[ch]) + bn.epsilon);
    const double g = bn.gamma[ch], b = bn.beta[ch], m = bn.mean[ch];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = static_cast<float>((in[base + i] - m) * inv * g + b);
    }
  }
  return out;
}

Tensor apply_maxpool(const Tensor& in, const ConvGeometry& g) {
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const std::size_t oh = g.output_extent(h), ow = g.output_extent(w);
  Tensor out({n, c, oh, ow});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const float* src = in.data().data() + plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        float best = -std::numeric_limits<float>::infinity();
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const long ix = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            best = std::max(best, src[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)]);
          }
        }
        out[(plane * oh + y) * ow + x] = best;
      }
    }
  }
  return out;
}

Tensor apply_avgpool(const Tensor& in) {
  const std::size_t n = in.dim(0), c = in.dim(1), plane = in.dim(2) * in.dim(3);
  Tensor out({n, c, 1, 1});
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < plane; ++k) acc += in[i * plane + k];
    out[i] = static_cast<float>(acc / static_cast<double>(plane));
  }
  return out;
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

Tensor apply_shortcut_pad(const Tensor& in, std::size_t out_channels, std::size_t stride) {
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const std::size_t oh = ceil_div(h, stride), ow = ceil_div(w, stride);
  const std::size_t front = (out_channels - c) / 2;
  Tensor out({n, out_channels, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x)
          out[((s * out_channels + ch + front) * oh + y) * ow + x] = in[((s * c + ch) * h + y * stride) * w + x * stride];
  return out;
}

Tensor add_tensors(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("residual-add shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

ModelGraph remove_and_rewire(const ModelGraph& graph, const std::set<std::string>& removed) {
  std::unordered_map<std::string, std::string> redirect;
  for (const auto& l : graph.layers) {
    if (removed.contains(l.id)) redirect[l.id] = l.inputs.at(0);
  }
  auto resolve = [&](std::string id) {
    for (auto it = redirect.find(id); it != redirect.end(); it = redirect.find(id)) id = it->second;
    return id;
  };
  ModelGraph out;
  out.input_shape = graph.input_shape;
  out.segments = graph.segments;
  for (const auto& l : graph.layers) {
    if (removed.contains(l.id)) continue;
    Layer copy = l;
    for (auto& in : copy.inputs) in = resolve(in);
    out.layers.push_back(std::move(copy));
  }
  return out;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& kn : kKindNames)
    if (kn.kind == kind) return kn.name;
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (const auto& kn : kKindNames)
    if (kn.name == name) return kn.kind;
  throw InputError("unknown layer kind '" + std::string(name) + "'");
}

void BatchNormParams::validate() const {
  const std::size_t c = gamma.size();
  if (beta.size() != c || mean.size() != c || var.size() != c) {
    throw ShapeError("batchnorm parameter vectors have different lengths");
  }
  if (!(epsilon > 0.0f)) throw ShapeError("batchnorm epsilon must be positive");
  for (std::size_t i = 0; i < c; ++i) {
    if (!(static_cast<double>(var[i]) + epsilon > 0.0)) {
      throw ShapeError("batchnorm running_var + epsilon not positive at channel " + std::to_string(i));
    }
  }
}

WeightMatrix Layer::weight_matrix() const {
  if (!weight) throw ShapeError(where(*this) + " has no weights loaded");
  const auto d = weight->data();
  return WeightMatrix(out_channels, weights_per_output(), std::vector<float>(d.begin(), d.end()));
}

void Layer::set_weight_matrix(const WeightMatrix& w) {
  if (w.rows() != out_channels || w.cols() != weights_per_output()) {
    throw ShapeError(where(*this) + ": weight matrix " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                     " does not match layer shape");
  }
  std::vector<std::size_t> shape = kind == LayerKind::conv
                                       ? std::vector<std::size_t>{out_channels, in_channels, geometry.kernel, geometry.kernel}
                                       : std::vector<std::size_t>{out_channels, in_channels};
  weight = Tensor(std::move(shape), std::vector<float>(w.data().begin(), w.data().end()));
}

std::size_t ModelGraph::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].id == id) return i;
  throw ShapeError("no layer named '" + std::string(id) + "'");
}

bool ModelGraph::contains(std::string_view id) const {
  return std::any_of(layers.begin(), layers.end(), [&](const Layer& l) { return l.id == id; });
}

std::vector<std::string> ModelGraph::consumers(std::string_view id) const {
  std::vector<std::string> out;
  for (const auto& l : layers)
    for (const auto& in : l.inputs)
      if (in == id) out.push_back(l.id);
  return out;
}

std::vector<std::string> ModelGraph::chain_between(std::string_view from, std::string_view to) const {
  std::vector<std::string> chain;
  const Layer* cur = &layer(to);
  while (true) {
    if (cur->inputs.size() != 1) break;
    const std::string& prev = cur->inputs.front();
    if (consumers(prev).size() != 1) {
      throw InputError("segment link '" + std::string(from) + "' -> '" + std::string(to) + "': '" + prev +
                       "' feeds more than one node");
    }
    if (prev == from) {
      std::reverse(chain.begin(), chain.end());
      return chain;
    }
    cur = &layer(prev);
    if (!is_per_channel_op(cur->kind)) break;
    chain.push_back(cur->id);
  }
  throw InputError("segment link '" + std::string(from) + "' -> '" + std::string(to) +
                   "' is not a direct chain of per-channel ops");
}

void ModelGraph::validate() const {
  if (input_shape.size() != 3) throw InputError("input shape must be [C, H, W]");
  std::set<std::string> seen;
  for (const auto& l : layers) {
    if (l.id.empty()) throw InputError("layer with empty id");
    if (seen.contains(l.id)) throw InputError(where(l) + ": duplicate id");
    if (l.inputs.size() != expected_arity(l.kind)) {
      throw InputError(where(l) + ": " + std::string(to_string(l.kind)) + " expects " +
                       std::to_string(expected_arity(l.kind)) + " predecessor(s), got " +
                       std::to_string(l.inputs.size()));
    }
    for (const auto& in : l.inputs) {
      if (!seen.contains(in)) throw InputError(where(l) + ": predecessor '" + in + "' missing or not earlier in order");
    }
    if (l.has_weights()) {
      if (l.out_channels == 0 || l.in_channels == 0) throw InputError(where(l) + ": channel counts must be positive");
      if (l.geometry.kernel == 0 || l.geometry.stride == 0) throw InputError(where(l) + ": kernel/stride must be positive");
      const std::size_t expect = l.out_channels * l.weights_per_output();
      if (l.weight && l.weight->size() != expect) {
        throw InputError(where(l) + ": weight holds " + std::to_string(l.weight->size()) + " values, shape declares " +
                         std::to_string(expect) + " (OC=" + std::to_string(l.out_channels) +
                         ", J=" + std::to_string(l.weights_per_output()) + ")");
      }
      if (l.weight && !l.weight->all_finite()) throw InputError(where(l) + ": weight contains NaN/Inf");
      if (!l.bias.empty() && l.bias.size() != l.out_channels) {
        throw InputError(where(l) + ": bias holds " + std::to_string(l.bias.size()) + " values, expected " +
                         std::to_string(l.out_channels));
      }
    }
    if (l.kind == LayerKind::batchnorm) {
      if (!l.batchnorm) throw InputError(where(l) + ": missing batchnorm parameters");
      try {
        l.batchnorm->validate();
      } catch (const ShapeError& e) {
        throw InputError(where(l) + ": " + e.what());
      }
    }
    seen.insert(l.id);
  }
  if (layers.empty() || layers.front().kind != LayerKind::input) throw InputError("graph must start with an input node");

  try {
    (void)infer_shapes();
  } catch (const ShapeError& e) {
    throw InputError(e.what());
  }

  std::set<std::string> in_segments;
  for (const auto& seg : segments) {
    if (seg.layers.size() < 2 || seg.layers.size() > 3) {
      throw InputError("segment '" + seg.id + "': expected 2-3 conv layers, got " + std::to_string(seg.layers.size()));
    }
    for (std::size_t i = 0; i < seg.layers.size(); ++i) {
      if (!contains(seg.layers[i])) throw InputError("segment '" + seg.id + "': unknown layer '" + seg.layers[i] + "'");
      const Layer& l = layer(seg.layers[i]);
      if (l.kind != LayerKind::conv) throw InputError("segment '" + seg.id + "': '" + l.id + "' is not a conv layer");
      if (!in_segments.insert(l.id).second) {
        throw InputError("segment '" + seg.id + "': layer '" + l.id + "' already belongs to another segment");
      }
      if (i + 1 < seg.layers.size()) {
        const Layer& next = layer(seg.layers[i + 1]);
        (void)chain_between(l.id, next.id);
        if (l.out_channels != next.in_channels) {
          throw InputError("segment '" + seg.id + "': channel mismatch between '" + l.id + "' and '" + next.id + "'");
        }
      }
    }
    if (!seg.permutations.empty()) {
      if (seg.permutations.size() != seg.layers.size() - 1) {
        throw InputError("segment '" + seg.id + "': expected " + std::to_string(seg.layers.size() - 1) + " permutations");
      }
      for (std::size_t i = 0; i < seg.permutations.size(); ++i) {
        if (seg.permutations[i].size() != layer(seg.layers[i]).out_channels) {
          throw InputError("segment '" + seg.id + "': permutation " + std::to_string(i) + " has wrong length");
        }
      }
    }
  }
}

std::map<std::string, SampleShape> ModelGraph::infer_shapes() const {
  std::map<std::string, SampleShape> shapes;
  for (const auto& l : layers) {
    auto in = [&](std::size_t i) -> const SampleShape& { return shapes.at(l.inputs.at(i)); };
    SampleShape s;
    switch (l.kind) {
      case LayerKind::input: s = input_shape; break;
      case LayerKind::conv: {
        const auto& x = in(0);
        if (x[0] != l.in_channels) {
          throw ShapeError(where(l) + ": declares IC=" + std::to_string(l.in_channels) + " but receives " +
                           std::to_string(x[0]) + " channels");
        }
        s = {l.out_channels, l.geometry.output_extent(x[1]), l.geometry.output_extent(x[2])};
        break;
      }
      case LayerKind::linear: {
        const auto& x = in(0);
        if (shape_volume(x) != l.in_channels) {
          throw ShapeError(where(l) + ": declares " + std::to_string(l.in_channels) + " input features but receives " +
                           std::to_string(shape_volume(x)));
        }
        s = {l.out_channels, 1, 1};
        break;
      }
      case LayerKind::batchnorm:
        if (l.batchnorm && l.batchnorm->channels() != in(0)[0]) {
          throw ShapeError(where(l) + ": batchnorm has " + std::to_string(l.batchnorm->channels()) +
                           " channels, input has " + std::to_string(in(0)[0]));
        }
        s = in(0);
        break;
      case LayerKind::relu:
      case LayerKind::leaky_relu:
      case LayerKind::output: s = in(0); break;
      case LayerKind::residual_add:
        if (in(0) != in(1)) {
          throw ShapeError(where(l) + ": residual-add operands differ: " + shape_string(in(0)) + " vs " +
                           shape_string(in(1)));
        }
        s = in(0);
        break;
      case LayerKind::maxpool:
        s = {in(0)[0], l.geometry.output_extent(in(0)[1]), l.geometry.output_extent(in(0)[2])};
        break;
      case LayerKind::avgpool: s = {in(0)[0], 1, 1}; break;
      case LayerKind::shortcut_pad:
        if (l.out_channels < in(0)[0] || l.geometry.stride == 0) {
          throw ShapeError(where(l) + ": shortcut-pad needs out_channels >= input channels and stride >= 1");
        }
        s = {l.out_channels, ceil_div(in(0)[1], l.geometry.stride), ceil_div(in(0)[2], l.geometry.stride)};
        break;
    }
    shapes[l.id] = std::move(s);
  }
  return shapes;
}

void apply_default_quantize_flags(ModelGraph& graph, const std::vector<std::string>& explicit_flags) {
  std::vector<Layer*> weighted;
  for (auto& l : graph.layers)
    if (l.has_weights()) weighted.push_back(&l);
  if (weighted.empty()) return;
  auto is_explicit = [&](const Layer* l) {
    return std::find(explicit_flags.begin(), explicit_flags.end(), l->id) != explicit_flags.end();
  };
  if (!is_explicit(weighted.front())) weighted.front()->quantize = false;
  if (!is_explicit(weighted.back())) weighted.back()->quantize = false;
}

Layer fold_batchnorm(const Layer& conv, const BatchNormParams& bn) {
  if (!conv.has_weights()) throw ShapeError(where(conv) + ": batchnorm can only fold into conv/linear");
  if (bn.channels() != conv.out_channels) {
    throw ShapeError(where(conv) + ": batchnorm has " + std::to_string(bn.channels()) + " channels, layer has OC=" +
                     std::to_string(conv.out_channels));
  }
  bn.validate();
  WeightMatrix w = conv.weight_matrix();
  Layer out = conv;
  out.bias.assign(conv.out_channels, 0.0f);
  for (std::size_t c = 0; c < conv.out_channels; ++c) {
    const double scale = static_cast<double>(bn.gamma[c]) / std::sqrt(static_cast<double>(bn.var[c]) + bn.epsilon);
    for (float& v : w.row(c)) v = static_cast<float>(v * scale);
    const double b = conv.bias.empty() ? 0.0 : conv.bias[c];
    out.bias[c] = static_cast<float>((b - bn.mean[c]) * scale + bn.beta[c]);
  }
  out.set_weight_matrix(w);
  return out;
}

ModelGraph fold_batchnorms(const ModelGraph& graph) {
  ModelGraph work = graph;
  std::set<std::string> removed;
  for (const auto& l : graph.layers) {
    if (l.kind != LayerKind::batchnorm) continue;
    Layer& producer = work.layer(l.inputs.at(0));
    if (!producer.has_weights() || graph.consumers(producer.id).size() != 1) continue;
    if (producer.activation.kind != ActivationKind::identity) continue;
    producer = fold_batchnorm(producer, *l.batchnorm);
    removed.insert(l.id);
  }
  return remove_and_rewire(work, removed);
}

ModelGraph fuse_activations(const ModelGraph& graph) {
  ModelGraph work = graph;
  std::set<std::string> removed;
  for (const auto& l : graph.layers) {
    if (l.kind != LayerKind::relu && l.kind != LayerKind::leaky_relu) continue;
    Layer& producer = work.layer(l.inputs.at(0));
    if (!producer.has_weights() || graph.consumers(producer.id).size() != 1) continue;
    if (producer.activation.kind != ActivationKind::identity) continue;
    producer.activation = l.kind == LayerKind::relu ? Activation{ActivationKind::relu, 0.0f}
                                                    : Activation{ActivationKind::leaky_relu, l.activation.slope};
    removed.insert(l.id);
  }
  return remove_and_rewire(work, removed);
}

ModelGraph prepare_for_quantization(const ModelGraph& graph) { return fuse_activations(fold_batchnorms(graph)); }

InputMatrix layer_input_matrix(const Layer& layer, const Tensor& input) {
  if (layer.kind == LayerKind::conv) return im2col(input, layer.geometry);
  if (layer.kind != LayerKind::linear) throw ShapeError(where(layer) + " is not a weighted layer");
  const std::size_t n = input.dim(0), features = input.size() / n;
  if (features != layer.in_channels) {
    throw ShapeError(where(layer) + ": expects " + std::to_string(layer.in_channels) + " features, got " +
                     std::to_string(features));
  }
  InputMatrix x(features, n);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t f = 0; f < features; ++f) x(f, s) = input[s * features + f];
  return x;
}

Tensor layer_output_tensor(const Layer& layer, const Tensor& columns, const Tensor& input) {
  const std::size_t n = input.dim(0);
  if (layer.kind == LayerKind::linear) return columns_to_nchw(columns, n, 1, 1);
  return columns_to_nchw(columns, n, layer.geometry.output_extent(input.dim(2)),
                         layer.geometry.output_extent(input.dim(3)));
}

Tensor run_plain_node(const Layer& l, const std::vector<const Tensor*>& in) {
  switch (l.kind) {
    case LayerKind::relu: return apply_elementwise(*in.at(0), Activation{ActivationKind::relu, 0.0f});
    case LayerKind::leaky_relu:
      return apply_elementwise(*in.at(0), Activation{ActivationKind::leaky_relu, l.activation.slope});
    case LayerKind::batchnorm: return apply_batchnorm(*in.at(0), *l.batchnorm);
    case LayerKind::residual_add: return add_tensors(*in.at(0), *in.at(1));
    case LayerKind::maxpool: return apply_maxpool(*in.at(0), l.geometry);
    case LayerKind::avgpool: return apply_avgpool(*in.at(0));
    case LayerKind::shortcut_pad: return apply_shortcut_pad(*in.at(0), l.out_channels, l.geometry.stride);
    case LayerKind::output: return *in.at(0);
    case LayerKind::input:
    case LayerKind::conv:
    case LayerKind::linear: break;
  }
  throw ShapeError(where(l) + ": not a plain node");
}

Tensor run_float_node(const Layer& l, const std::vector<const Tensor*>& in) {
  if (!l.has_weights()) return run_plain_node(l, in);
  const Tensor& x = *in.at(0);
  const Tensor cols = conv_reference(l.weight_matrix(), layer_input_matrix(l, x), l.activation, l.bias);
  return layer_output_tensor(l, cols, x);
}

ActivationMap forward_float(const ModelGraph& graph, const Tensor& input) {
  ActivationMap out;
  for (const auto& l : graph.layers) {
    if (l.kind == LayerKind::input) {
      if (input.rank() != 4 || std::vector<std::size_t>(input.shape().begin() + 1, input.shape().end()) != graph.input_shape) {
        throw ShapeError("input batch " + shape_string(input.shape()) + " does not match graph input " +
                         shape_string(graph.input_shape));
      }
      out[l.id] = input;
      continue;
    }
    std::vector<const Tensor*> args;
    for (const auto& id : l.inputs) args.push_back(&out.at(id));
    out[l.id] = run_float_node(l, args);
  }
  return out;
}

Tensor stack_samples(const std::vector<Tensor>& samples) {
  if (samples.empty()) throw ShapeError("no samples to stack");
  std::vector<std::size_t> shape{samples.size()};
  shape.insert(shape.end(), samples.front().shape().begin(), samples.front().shape().end());
  std::vector<float> data;
  data.reserve(shape_volume(shape));
  for (const auto& s : samples) {
    if (s.shape() != samples.front().shape()) throw ShapeError("samples have different shapes");
    data.insert(data.end(), s.data().begin(), s.data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace subquant
