// Regenerates the shipped test fixtures:
//   resnet20_tiny/            ResNet-20-style network (widths 8/16/32, 3x8x8 input, 10 classes)
//   resnet20_tiny_calib.ptqc  64 calibration samples
//   resnet20_tiny_eval.ptqc   200 eval samples, labels = float top-1
//   resnet18_shapes/          ResNet-18 architecture at 224x224, shapes only
//
// usage: make_fixtures <output dir>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <string>

#include "subquant/bundle.hpp"
#include "subquant/model.hpp"
#include "subquant/rng.hpp"

using namespace subquant;

namespace {

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

class Builder {
 public:
  Builder(ModelGraph& g, Rng* rng) : g_(g), rng_(rng) {}

  std::string input() {
    Layer l;
    l.id = "input";
    l.kind = LayerKind::input;
    return push(std::move(l));
  }

  std::string conv(const std::string& id, const std::string& in, std::size_t ic, std::size_t oc, std::size_t k,
                   std::size_t stride) {
    Layer l;
    l.id = id;
    l.kind = LayerKind::conv;
    l.inputs = {in};
    l.in_channels = ic;
    l.out_channels = oc;
    l.geometry = {k, stride, k / 2};
    if (rng_) {
      // He-normal weights with a log-uniform gain per input channel, so input
      // channels carry visibly different magnitudes.
      std::vector<double> gain(ic);
      for (auto& v : gain) v = std::exp(uniform(*rng_, -1.0, 1.0));
      const double std_dev = std::sqrt(2.0 / static_cast<double>(ic * k * k));
      std::vector<float> w(oc * ic * k * k);
      for (std::size_t o = 0; o < oc; ++o) {
        for (std::size_t c = 0; c < ic; ++c) {
          for (std::size_t t = 0; t < k * k; ++t) {
            w[(o * ic + c) * k * k + t] = static_cast<float>(normal(*rng_) * std_dev * gain[c]);
          }
        }
      }
      l.weight = Tensor({oc, ic, k, k}, std::move(w));
    }
    return push(std::move(l));
  }

  std::string linear(const std::string& id, const std::string& in, std::size_t features, std::size_t classes) {
    Layer l;
    l.id = id;
    l.kind = LayerKind::linear;
    l.inputs = {in};
    l.in_channels = features;
    l.out_channels = classes;
    if (rng_) {
      const double std_dev = std::sqrt(1.0 / static_cast<double>(features));
      std::vector<float> w(classes * features), b(classes);
      for (auto& v : w) v = static_cast<float>(normal(*rng_) * std_dev);
      for (auto& v : b) v = static_cast<float>(uniform(*rng_, -0.1, 0.1));
      l.weight = Tensor({classes, features}, std::move(w));
      l.bias = std::move(b);
    }
    return push(std::move(l));
  }

  // Skipped for shape-only graphs: batchnorm does not change shapes.
  std::string batchnorm(const std::string& id, const std::string& in, std::size_t c) {
    if (!rng_) return in;
    Layer l;
    l.id = id;
    l.kind = LayerKind::batchnorm;
    l.inputs = {in};
    BatchNormParams bn;
    for (std::size_t i = 0; i < c; ++i) {
      bn.gamma.push_back(static_cast<float>(std::exp(uniform(*rng_, -0.7, 0.7))));
      bn.beta.push_back(static_cast<float>(uniform(*rng_, -0.2, 0.2)));
      bn.mean.push_back(static_cast<float>(uniform(*rng_, -0.1, 0.1)));
      bn.var.push_back(static_cast<float>(uniform(*rng_, 0.5, 1.5)));
    }
    l.batchnorm = std::move(bn);
    return push(std::move(l));
  }

  std::string simple(const std::string& id, LayerKind kind, std::vector<std::string> inputs) {
    Layer l;
    l.id = id;
    l.kind = kind;
    l.inputs = std::move(inputs);
    return push(std::move(l));
  }

  std::string pool(const std::string& id, const std::string& in, std::size_t k, std::size_t stride) {
    Layer l;
    l.id = id;
    l.kind = LayerKind::maxpool;
    l.inputs = {in};
    l.geometry = {k, stride, k / 2};
    return push(std::move(l));
  }

  std::string shortcut_pad(const std::string& id, const std::string& in, std::size_t out_channels,
                           std::size_t stride) {
    Layer l;
    l.id = id;
    l.kind = LayerKind::shortcut_pad;
    l.inputs = {in};
    l.out_channels = out_channels;
    l.geometry.stride = stride;
    return push(std::move(l));
  }

  void segment(const std::string& id, std::vector<std::string> layers) { g_.segments.push_back({id, std::move(layers), {}}); }

 private:
  std::string push(Layer l) {
    g_.layers.push_back(std::move(l));
    return g_.layers.back().id;
  }
  ModelGraph& g_;
  Rng* rng_;
};

ModelGraph resnet20_tiny(Rng& rng) {
  ModelGraph g;
  g.input_shape = {3, 8, 8};
  Builder b(g, &rng);
  std::string x = b.input();
  x = b.conv("conv1", x, 3, 8, 3, 1);
  x = b.batchnorm("bn1", x, 8);
  x = b.simple("relu1", LayerKind::relu, {x});
  std::size_t width = 8;
  const std::size_t widths[] = {8, 16, 32};
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t blk = 0; blk < 3; ++blk) {
      const std::string p = "s" + std::to_string(s + 1) + "b" + std::to_string(blk + 1);
      const std::size_t out = widths[s];
      const std::size_t stride = (s > 0 && blk == 0) ? 2 : 1;
      std::string y = b.conv(p + "_conv1", x, width, out, 3, stride);
      y = b.batchnorm(p + "_bn1", y, out);
      y = b.simple(p + "_relu1", LayerKind::relu, {y});
      y = b.conv(p + "_conv2", y, out, out, 3, 1);
      y = b.batchnorm(p + "_bn2", y, out);
      const std::string shortcut = stride == 1 && out == width ? x : b.shortcut_pad(p + "_short", x, out, stride);
      y = b.simple(p + "_add", LayerKind::residual_add, {y, shortcut});
      x = b.simple(p + "_relu2", LayerKind::relu, {y});
      b.segment(p, {p + "_conv1", p + "_conv2"});
      width = out;
    }
  }
  x = b.simple("pool", LayerKind::avgpool, {x});
  b.linear("fc", x, 32, 10);
  apply_default_quantize_flags(g, {});
  g.validate();
  return g;
}

ModelGraph resnet18_shapes() {
  ModelGraph g;
  g.input_shape = {3, 224, 224};
  Builder b(g, nullptr);
  std::string x = b.input();
  x = b.conv("conv1", x, 3, 64, 7, 2);
  x = b.simple("relu1", LayerKind::relu, {x});
  x = b.pool("maxpool", x, 3, 2);
  std::size_t width = 64;
  const std::size_t widths[] = {64, 128, 256, 512};
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t blk = 0; blk < 2; ++blk) {
      const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(blk);
      const std::size_t out = widths[s];
      const std::size_t stride = (s > 0 && blk == 0) ? 2 : 1;
      std::string y = b.conv(p + ".conv1", x, width, out, 3, stride);
      y = b.simple(p + ".relu1", LayerKind::relu, {y});
      y = b.conv(p + ".conv2", y, out, out, 3, 1);
      const std::string shortcut = stride == 1 && out == width ? x : b.conv(p + ".downsample", x, width, out, 1, stride);
      y = b.simple(p + ".add", LayerKind::residual_add, {y, shortcut});
      x = b.simple(p + ".relu2", LayerKind::relu, {y});
      width = out;
    }
  }
  x = b.simple("avgpool", LayerKind::avgpool, {x});
  b.linear("fc", x, 512, 1000);
  apply_default_quantize_flags(g, {});
  g.validate();
  return g;
}

std::vector<Tensor> images(Rng& rng, std::size_t count, const SampleShape& shape) {
  std::vector<Tensor> out;
  const std::size_t c = shape[0], plane = shape[1] * shape[2];
  for (std::size_t n = 0; n < count; ++n) {
    Tensor t(shape);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double offset = uniform(rng, -0.5, 0.5);
      for (std::size_t i = 0; i < plane; ++i) t[ch * plane + i] = static_cast<float>(offset + normal(rng));
    }
    out.push_back(std::move(t));
  }
  return out;
}

// Random pooled features share a large positive mean, which would make one
// class win everywhere. Subtracting W * mean(features) from the bias lets the
// per-sample deviations decide the label.
void center_classifier(ModelGraph& net, const std::vector<Tensor>& samples) {
  Layer& fc = net.layer("fc");
  const Tensor feats = forward_float(net, stack_samples(samples)).at(fc.inputs.front());
  const std::size_t n = samples.size(), f = fc.in_channels;
  std::vector<double> mean(f, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < f; ++k) mean[k] += feats[i * f + k] / static_cast<double>(n);
  }
  for (std::size_t o = 0; o < fc.out_channels; ++o) {
    double dot = 0.0;
    for (std::size_t k = 0; k < f; ++k) dot += (*fc.weight)[o * f + k] * mean[k];
    fc.bias[o] = static_cast<float>(fc.bias[o] - dot);
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <output dir>\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  Rng rng(20240607);
  ModelGraph net = resnet20_tiny(rng);
  const auto calib = images(rng, 64, net.input_shape);
  center_classifier(net, calib);
  save_bundle(net, dir / "resnet20_tiny");
  write_tensor_set(dir / "resnet20_tiny_calib.ptqc", calib);
  const auto eval = images(rng, 200, net.input_shape);
  write_tensor_set(dir / "resnet20_tiny_eval.ptqc", eval);
  const Tensor logits = forward_float(net, stack_samples(eval)).at(net.output_layer().id);
  std::vector<int> labels;
  const std::size_t classes = logits.size() / eval.size();
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const auto row = logits.data().subspan(i * classes, classes);
    labels.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  write_labels(dir / "resnet20_tiny_eval.labels", labels);
  save_bundle(resnet18_shapes(), dir / "resnet18_shapes");
  std::cout << "fixtures written to " << dir.string() << '\n';
  return 0;
}
