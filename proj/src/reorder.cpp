#include "subquant/reorder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "subquant/error.hpp"
#include "subquant/parallel.hpp"

namespace subquant {

bool is_bijection(const std::vector<std::size_t>& mapping) {
  std::vector<bool> seen(mapping.size(), false);
  for (std::size_t v : mapping) {
    if (v >= mapping.size() || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

Permutation::Permutation(std::vector<std::size_t> mapping) : mapping_(std::move(mapping)) {
  if (!is_bijection(mapping_)) throw ShapeError("permutation mapping is not a bijection");
}

Permutation Permutation::identity(std::size_t channels) {
  Permutation p;
  p.mapping_.resize(channels);
  std::iota(p.mapping_.begin(), p.mapping_.end(), std::size_t{0});
  return p;
}

bool Permutation::is_identity() const {
  for (std::size_t i = 0; i < mapping_.size(); ++i) {
    if (mapping_[i] != i) return false;
  }
  return true;
}

Permutation Permutation::then(const Permutation& next) const {
  if (next.size() != size()) throw ShapeError("composing permutations of different sizes");
  Permutation p;
  p.mapping_.resize(size());
  for (std::size_t i = 0; i < size(); ++i) p.mapping_[i] = mapping_[next.mapping_[i]];
  return p;
}

Permutation Permutation::inverse() const {
  Permutation p;
  p.mapping_.resize(size());
  for (std::size_t i = 0; i < size(); ++i) p.mapping_[mapping_[i]] = i;
  return p;
}

void Permutation::swap_positions(std::size_t a, std::size_t b) {
  if (a >= size() || b >= size()) throw ShapeError("swap position out of range");
  std::swap(mapping_[a], mapping_[b]);
}

void ReorderConfig::validate() const {
  if (population < 2) throw InputError("reorder population must be at least 2");
  if (iterations < 1) throw InputError("reorder iterations must be at least 1");
  if (max_pairs < 1) throw InputError("reorder max_pairs must be at least 1");
  if (!(select_fraction > 0.0 && select_fraction < 1.0)) throw InputError("reorder select_fraction must be in (0, 1)");
}

std::size_t ReorderConfig::parent_count() const {
  const auto n = static_cast<std::size_t>(std::ceil(select_fraction * static_cast<double>(population)));
  return std::clamp<std::size_t>(n, 1, population - 1);
}

namespace {

template <class T>
std::vector<T> permuted(const std::vector<T>& v, const Permutation& perm) {
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[perm[i]];
  return out;
}

void check_size(const Layer& layer, std::size_t expected, const Permutation& perm, const char* what) {
  if (perm.size() != expected) {
    throw ShapeError("layer '" + layer.id + "': " + what + " permutation of size " + std::to_string(perm.size()) +
                     " for " + std::to_string(expected) + " channels");
  }
}

}  // namespace

Layer apply_output_permutation(const Layer& layer, const Permutation& perm) {
  if (!layer.has_weights()) throw ShapeError("layer '" + layer.id + "' has no output channels to permute");
  check_size(layer, layer.out_channels, perm, "output");
  Layer out = layer;
  if (layer.weight) {
    const WeightMatrix w = layer.weight_matrix();
    WeightMatrix p(w.rows(), w.cols());
    for (std::size_t r = 0; r < w.rows(); ++r) std::ranges::copy(w.row(perm[r]), p.row(r).begin());
    out.set_weight_matrix(p);
  }
  if (!layer.bias.empty()) out.bias = permuted(layer.bias, perm);
  return out;
}

Layer apply_input_permutation(const Layer& layer, const Permutation& perm) {
  if (!layer.has_weights()) throw ShapeError("layer '" + layer.id + "' has no input channels to permute");
  const std::size_t j = layer.weights_per_output();
  // conv: K*K columns per channel; linear over a flattened [C, H, W] input: H*W.
  if (perm.size() == 0 || j % perm.size() != 0) check_size(layer, layer.in_channels, perm, "input");
  const std::size_t block = j / perm.size();
  if (layer.kind == LayerKind::conv) check_size(layer, layer.in_channels, perm, "input");
  Layer out = layer;
  if (layer.weight) {
    const WeightMatrix w = layer.weight_matrix();
    WeightMatrix p(w.rows(), w.cols());
    for (std::size_t r = 0; r < w.rows(); ++r) {
      for (std::size_t c = 0; c < perm.size(); ++c) {
        const auto src = w.row(r).subspan(perm[c] * block, block);
        std::ranges::copy(src, p.row(r).begin() + static_cast<std::ptrdiff_t>(c * block));
      }
    }
    out.set_weight_matrix(p);
  }
  return out;
}

Layer apply_channel_permutation(const Layer& layer, const Permutation& perm) {
  Layer out = layer;
  switch (layer.kind) {
    case LayerKind::relu:
    case LayerKind::leaky_relu:
      return out;
    case LayerKind::batchnorm:
      check_size(layer, layer.batchnorm->channels(), perm, "channel");
      out.batchnorm->gamma = permuted(layer.batchnorm->gamma, perm);
      out.batchnorm->beta = permuted(layer.batchnorm->beta, perm);
      out.batchnorm->mean = permuted(layer.batchnorm->mean, perm);
      out.batchnorm->var = permuted(layer.batchnorm->var, perm);
      return out;
    default:
      throw ShapeError("layer '" + layer.id + "' is not a per-channel node");
  }
}

std::vector<std::size_t> segment_slot_sizes(const ModelGraph& graph, const Segment& segment) {
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i + 1 < segment.layers.size(); ++i) sizes.push_back(graph.layer(segment.layers[i]).out_channels);
  return sizes;
}

namespace {

void check_perms(const std::vector<std::size_t>& sizes, const std::vector<Permutation>& perms, const std::string& seg) {
  if (perms.size() != sizes.size()) {
    throw ShapeError("segment '" + seg + "': " + std::to_string(perms.size()) + " permutations for " +
                     std::to_string(sizes.size()) + " slots");
  }
  for (std::size_t i = 0; i < perms.size(); ++i) {
    if (perms[i].size() != sizes[i]) throw ShapeError("segment '" + seg + "': permutation size mismatch in slot " + std::to_string(i));
  }
}

// Applies one slot's permutation to a chain laid out as
// [seg layer i, per-channel nodes..., seg layer i+1].
void reorder_slot(std::vector<Layer*> nodes, const Permutation& perm) {
  *nodes.front() = apply_output_permutation(*nodes.front(), perm);
  for (std::size_t k = 1; k + 1 < nodes.size(); ++k) *nodes[k] = apply_channel_permutation(*nodes[k], perm);
  *nodes.back() = apply_input_permutation(*nodes.back(), perm);
}

}  // namespace

ModelGraph joint_reorder(const ModelGraph& graph, const Segment& segment, const std::vector<Permutation>& perms) {
  check_perms(segment_slot_sizes(graph, segment), perms, segment.id);
  ModelGraph out = graph;
  for (std::size_t i = 0; i < perms.size(); ++i) {
    std::vector<Layer*> nodes{&out.layer(segment.layers[i])};
    for (const auto& id : graph.chain_between(segment.layers[i], segment.layers[i + 1])) nodes.push_back(&out.layer(id));
    nodes.push_back(&out.layer(segment.layers[i + 1]));
    reorder_slot(nodes, perms[i]);
  }
  for (auto& s : out.segments) {
    if (s.id != segment.id) continue;
    if (s.permutations.empty()) {
      s.permutations = perms;
    } else {
      for (std::size_t i = 0; i < perms.size(); ++i) s.permutations[i] = s.permutations[i].then(perms[i]);
    }
  }
  return out;
}

Permutation mutate(const Permutation& perm, std::size_t max_pairs, Rng& rng) {
  Permutation out = perm;
  const std::size_t c = perm.size();
  if (max_pairs < 1) throw InputError("max_pairs must be at least 1");
  if (c < 2) return out;
  const std::size_t pairs = 1 + uniform_index(rng, max_pairs);
  for (std::size_t k = 0; k < pairs; ++k) {
    const std::size_t a = uniform_index(rng, c);
    std::size_t b = uniform_index(rng, c - 1);
    if (b >= a) ++b;
    out.swap_positions(a, b);
  }
  return out;
}

BlockProblem BlockProblem::from_graph(const ModelGraph& graph, const Segment& segment, const ActivationMap& acts) {
  BlockProblem b;
  for (std::size_t i = 0; i < segment.layers.size(); ++i) {
    if (i > 0) {
      for (const auto& id : graph.chain_between(segment.layers[i - 1], segment.layers[i])) b.chain.push_back(graph.layer(id));
    }
    b.segment_positions.push_back(b.chain.size());
    b.chain.push_back(graph.layer(segment.layers[i]));
  }
  const Layer& first = b.chain.front();
  const auto in = acts.find(first.inputs.at(0));
  const auto out = acts.find(b.chain.back().id);
  if (in == acts.end() || out == acts.end()) throw ShapeError("segment '" + segment.id + "': missing cached activations");
  b.input = in->second;
  b.reference = out->second;
  return b;
}

std::vector<std::size_t> BlockProblem::slot_sizes() const {
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i + 1 < segment_positions.size(); ++i) sizes.push_back(chain[segment_positions[i]].out_channels);
  return sizes;
}

double block_score(const BlockProblem& block, const std::vector<Permutation>& perms,
                   const GranularityConfig& granularity, const CalibConfig& calib) {
  check_perms(block.slot_sizes(), perms, "block");
  std::vector<Layer> chain = block.chain;
  for (std::size_t i = 0; i < perms.size(); ++i) {
    std::vector<Layer*> nodes;
    for (std::size_t k = block.segment_positions[i]; k <= block.segment_positions[i + 1]; ++k) nodes.push_back(&chain[k]);
    reorder_slot(nodes, perms[i]);
  }
  // Float targets follow the reordered chain; the quantized path feeds on itself.
  Tensor fl = block.input;
  Tensor q = block.input;
  for (const Layer& l : chain) {
    Tensor next_fl = run_float_node(l, {&fl});
    if (l.has_weights() && l.quantize) {
      q = calibrate_layer(l, q, next_fl, granularity, calib).output;
    } else {
      q = run_float_node(l, {&q});
    }
    fl = std::move(next_fl);
  }
  return -distance(q, block.reference, DistanceMetric::euclidean);
}

EaResult ea_search(const BlockProblem& block, const GranularityConfig& granularity, const ReorderConfig& cfg,
                   const CalibConfig& calib, std::size_t jobs) {
  cfg.validate();
  const auto sizes = block.slot_sizes();
  std::map<Individual, double> cache;

  auto score_all = [&](const std::vector<Individual>& pop) {
    std::vector<Individual> fresh;
    for (const auto& ind : pop) {
      if (!cache.contains(ind) && std::find(fresh.begin(), fresh.end(), ind) == fresh.end()) fresh.push_back(ind);
    }
    std::vector<double> scores(fresh.size());
    parallel_for(fresh.size(), jobs, [&](std::size_t i) { scores[i] = block_score(block, fresh[i], granularity, calib); });
    for (std::size_t i = 0; i < fresh.size(); ++i) cache.emplace(fresh[i], scores[i]);
    std::vector<double> out;
    for (const auto& ind : pop) out.push_back(cache.at(ind));
    return out;
  };
  auto breed = [&](const Individual& parent, Rng& rng) {
    Individual child;
    for (const auto& p : parent) child.push_back(mutate(p, cfg.max_pairs, rng));
    return child;
  };

  Individual identity;
  for (auto c : sizes) identity.push_back(Permutation::identity(c));
  std::vector<Individual> pop{identity};
  for (std::size_t i = 1; i < cfg.population; ++i) {
    Rng rng(derive_seed(cfg.seed, {0, i}));
    pop.push_back(breed(identity, rng));
  }
  std::vector<double> scores = score_all(pop);

  EaResult result;
  result.identity_score = scores.front();
  // Stable ordering by descending score; earlier individuals win ties, which
  // keeps the identity ahead of equally scored reorderings.
  auto rank = [&] {
    std::vector<std::size_t> order(pop.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<Individual> p;
    std::vector<double> s;
    for (auto i : order) {
      p.push_back(std::move(pop[i]));
      s.push_back(scores[i]);
    }
    pop = std::move(p);
    scores = std::move(s);
  };
  rank();
  result.best_history.push_back(scores.front());

  const std::size_t parents = cfg.parent_count();
  for (std::size_t gen = 1; gen <= cfg.iterations; ++gen) {
    pop.resize(parents);
    scores.resize(parents);
    std::vector<Individual> children;
    for (std::size_t k = 0; k < cfg.population - parents; ++k) {
      Rng rng(derive_seed(cfg.seed, {gen, k}));
      const auto& parent = pop[uniform_index(rng, parents)];
      children.push_back(breed(parent, rng));
    }
    const auto child_scores = score_all(children);
    pop.insert(pop.end(), children.begin(), children.end());
    scores.insert(scores.end(), child_scores.begin(), child_scores.end());
    rank();
    result.best_history.push_back(scores.front());
  }
  result.best = pop.front();
  result.best_score = scores.front();
  result.evaluations = cache.size();
  return result;
}

}  // namespace subquant
