#pragma once

#include <cstdint>
#include <vector>

#include "subquant/calib.hpp"
#include "subquant/model.hpp"
#include "subquant/permutation.hpp"
#include "subquant/quant.hpp"
#include "subquant/rng.hpp"

namespace subquant {

struct ReorderConfig {
  std::size_t population = 40;
  std::size_t iterations = 5;
  std::size_t max_pairs = 30;
  double select_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;  // throws InputError
  std::size_t parent_count() const;
};

// Row c of the result is row perm[c] of the input; bias follows.
Layer apply_output_permutation(const Layer& layer, const Permutation& perm);
// Input channel c of the result is channel perm[c]; its K*K weight columns move together.
Layer apply_input_permutation(const Layer& layer, const Permutation& perm);
// Per-channel parameters (batchnorm) of a node between two segment layers.
Layer apply_channel_permutation(const Layer& layer, const Permutation& perm);

// Channel counts of the interface slots: out_channels of every segment layer but the last.
std::vector<std::size_t> segment_slot_sizes(const ModelGraph& graph, const Segment& segment);

// Applies perms[i] to the output channels of segment layer i, any per-channel nodes
// after it, and the input channels of layer i+1. Block inputs and outputs keep
// their order. Records the composed reordering in the returned graph's segment.
ModelGraph joint_reorder(const ModelGraph& graph, const Segment& segment, const std::vector<Permutation>& perms);

// Draws u uniformly from [1, max_pairs] and applies u random transpositions.
Permutation mutate(const Permutation& perm, std::size_t max_pairs, Rng& rng);

// A segment cut out of the graph: its layers plus the per-channel nodes between
// them, the cached float input of the first layer and the float output of the last.
struct BlockProblem {
  std::vector<Layer> chain;
  std::vector<std::size_t> segment_positions;  // indices into chain
  Tensor input;
  Tensor reference;

  static BlockProblem from_graph(const ModelGraph& graph, const Segment& segment, const ActivationMap& float_acts);
  std::vector<std::size_t> slot_sizes() const;
};

// Reorders the chain, recalibrates every quantized layer of the block and returns
// -euclidean(quantized block output, float block output).
double block_score(const BlockProblem& block, const std::vector<Permutation>& perms,
                   const GranularityConfig& granularity, const CalibConfig& calib);

using Individual = std::vector<Permutation>;

struct EaResult {
  Individual best;
  double best_score = 0.0;
  double identity_score = 0.0;
  std::vector<double> best_history;  // best score after initialisation and after each generation
  std::size_t evaluations = 0;       // distinct individuals scored
};

// Evolutionary search over the segment's interface permutations. The identity
// individual is always part of the initial population and wins ties, so the
// result never scores below it.
EaResult ea_search(const BlockProblem& block, const GranularityConfig& granularity, const ReorderConfig& cfg,
                   const CalibConfig& calib, std::size_t jobs = 1);

}  // namespace subquant
