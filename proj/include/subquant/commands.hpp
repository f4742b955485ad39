#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "subquant/calib.hpp"
#include "subquant/config.hpp"
#include "subquant/reorder.hpp"

namespace subquant {

struct CommandOptions {
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::ostream* log = nullptr;  // progress lines; null for silence
};

// Files written by a command, relative to its output directory.
struct CommandResult {
  std::filesystem::path output_dir;
  std::vector<std::filesystem::path> files;
};

// quantized/ (bundle with scales), quantize_layers.csv, quantize_summary.json
CommandResult cmd_quantize(RunConfig cfg, const CommandOptions& opts);
// sweep_cells.csv, sweep_output_distance.csv, sweep_mean_distance.csv,
// sweep_accuracy.csv (with an eval set), sweep_summary.json
CommandResult cmd_sweep(RunConfig cfg, const CommandOptions& opts);
// reordered/ (bundle with permutations and scales), reorder_segments.csv,
// reorder_history.csv, reorder_summary.json
CommandResult cmd_reorder(RunConfig cfg, const CommandOptions& opts);
// overhead.csv, overhead.json, overhead_sweep.csv (with sweep columns)
CommandResult cmd_overhead(RunConfig cfg, const CommandOptions& opts);
// eval_layers.csv, eval_summary.json
CommandResult cmd_eval(RunConfig cfg, const CommandOptions& opts);

// Shared plumbing, exposed for tests.
struct PreparedRun {
  ModelGraph graph;  // BN folded, activations fused
  CalibrationSet calibration;
};
PreparedRun prepare_run(const RunConfig& cfg);

std::string layer_report_csv(const std::vector<LayerReport>& layers);

// Top-1 accuracy of a logits tensor [N, classes, ...] against labels.
double top1_accuracy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace subquant
