#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "subquant/calib.hpp"
#include "subquant/quant.hpp"
#include "subquant/reorder.hpp"

namespace subquant {

// One sweep column: a fixed #Col, or a per-layer fraction J/k (#H = k).
struct ColumnSpec {
  std::size_t value = 1;
  bool per_layer = false;

  static ColumnSpec parse(const std::string& text);  // "36", "J", "J/4"
  std::string label() const;
  GranularityConfig granularity(std::size_t rows) const;
};

inline constexpr const char* kOutputDirEnv = "SUBQUANT_OUT";

// JSON run configuration. Relative paths are resolved against the directory of
// the config file.
//
// {
//   "model": "bundle-dir", "calibration": "calib.ptqc",
//   "eval": {"inputs": "eval.ptqc", "labels": "eval.labels"},
//   "granularity": {"mode": "method1", "rows": 1, "cols": 36},   // or "h": 2 for method2
//   "calib": {"alpha": 0.5, "beta": 1.5, "grid": 100, "iterations": 2, "metric": "euclidean",
//             "samples": 64, "weight_bits": 4, "act_bits": 8},
//   "reorder": {"population": 40, "iterations": 5, "max_pairs": 30, "select_fraction": 0.5},
//   "sweep": {"rows": [1, 2], "cols": ["J", "J/2"]},   // or "h": [1, 2, 4]
//   "output": "out", "seed": 0, "formats": ["csv", "json"]
// }
struct RunConfig {
  std::filesystem::path source;
  std::filesystem::path model;
  std::optional<std::filesystem::path> calibration;
  std::optional<std::filesystem::path> eval_inputs;
  std::optional<std::filesystem::path> eval_labels;
  GranularityConfig granularity;
  CalibConfig calib;
  ReorderConfig reorder;
  std::vector<std::size_t> sweep_rows;
  std::vector<ColumnSpec> sweep_cols;
  std::filesystem::path output;
  std::uint64_t seed = 0;
  bool write_csv = true;
  bool write_json = true;

  // Seed propagates to calibration sampling and the reordering search.
  void set_seed(std::uint64_t s);
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir);

// Output directory precedence: explicit flag, then $SUBQUANT_OUT, then the config.
std::filesystem::path resolve_output_dir(const RunConfig& cfg, const std::optional<std::filesystem::path>& flag);

}  // namespace subquant
