#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subquant/model.hpp"
#include "subquant/quant.hpp"

namespace subquant {

struct ComputeOverhead {
  std::uint64_t base_macs = 0;   // OC * P * K^2 * IC
  std::uint64_t extra_macs = 0;  // #H * OC * P
  double relative = 0.0;         // #H / (K^2 * IC)
};

struct MemoryOverhead {
  std::uint64_t scales = 0;   // #V * #H
  std::uint64_t weights = 0;  // OC * J
  double relative = 0.0;
};

// `pixels` is the layer's output pixel count P.
ComputeOverhead computation_overhead(const Layer& layer, const SubMatrixPartition& partition, std::size_t pixels);
MemoryOverhead memory_overhead(const SubMatrixPartition& partition);

struct OverheadRow {
  std::string id;
  std::size_t kernel = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t pixels = 0;
  std::size_t groups_v = 0;
  std::size_t groups_h = 0;
  ComputeOverhead compute;
  MemoryOverhead memory;
};

struct OverheadReport {
  std::string granularity;
  std::vector<OverheadRow> layers;  // quantized weighted layers only
  std::uint64_t base_macs = 0;
  std::uint64_t extra_macs = 0;
  std::uint64_t scales = 0;
  std::uint64_t weights = 0;

  double compute_relative() const;  // sum extra / sum base
  double memory_relative() const;   // sum scales / sum weights
};

// Per-layer and total overheads over layers with quantize=true; P comes from
// the manifest input shape (one sample).
OverheadReport network_overhead_report(const ModelGraph& graph, const GranularityConfig& granularity);

// CSV columns:
// layer,kernel,in_channels,out_channels,pixels,groups_v,groups_h,base_macs,extra_macs,
// compute_overhead,scales,weights,memory_overhead
// followed by a TOTAL row.
std::string overhead_csv(const OverheadReport& report);
std::string overhead_json(const OverheadReport& report);

// Shortest round-trip decimal form, so reports are stable byte-for-byte.
std::string format_number(double value);

}  // namespace subquant
