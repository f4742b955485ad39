#include "subquant/analysis.hpp"

#include <charconv>
#include <sstream>

#include <json.hpp>

#include "subquant/error.hpp"

namespace subquant {

ComputeOverhead computation_overhead(const Layer& layer, const SubMatrixPartition& partition, std::size_t pixels) {
  if (!layer.has_weights()) throw ShapeError("layer '" + layer.id + "' has no weights");
  if (partition.out_channels() != layer.out_channels || partition.weights_per_output() != layer.weights_per_output()) {
    throw ShapeError("layer '" + layer.id + "': partition does not match the weight matrix");
  }
  ComputeOverhead o;
  const std::uint64_t oc = layer.out_channels;
  const std::uint64_t j = layer.weights_per_output();
  o.base_macs = oc * pixels * j;
  o.extra_macs = partition.groups_h() * oc * pixels;
  o.relative = static_cast<double>(partition.groups_h()) / static_cast<double>(j);
  return o;
}

MemoryOverhead memory_overhead(const SubMatrixPartition& partition) {
  MemoryOverhead m;
  m.scales = partition.group_count();
  m.weights = std::uint64_t{partition.out_channels()} * partition.weights_per_output();
  m.relative = static_cast<double>(m.scales) / static_cast<double>(m.weights);
  return m;
}

double OverheadReport::compute_relative() const {
  return base_macs ? static_cast<double>(extra_macs) / static_cast<double>(base_macs) : 0.0;
}

double OverheadReport::memory_relative() const {
  return weights ? static_cast<double>(scales) / static_cast<double>(weights) : 0.0;
}

OverheadReport network_overhead_report(const ModelGraph& graph, const GranularityConfig& granularity) {
  granularity.validate();
  const auto shapes = graph.infer_shapes();
  OverheadReport r;
  r.granularity = granularity.describe();
  for (const Layer& l : graph.layers) {
    if (!l.has_weights() || !l.quantize) continue;
    const auto it = shapes.find(l.id);
    if (it == shapes.end() || it->second.size() != 3) throw InputError("layer '" + l.id + "': output shape unknown");
    OverheadRow row;
    row.id = l.id;
    row.kernel = l.geometry.kernel;
    row.in_channels = l.in_channels;
    row.out_channels = l.out_channels;
    row.pixels = it->second[1] * it->second[2];
    const SubMatrixPartition part = make_partition(l.out_channels, l.weights_per_output(), granularity);
    row.groups_v = part.groups_v();
    row.groups_h = part.groups_h();
    row.compute = computation_overhead(l, part, row.pixels);
    row.memory = memory_overhead(part);
    r.base_macs += row.compute.base_macs;
    r.extra_macs += row.compute.extra_macs;
    r.scales += row.memory.scales;
    r.weights += row.memory.weights;
    r.layers.push_back(std::move(row));
  }
  return r;
}

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string overhead_csv(const OverheadReport& r) {
  std::ostringstream out;
  out << "layer,kernel,in_channels,out_channels,pixels,groups_v,groups_h,base_macs,extra_macs,compute_overhead,"
         "scales,weights,memory_overhead\n";
  for (const auto& l : r.layers) {
    out << l.id << ',' << l.kernel << ',' << l.in_channels << ',' << l.out_channels << ',' << l.pixels << ','
        << l.groups_v << ',' << l.groups_h << ',' << l.compute.base_macs << ',' << l.compute.extra_macs << ','
        << format_number(l.compute.relative) << ',' << l.memory.scales << ',' << l.memory.weights << ','
        << format_number(l.memory.relative) << '\n';
  }
  out << "TOTAL,,,,,,," << r.base_macs << ',' << r.extra_macs << ',' << format_number(r.compute_relative()) << ','
      << r.scales << ',' << r.weights << ',' << format_number(r.memory_relative()) << '\n';
  return out.str();
}

std::string overhead_json(const OverheadReport& r) {
  nlohmann::ordered_json j;
  j["granularity"] = r.granularity;
  j["layers"] = r.layers.size();
  j["base_macs"] = r.base_macs;
  j["extra_macs"] = r.extra_macs;
  j["compute_overhead"] = r.compute_relative();
  j["compute_overhead_percent"] = 100.0 * r.compute_relative();
  j["scales"] = r.scales;
  j["weights"] = r.weights;
  j["memory_overhead"] = r.memory_relative();
  return j.dump(2) + "\n";
}

}  // namespace subquant
