#include "subquant/calib.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "subquant/error.hpp"
#include "subquant/rng.hpp"

namespace subquant {

namespace {

struct RowStats {
  double sse = 0.0;
  double dot = 0.0;
  double out_sq = 0.0;
  double ref_sq = 0.0;
};

RowStats row_stats(std::span<const float> out, std::span<const float> ref) {
  RowStats s;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double a = out[i], b = ref[i], d = a - b;
    s.sse += d * d;
    s.dot += a * b;
    s.out_sq += a * a;
    s.ref_sq += b * b;
  }
  return s;
}

// Comparison key: the squared error for euclidean (same ordering as the
// distance), the distance itself for cosine.
double objective_key(const std::vector<RowStats>& rows, DistanceMetric metric) {
  if (metric == DistanceMetric::euclidean) {
    double sse = 0.0;
    for (const auto& r : rows) sse += r.sse;
    return sse;
  }
  double dot = 0.0, nq = 0.0, nr = 0.0;
  for (const auto& r : rows) {
    dot += r.dot;
    nq += r.out_sq;
    nr += r.ref_sq;
  }
  if (nq == 0.0 && nr == 0.0) return 0.0;
  if (nq == 0.0 || nr == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(nq) * std::sqrt(nr));
}

double key_to_distance(double key, DistanceMetric metric) {
  return metric == DistanceMetric::euclidean ? std::sqrt(key) : key;
}

std::span<const float> target_row(const Tensor& target, std::size_t c) {
  const std::size_t p = target.dim(1);
  return target.data().subspan(c * p, p);
}

// Row statistics of the sub-layerwise output for every output channel.
std::vector<RowStats> quantized_row_stats(const LayerProblem& pr, const SubMatrixPartition& part,
                                          const ScaleSet& scales, const PartialSums& sums) {
  const std::size_t oc = pr.weights.rows(), p = pr.input.cols();
  std::vector<RowStats> rows(oc);
  std::vector<float> out(p);
  for (std::size_t c = 0; c < oc; ++c) {
    const std::size_t v = part.group_of_row(c);
    std::span<const float> row_scales(scales.weight_scales.data() + v * part.groups_h(), part.groups_h());
    combine_row(sums, c, row_scales, scales.input_scale, pr.bias.empty() ? 0.0 : pr.bias[c], pr.activation, out);
    rows[c] = row_stats(out, target_row(pr.target, c));
  }
  return rows;
}

double group_max_abs(const WeightMatrix& w, const SubMatrixPartition& p, std::size_t v, std::size_t h) {
  const IndexRange rows = p.row_range(v), cols = p.col_range(h);
  double m = 0.0;
  for (std::size_t c = rows.begin; c < rows.end; ++c)
    for (std::size_t j = cols.begin; j < cols.end; ++j) m = std::max(m, std::fabs(static_cast<double>(w(c, j))));
  return m;
}

}  // namespace

std::string_view to_string(DistanceMetric metric) {
  return metric == DistanceMetric::euclidean ? "euclidean" : "cosine";
}

DistanceMetric distance_metric_from_string(std::string_view name) {
  if (name == "euclidean") return DistanceMetric::euclidean;
  if (name == "cosine") return DistanceMetric::cosine;
  throw InputError("unknown distance metric '" + std::string(name) + "'");
}

void CalibConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0 && beta >= 1.0)) throw InputError("calibration requires 0 < alpha <= 1 <= beta");
  if (grid_size < 2) throw InputError("calibration grid size n must be >= 2");
  if (iterations < 1) throw InputError("calibration iterations must be >= 1");
  if (samples < 1) throw InputError("calibration sample count must be >= 1");
  if (weight_bits < 2 || weight_bits > 16 || act_bits < 2 || act_bits > 16) {
    throw InputError("bit-widths must be in [2, 16]");
  }
}

std::vector<float> scale_space(double alpha, double beta, float delta, std::size_t n) {
  if (!(delta > 0.0f)) throw ShapeError("scale_space needs a positive center scale");
  if (n <= 1) return {delta};
  std::vector<float> out(n);
  const double lo = alpha * delta, hi = beta * delta;
  const double step = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(i + 1 == n ? hi : lo + step * static_cast<double>(i));
  return out;
}

double distance(const Tensor& x, const Tensor& reference, DistanceMetric metric) {
  if (x.shape() != reference.shape()) {
    throw ShapeError("distance between " + shape_string(x.shape()) + " and " + shape_string(reference.shape()));
  }
  if (x.empty()) return 0.0;
  const std::size_t rows = x.rank() > 1 ? x.dim(0) : 1;
  const std::size_t len = x.size() / rows;
  std::vector<RowStats> stats(rows);
  for (std::size_t r = 0; r < rows; ++r) stats[r] = row_stats(x.data().subspan(r * len, len), reference.data().subspan(r * len, len));
  return key_to_distance(objective_key(stats, metric), metric);
}

LayerProblem LayerProblem::from_layer(const Layer& layer, const Tensor& input, const Tensor& target) {
  LayerProblem pr{layer.weight_matrix(), layer.bias, layer.activation, layer_input_matrix(layer, input),
                  nchw_to_columns(target)};
  if (pr.target.dim(0) != pr.weights.rows() || pr.target.dim(1) != pr.input.cols()) {
    throw ShapeError("layer '" + layer.id + "': reference output " + shape_string(target.shape()) +
                     " does not match the layer");
  }
  return pr;
}

InputScaleSearch search_input_scale(const LayerProblem& pr, const SubMatrixPartition* part, const ScaleSet* ws,
                                    const CalibConfig& cfg, std::optional<float> center,
                                    std::optional<float> incumbent) {
  const std::size_t oc = pr.weights.rows(), j = pr.weights.cols(), p = pr.input.cols();
  if (p == 0) throw InputError("empty calibration set");
  if (ws && !part) throw ShapeError("weight scales given without a partition");

  CodeMatrix wcodes;
  if (ws) wcodes = quantize_weights(pr.weights, *part, *ws);

  std::vector<double> acc(p);
  std::vector<float> out(p);
  auto evaluate = [&](float scale) {
    const CodeMatrix xc = quantize_inputs(pr.input, QuantSpec{cfg.act_bits, scale});
    std::vector<RowStats> rows(oc);
    if (ws) {
      ScaleSet s = *ws;
      s.input_scale = scale;
      const PartialSums sums = compute_all_partial_sums(wcodes, xc, *part, s.weight_bits, s.act_bits);
      rows = quantized_row_stats(pr, *part, s, sums);
    } else {
      for (std::size_t c = 0; c < oc; ++c) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t jj = 0; jj < j; ++jj) {
          const double wv = pr.weights(c, jj);
          if (wv == 0.0) continue;
          const std::int32_t* xr = xc.row(jj);
          for (std::size_t q = 0; q < p; ++q) acc[q] += wv * xr[q];
        }
        const double b = pr.bias.empty() ? 0.0 : pr.bias[c];
        for (std::size_t q = 0; q < p; ++q) out[q] = static_cast<float>(pr.activation(scale * acc[q] + b));
        rows[c] = row_stats(out, target_row(pr.target, c));
      }
    }
    return objective_key(rows, cfg.metric);
  };

  const float mid = center ? *center : init_scale(pr.input.data(), cfg.act_bits);
  std::optional<InputScaleSearch> best;
  if (incumbent) best = InputScaleSearch{*incumbent, evaluate(*incumbent)};
  for (float cand : scale_space(cfg.alpha, cfg.beta, mid, cfg.grid_size)) {
    const double key = evaluate(cand);
    if (!best || key < best->distance) best = InputScaleSearch{cand, key};
  }
  best->distance = key_to_distance(best->distance, cfg.metric);
  return *best;
}

ScaleSet search_weight_scales(const LayerProblem& pr, const SubMatrixPartition& part, float input_scale,
                              const CalibConfig& cfg, WeightSearchTrace* trace) {
  const WeightMatrix& w = pr.weights;
  if (part.out_channels() != w.rows() || part.weights_per_output() != w.cols()) {
    throw ShapeError("partition does not cover the weight matrix");
  }
  ScaleSet scales = ScaleSet::for_partition(part, cfg.weight_bits, cfg.act_bits);
  scales.input_scale = input_scale;
  std::vector<bool> degenerate(part.group_count());
  for (std::size_t v = 0; v < part.groups_v(); ++v) {
    for (std::size_t h = 0; h < part.groups_h(); ++h) {
      degenerate[v * part.groups_h() + h] = group_max_abs(w, part, v, h) == 0.0;
      scales.weight_scale(v, h) = init_group_scale(w, part, v, h, cfg.weight_bits);
    }
  }

  const CodeMatrix xc = quantize_inputs(pr.input, QuantSpec{cfg.act_bits, input_scale});
  CodeMatrix wc = quantize_weights(w, part, scales);
  PartialSums sums = compute_all_partial_sums(wc, xc, part, cfg.weight_bits, cfg.act_bits);
  std::vector<RowStats> rows = quantized_row_stats(pr, part, scales, sums);
  double current = objective_key(rows, cfg.metric);
  if (trace) trace->initial = key_to_distance(current, cfg.metric);

  const std::size_t p = pr.input.cols();
  std::vector<float> out(p);
  std::vector<std::int32_t> last_codes, codes;
  // Re-evaluates the rows of group v with the current codes/sums and scale row.
  auto refresh_rows = [&](std::size_t v, std::span<const float> row_scales, std::vector<RowStats>& dst) {
    const IndexRange r = part.row_range(v);
    for (std::size_t c = r.begin; c < r.end; ++c) {
      combine_row(sums, c, row_scales, input_scale, pr.bias.empty() ? 0.0 : pr.bias[c], pr.activation, out);
      dst[c] = row_stats(out, target_row(pr.target, c));
    }
  };
  auto group_codes = [&](std::size_t v, std::size_t h, std::vector<std::int32_t>& dst) {
    const IndexRange r = part.row_range(v), cr = part.col_range(h);
    dst.clear();
    for (std::size_t c = r.begin; c < r.end; ++c)
      for (std::size_t jj = cr.begin; jj < cr.end; ++jj) dst.push_back(wc.codes[c * wc.cols + jj]);
  };

  std::vector<float> row_scales(part.groups_h());
  std::vector<RowStats> trial = rows;
  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    for (std::size_t v = 0; v < part.groups_v(); ++v) {
      for (std::size_t h = 0; h < part.groups_h(); ++h) {
        if (degenerate[v * part.groups_h() + h]) continue;
        const IndexRange r = part.row_range(v);
        const float snapshot = scales.weight_scale(v, h);
        float best_scale = snapshot;
        double best_key = current;
        std::copy(scales.weight_scales.begin() + v * part.groups_h(),
                  scales.weight_scales.begin() + (v + 1) * part.groups_h(), row_scales.begin());
        group_codes(v, h, last_codes);
        trial = rows;
        for (float cand : scale_space(cfg.alpha, cfg.beta, snapshot, cfg.grid_size)) {
          quantize_weight_group(w, part, v, h, QuantSpec{cfg.weight_bits, cand}, wc);
          group_codes(v, h, codes);
          // identical codes give identical partial sums; only the rescale changes
          if (codes != last_codes) {
            compute_partial_sums(wc, xc, part, r, h, cfg.weight_bits, cfg.act_bits, sums);
            last_codes.swap(codes);
          }
          row_scales[h] = cand;
          refresh_rows(v, row_scales, trial);
          const double key = objective_key(trial, cfg.metric);
          if (trace) ++trace->evaluations;
          if (key < best_key) {
            best_key = key;
            best_scale = cand;
          }
        }
        scales.weight_scale(v, h) = best_scale;
        quantize_weight_group(w, part, v, h, QuantSpec{cfg.weight_bits, best_scale}, wc);
        compute_partial_sums(wc, xc, part, r, h, cfg.weight_bits, cfg.act_bits, sums);
        row_scales[h] = best_scale;
        refresh_rows(v, row_scales, rows);
        current = objective_key(rows, cfg.metric);
        if (trace) trace->after_group.push_back(key_to_distance(current, cfg.metric));
      }
    }
    if (trace) trace->after_sweep.push_back(key_to_distance(current, cfg.metric));
  }
  return scales;
}

double evaluate_scales(const LayerProblem& pr, const SubMatrixPartition& part, const ScaleSet& scales,
                       DistanceMetric metric) {
  const CodeMatrix wc = quantize_weights(pr.weights, part, scales);
  const CodeMatrix xc = quantize_inputs(pr.input, QuantSpec{scales.act_bits, scales.input_scale});
  const PartialSums sums = compute_all_partial_sums(wc, xc, part, scales.weight_bits, scales.act_bits);
  return key_to_distance(objective_key(quantized_row_stats(pr, part, scales, sums), metric), metric);
}

LayerCalibration calibrate_layer(const Layer& layer, const Tensor& input, const Tensor& target,
                                 const GranularityConfig& granularity, const CalibConfig& cfg) {
  cfg.validate();
  if (!layer.has_weights()) throw ShapeError("layer '" + layer.id + "' has no weights to calibrate");
  const LayerProblem pr = LayerProblem::from_layer(layer, input, target);
  const SubMatrixPartition part = make_partition(pr.weights.rows(), pr.weights.cols(), granularity);

  LayerCalibration out;
  const InputScaleSearch step1 = search_input_scale(pr, nullptr, nullptr, cfg);
  out.step1_distance = step1.distance;

  out.scales = search_weight_scales(pr, part, step1.scale, cfg);
  out.step2_distance = evaluate_scales(pr, part, out.scales, cfg.metric);

  const InputScaleSearch step3 = search_input_scale(pr, &part, &out.scales, cfg, step1.scale, step1.scale);
  out.scales.input_scale = step3.scale;
  out.step3_distance = step3.distance;

  const Tensor cols = quantized_forward_layer(pr.weights, pr.input, part, out.scales, pr.bias, pr.activation);
  out.final_distance = evaluate_scales(pr, part, out.scales, cfg.metric);
  out.output = layer_output_tensor(layer, cols, input);
  return out;
}

CalibrationSet CalibrationSet::collect(const ModelGraph& graph, Tensor inputs) {
  CalibrationSet set;
  set.references = forward_float(graph, inputs);
  set.inputs = std::move(inputs);
  return set;
}

NetworkCalibration calibrate_network(const ModelGraph& graph, const CalibrationSet& set,
                                     const GranularityConfig& granularity, const CalibConfig& cfg) {
  cfg.validate();
  NetworkCalibration result;
  ActivationMap acts;
  double sum = 0.0;
  std::size_t quantized = 0;
  for (const auto& l : graph.layers) {
    if (l.kind == LayerKind::input) {
      acts[l.id] = set.inputs;
      continue;
    }
    std::vector<const Tensor*> args;
    for (const auto& id : l.inputs) args.push_back(&acts.at(id));
    const auto ref = set.references.find(l.id);
    if (ref == set.references.end()) throw ShapeError("no float reference for layer '" + l.id + "'");

    if (!l.has_weights()) {
      acts[l.id] = run_plain_node(l, args);
      continue;
    }
    LayerReport rep;
    rep.id = l.id;
    rep.out_channels = l.out_channels;
    rep.weights_per_output = l.weights_per_output();
    if (l.quantize) {
      LayerCalibration lc = calibrate_layer(l, *args[0], ref->second, granularity, cfg);
      rep.quantized = true;
      rep.rows_per_group = lc.scales.rows_per_group;
      rep.cols_per_group = lc.scales.cols_per_group;
      rep.groups_v = lc.scales.groups_v;
      rep.groups_h = lc.scales.groups_h;
      rep.input_scale = lc.scales.input_scale;
      rep.step1_distance = lc.step1_distance;
      rep.step2_distance = lc.step2_distance;
      rep.step3_distance = lc.step3_distance;
      rep.distance = lc.final_distance;
      result.scales[l.id] = std::move(lc.scales);
      acts[l.id] = std::move(lc.output);
      sum += rep.distance;
      ++quantized;
    } else {
      acts[l.id] = run_float_node(l, args);
      rep.distance = distance(nchw_to_columns(acts[l.id]), nchw_to_columns(ref->second), cfg.metric);
    }
    rep.pixels = acts[l.id].size() / l.out_channels;
    result.layers.push_back(std::move(rep));
  }
  const std::string& out_id = graph.output_layer().id;
  result.output = acts.at(out_id);
  result.output_distance = distance(result.output, set.references.at(out_id), cfg.metric);
  result.mean_layer_distance = quantized ? sum / static_cast<double>(quantized) : 0.0;
  return result;
}

ActivationMap forward_quantized(const ModelGraph& graph, const std::map<std::string, ScaleSet>& scales,
                                const Tensor& input) {
  ActivationMap acts;
  for (const auto& l : graph.layers) {
    if (l.kind == LayerKind::input) {
      acts[l.id] = input;
      continue;
    }
    std::vector<const Tensor*> args;
    for (const auto& id : l.inputs) args.push_back(&acts.at(id));
    const auto it = scales.find(l.id);
    if (l.has_weights() && it != scales.end()) {
      const WeightMatrix w = l.weight_matrix();
      const SubMatrixPartition part = it->second.partition(w.rows(), w.cols());
      const Tensor cols =
          quantized_forward_layer(w, layer_input_matrix(l, *args[0]), part, it->second, l.bias, l.activation);
      acts[l.id] = layer_output_tensor(l, cols, *args[0]);
    } else {
      acts[l.id] = run_float_node(l, args);
    }
  }
  return acts;
}

std::vector<std::size_t> select_samples(std::size_t total, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count >= total) return idx;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t k = i + static_cast<std::size_t>(uniform_index(rng, total - i));
    std::swap(idx[i], idx[k]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace subquant
