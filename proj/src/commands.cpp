#include "subquant/commands.hpp"

#include <algorithm>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "subquant/analysis.hpp"
#include "subquant/bundle.hpp"
#include "subquant/error.hpp"
#include "subquant/parallel.hpp"

namespace subquant {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

class Emitter {
 public:
  Emitter(const RunConfig& cfg, const CommandOptions& opts) : cfg_(cfg) {
    result_.output_dir = resolve_output_dir(cfg, opts.out);
    fs::create_directories(result_.output_dir);
  }

  const fs::path& dir() const { return result_.output_dir; }
  void csv(const std::string& name, const std::string& text) {
    if (cfg_.write_csv) write(name, text);
  }
  void json(const std::string& name, const ojson& j) {
    if (cfg_.write_json) write(name, j.dump(2) + "\n");
  }
  void bundle(const std::string& name, const ModelGraph& g, const ScaleTable& scales) {
    save_bundle(g, dir() / name, scales);
    result_.files.push_back(fs::path(name) / kManifestName);
    result_.files.push_back(fs::path(name) / kBlobName);
  }
  CommandResult done() { return std::move(result_); }

 private:
  void write(const std::string& name, const std::string& text) {
    write_file_atomic(dir() / name, text);
    result_.files.push_back(name);
  }
  const RunConfig& cfg_;
  CommandResult result_;
};

void log(const CommandOptions& opts, const std::string& line) {
  if (opts.log) *opts.log << line << '\n';
}

RunConfig with_overrides(RunConfig cfg, const CommandOptions& opts) {
  if (opts.seed) cfg.set_seed(*opts.seed);
  return cfg;
}

ojson run_header(const char* command, const RunConfig& cfg) {
  ojson j;
  j["command"] = command;
  j["granularity"] = cfg.granularity.describe();
  j["metric"] = std::string(to_string(cfg.calib.metric));
  j["weight_bits"] = cfg.calib.weight_bits;
  j["act_bits"] = cfg.calib.act_bits;
  j["grid"] = cfg.calib.grid_size;
  j["iterations"] = cfg.calib.iterations;
  j["seed"] = cfg.seed;
  return j;
}

std::string perm_string(const Individual& perms) {
  std::string out;
  for (std::size_t s = 0; s < perms.size(); ++s) {
    if (s) out += '|';
    for (std::size_t i = 0; i < perms[s].size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(perms[s][i]);
    }
  }
  return out;
}

struct EvalSet {
  Tensor inputs;
  std::vector<int> labels;
};

EvalSet load_eval_set(const RunConfig& cfg, const ModelGraph& graph) {
  if (!cfg.eval_inputs || !cfg.eval_labels) throw InputError("config has no labeled eval set");
  auto samples = read_tensor_set(*cfg.eval_inputs);
  auto labels = read_labels(*cfg.eval_labels);
  if (samples.empty()) throw InputError("eval set '" + cfg.eval_inputs->string() + "' has no samples");
  if (labels.size() != samples.size()) {
    throw InputError("eval set has " + std::to_string(samples.size()) + " tensors but " +
                     std::to_string(labels.size()) + " labels");
  }
  if (samples.front().shape() != graph.input_shape) {
    throw InputError("eval samples have shape " + shape_string(samples.front().shape()) + ", model expects " +
                     shape_string(graph.input_shape));
  }
  return {stack_samples(samples), std::move(labels)};
}

}  // namespace

PreparedRun prepare_run(const RunConfig& cfg) {
  ModelGraph graph = prepare_for_quantization(load_bundle(cfg.model));
  if (!cfg.calibration) throw InputError("config has no calibration set");
  std::vector<Tensor> all = read_tensor_set(*cfg.calibration);
  if (all.empty()) throw InputError("calibration set '" + cfg.calibration->string() + "' has no samples");
  if (all.front().shape() != graph.input_shape) {
    throw InputError(cfg.calibration->string() + ": samples have shape " + shape_string(all.front().shape()) +
                     ", model expects " + shape_string(graph.input_shape));
  }
  std::vector<Tensor> chosen;
  for (auto i : select_samples(all.size(), cfg.calib.samples, cfg.calib.seed)) chosen.push_back(std::move(all[i]));
  CalibrationSet set = CalibrationSet::collect(graph, stack_samples(chosen));
  return {std::move(graph), std::move(set)};
}

std::string layer_report_csv(const std::vector<LayerReport>& layers) {
  std::ostringstream out;
  out << "layer,quantized,out_channels,weights_per_output,pixels,rows_per_group,cols_per_group,groups_v,groups_h,"
         "input_scale,step1_distance,step2_distance,step3_distance,distance\n";
  for (const auto& l : layers) {
    out << l.id << ',' << (l.quantized ? 1 : 0) << ',' << l.out_channels << ',' << l.weights_per_output << ','
        << l.pixels << ',' << l.rows_per_group << ',' << l.cols_per_group << ',' << l.groups_v << ',' << l.groups_h
        << ',' << format_number(l.input_scale) << ',' << format_number(l.step1_distance) << ','
        << format_number(l.step2_distance) << ',' << format_number(l.step3_distance) << ','
        << format_number(l.distance) << '\n';
  }
  return out.str();
}

double top1_accuracy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() < 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw ShapeError("logits do not match the label count");
  }
  const std::size_t n = logits.dim(0);
  const std::size_t classes = logits.size() / n;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.data().subspan(i * classes, classes);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

CommandResult cmd_quantize(RunConfig cfg, const CommandOptions& opts) {
  cfg = with_overrides(std::move(cfg), opts);
  Emitter emit(cfg, opts);
  PreparedRun run = prepare_run(cfg);
  log(opts, "quantize: " + cfg.granularity.describe() + ", " + std::to_string(run.calibration.inputs.dim(0)) +
                " calibration samples");
  const NetworkCalibration net = calibrate_network(run.graph, run.calibration, cfg.granularity, cfg.calib);

  emit.bundle("quantized", run.graph, net.scales);
  emit.csv("quantize_layers.csv", layer_report_csv(net.layers));
  ojson j = run_header("quantize", cfg);
  j["samples"] = run.calibration.inputs.dim(0);
  j["quantized_layers"] = net.scales.size();
  j["output_distance"] = net.output_distance;
  j["mean_layer_distance"] = net.mean_layer_distance;
  emit.json("quantize_summary.json", j);
  log(opts, "quantize: output distance " + format_number(net.output_distance) + ", mean layer distance " +
                format_number(net.mean_layer_distance));
  return emit.done();
}

CommandResult cmd_sweep(RunConfig cfg, const CommandOptions& opts) {
  cfg = with_overrides(std::move(cfg), opts);
  if (cfg.sweep_rows.empty() || cfg.sweep_cols.empty()) throw InputError("config has no sweep block");
  Emitter emit(cfg, opts);
  PreparedRun run = prepare_run(cfg);
  std::optional<EvalSet> eval;
  if (cfg.eval_inputs) eval = load_eval_set(cfg, run.graph);

  struct Cell {
    std::size_t rows = 0;
    ColumnSpec cols;
    bool ok = false;
    std::string error;
    double output_distance = 0.0;
    double mean_distance = 0.0;
    double accuracy = 0.0;
  };
  std::vector<Cell> cells;
  for (auto r : cfg.sweep_rows) {
    for (const auto& c : cfg.sweep_cols) {
      Cell cell;
      cell.rows = r;
      cell.cols = c;
      cells.push_back(std::move(cell));
    }
  }
  // Cells share the float references collected once above.
  parallel_for(cells.size(), opts.jobs, [&](std::size_t i) {
    Cell& cell = cells[i];
    try {
      const auto net = calibrate_network(run.graph, run.calibration, cell.cols.granularity(cell.rows), cfg.calib);
      cell.output_distance = net.output_distance;
      cell.mean_distance = net.mean_layer_distance;
      if (eval) {
        const auto acts = forward_quantized(run.graph, net.scales, eval->inputs);
        cell.accuracy = top1_accuracy(acts.at(run.graph.output_layer().id), eval->labels);
      }
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  });
  for (const auto& c : cells) {
    log(opts, "sweep: #Row=" + std::to_string(c.rows) + " #Col=" + c.cols.label() + " -> " +
                  (c.ok ? format_number(c.output_distance) : "FAILED: " + c.error));
  }

  auto matrix = [&](auto value) {
    std::ostringstream out;
    out << "#Row\\#Col";
    for (const auto& c : cfg.sweep_cols) out << ',' << c.label();
    out << '\n';
    std::size_t i = 0;
    for (auto r : cfg.sweep_rows) {
      out << r;
      for (std::size_t k = 0; k < cfg.sweep_cols.size(); ++k, ++i) {
        out << ',' << (cells[i].ok ? format_number(value(cells[i])) : "FAILED");
      }
      out << '\n';
    }
    return out.str();
  };
  std::ostringstream long_form;
  long_form << "rows,cols,status,output_distance,mean_layer_distance,accuracy,error\n";
  for (const auto& c : cells) {
    long_form << c.rows << ',' << c.cols.label() << ',' << (c.ok ? "ok" : "FAILED") << ','
              << (c.ok ? format_number(c.output_distance) : "") << ',' << (c.ok ? format_number(c.mean_distance) : "")
              << ',' << (c.ok && eval ? format_number(c.accuracy) : "") << ',';
    std::string err = c.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    long_form << err << '\n';
  }
  emit.csv("sweep_cells.csv", long_form.str());
  emit.csv("sweep_output_distance.csv", matrix([](const Cell& c) { return c.output_distance; }));
  emit.csv("sweep_mean_distance.csv", matrix([](const Cell& c) { return c.mean_distance; }));
  if (eval) emit.csv("sweep_accuracy.csv", matrix([](const Cell& c) { return c.accuracy; }));

  ojson j = run_header("sweep", cfg);
  j.erase("granularity");
  j["samples"] = run.calibration.inputs.dim(0);
  ojson list = ojson::array();
  for (const auto& c : cells) {
    ojson e;
    e["rows"] = c.rows;
    e["cols"] = c.cols.label();
    e["status"] = c.ok ? "ok" : "FAILED";
    if (c.ok) {
      e["output_distance"] = c.output_distance;
      e["mean_layer_distance"] = c.mean_distance;
      if (eval) e["accuracy"] = c.accuracy;
    } else {
      e["error"] = c.error;
    }
    list.push_back(std::move(e));
  }
  j["cells"] = std::move(list);
  emit.json("sweep_summary.json", j);
  return emit.done();
}

CommandResult cmd_reorder(RunConfig cfg, const CommandOptions& opts) {
  cfg = with_overrides(std::move(cfg), opts);
  Emitter emit(cfg, opts);
  PreparedRun run = prepare_run(cfg);
  ojson j = run_header("reorder", cfg);
  j["samples"] = run.calibration.inputs.dim(0);
  j["population"] = cfg.reorder.population;
  j["generations"] = cfg.reorder.iterations;
  j["max_pairs"] = cfg.reorder.max_pairs;
  if (run.graph.segments.empty()) {
    log(opts, "reorder: model declares no segments, nothing to do");
    j["segments"] = 0;
    j["notice"] = "model declares no segments; nothing reordered";
    emit.json("reorder_summary.json", j);
    return emit.done();
  }

  const NetworkCalibration baseline = calibrate_network(run.graph, run.calibration, cfg.granularity, cfg.calib);
  ModelGraph graph = run.graph;
  ActivationMap acts = run.calibration.references;

  std::ostringstream seg_csv, hist_csv;
  seg_csv << "segment,layers,slots,identity_score,best_score,improvement,evaluations,permutations\n";
  hist_csv << "segment,generation,best_score\n";
  ojson seg_json = ojson::array();
  for (std::size_t s = 0; s < run.graph.segments.size(); ++s) {
    const Segment seg = graph.segments[s];
    ReorderConfig rc = cfg.reorder;
    rc.seed = derive_seed(cfg.reorder.seed, {s});
    const BlockProblem block = BlockProblem::from_graph(graph, seg, acts);
    const EaResult ea = ea_search(block, cfg.granularity, rc, cfg.calib, opts.jobs);
    graph = joint_reorder(graph, seg, ea.best);
    // Block boundaries keep their order; refresh the references so later blocks
    // and the final calibration see the reordered network.
    acts = forward_float(graph, run.calibration.inputs);

    std::string layers;
    for (const auto& id : seg.layers) layers += (layers.empty() ? "" : " ") + id;
    const double gain = ea.best_score - ea.identity_score;
    seg_csv << seg.id << ',' << layers << ',' << ea.best.size() << ',' << format_number(ea.identity_score) << ','
            << format_number(ea.best_score) << ',' << format_number(gain) << ',' << ea.evaluations << ','
            << perm_string(ea.best) << '\n';
    for (std::size_t g = 0; g < ea.best_history.size(); ++g) {
      hist_csv << seg.id << ',' << g << ',' << format_number(ea.best_history[g]) << '\n';
    }
    ojson e;
    e["segment"] = seg.id;
    e["identity_score"] = ea.identity_score;
    e["best_score"] = ea.best_score;
    e["improvement"] = gain;
    e["evaluations"] = ea.evaluations;
    seg_json.push_back(std::move(e));
    log(opts, "reorder: " + seg.id + " score " + format_number(ea.identity_score) + " -> " +
                  format_number(ea.best_score));
  }

  const CalibrationSet reordered_set{run.calibration.inputs, acts};
  const NetworkCalibration final_net = calibrate_network(graph, reordered_set, cfg.granularity, cfg.calib);
  emit.bundle("reordered", graph, final_net.scales);
  emit.csv("reorder_segments.csv", seg_csv.str());
  emit.csv("reorder_history.csv", hist_csv.str());
  emit.csv("reorder_layers.csv", layer_report_csv(final_net.layers));
  j["segments"] = std::move(seg_json);
  j["baseline_output_distance"] = baseline.output_distance;
  j["baseline_mean_layer_distance"] = baseline.mean_layer_distance;
  j["final_output_distance"] = final_net.output_distance;
  j["final_mean_layer_distance"] = final_net.mean_layer_distance;
  emit.json("reorder_summary.json", j);
  return emit.done();
}

CommandResult cmd_overhead(RunConfig cfg, const CommandOptions& opts) {
  cfg = with_overrides(std::move(cfg), opts);
  Emitter emit(cfg, opts);
  const ModelGraph graph = load_bundle(cfg.model);
  const OverheadReport report = network_overhead_report(graph, cfg.granularity);
  emit.csv("overhead.csv", overhead_csv(report));
  emit.json("overhead.json", nlohmann::ordered_json::parse(overhead_json(report)));
  log(opts, "overhead: " + report.granularity + " compute " + format_number(100.0 * report.compute_relative()) + "%");
  if (!cfg.sweep_cols.empty()) {
    std::ostringstream out;
    out << "rows,cols,compute_overhead_percent,memory_overhead_percent,extra_macs,scales\n";
    const auto rows = cfg.sweep_rows.empty() ? std::vector<std::size_t>{1} : cfg.sweep_rows;
    for (auto r : rows) {
      for (const auto& c : cfg.sweep_cols) {
        const auto rep = network_overhead_report(graph, c.granularity(r));
        out << r << ',' << c.label() << ',' << format_number(100.0 * rep.compute_relative()) << ','
            << format_number(100.0 * rep.memory_relative()) << ',' << rep.extra_macs << ',' << rep.scales << '\n';
      }
    }
    emit.csv("overhead_sweep.csv", out.str());
  }
  return emit.done();
}

CommandResult cmd_eval(RunConfig cfg, const CommandOptions& opts) {
  cfg = with_overrides(std::move(cfg), opts);
  Emitter emit(cfg, opts);
  ModelGraph graph = prepare_for_quantization(load_bundle(cfg.model));
  const EvalSet eval = load_eval_set(cfg, graph);
  ScaleTable scales = load_scale_table(cfg.model);
  const bool calibrated_here = scales.empty();
  if (calibrated_here) {
    PreparedRun run = prepare_run(cfg);
    scales = calibrate_network(run.graph, run.calibration, cfg.granularity, cfg.calib).scales;
  }
  const ActivationMap fl = forward_float(graph, eval.inputs);
  const ActivationMap q = forward_quantized(graph, scales, eval.inputs);
  const std::string& out_id = graph.output_layer().id;

  std::ostringstream csv;
  csv << "layer,quantized,distance\n";
  double sum = 0.0;
  std::size_t count = 0;
  for (const Layer& l : graph.layers) {
    if (!l.has_weights()) continue;
    const double d = distance(nchw_to_columns(q.at(l.id)), nchw_to_columns(fl.at(l.id)), cfg.calib.metric);
    const bool quantized = scales.contains(l.id);
    if (quantized) {
      sum += d;
      ++count;
    }
    csv << l.id << ',' << (quantized ? 1 : 0) << ',' << format_number(d) << '\n';
  }
  ojson j = run_header("eval", cfg);
  j["scales"] = calibrated_here ? "calibrated" : "bundle";
  j["samples"] = eval.labels.size();
  j["float_accuracy"] = top1_accuracy(fl.at(out_id), eval.labels);
  j["quantized_accuracy"] = top1_accuracy(q.at(out_id), eval.labels);
  j["output_distance"] = distance(q.at(out_id), fl.at(out_id), cfg.calib.metric);
  j["mean_layer_distance"] = count ? sum / static_cast<double>(count) : 0.0;
  emit.csv("eval_layers.csv", csv.str());
  emit.json("eval_summary.json", j);
  log(opts, "eval: float top-1 " + format_number(j["float_accuracy"].get<double>()) + ", quantized top-1 " +
                format_number(j["quantized_accuracy"].get<double>()));
  return emit.done();
}

}  // namespace subquant
