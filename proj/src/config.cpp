#include "subquant/config.hpp"

#include <cstdlib>

#include <json.hpp>

#include "subquant/bundle.hpp"
#include "subquant/error.hpp"

namespace subquant {

namespace fs = std::filesystem;
using nlohmann::json;

ColumnSpec ColumnSpec::parse(const std::string& text) {
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || v == 0) throw InputError("bad sweep column '" + text + "'");
    return static_cast<std::size_t>(v);
  };
  if (text == "J") return {1, true};
  if (text.starts_with("J/")) return {number(text.substr(2)), true};
  return {number(text), false};
}

std::string ColumnSpec::label() const {
  if (!per_layer) return std::to_string(value);
  return value == 1 ? "J" : "J/" + std::to_string(value);
}

GranularityConfig ColumnSpec::granularity(std::size_t rows) const {
  return per_layer ? GranularityConfig::method2(rows, value) : GranularityConfig::method1(rows, value);
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  calib.seed = s;
  reorder.seed = s;
}

namespace {

template <class T>
T get(const json& j, const char* key, const std::string& ctx) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError(ctx + ": field '" + key + "' missing or of the wrong type");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& ctx) {
  return j.contains(key) ? get<T>(j, key, ctx) : fallback;
}

GranularityConfig parse_granularity(const json& j) {
  const std::string ctx = "config granularity";
  const auto mode = get<std::string>(j, "mode", ctx);
  GranularityConfig g;
  if (mode == "layerwise") {
    g = GranularityConfig::layerwise();
  } else if (mode == "channelwise") {
    g = GranularityConfig::channelwise();
  } else if (mode == "method1") {
    const auto rows = get<std::size_t>(j, "rows", ctx);
    if (j.contains("cols") && j["cols"].is_string()) {
      g = ColumnSpec::parse(j["cols"].get<std::string>()).granularity(rows);
    } else {
      g = GranularityConfig::method1(rows, get<std::size_t>(j, "cols", ctx));
    }
  } else if (mode == "method2") {
    g = GranularityConfig::method2(get<std::size_t>(j, "rows", ctx), get<std::size_t>(j, "h", ctx));
  } else {
    throw InputError(ctx + ": unknown mode '" + mode + "'");
  }
  try {
    g.validate();
  } catch (const std::exception& e) {
    throw InputError(ctx + ": " + e.what());
  }
  return g;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw InputError("config: top level must be an object");
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };

  RunConfig cfg;
  cfg.model = resolve(get<std::string>(j, "model", "config"));
  if (j.contains("calibration")) cfg.calibration = resolve(get<std::string>(j, "calibration", "config"));
  if (j.contains("eval")) {
    cfg.eval_inputs = resolve(get<std::string>(j["eval"], "inputs", "config eval"));
    cfg.eval_labels = resolve(get<std::string>(j["eval"], "labels", "config eval"));
  }
  if (j.contains("granularity")) cfg.granularity = parse_granularity(j["granularity"]);

  if (j.contains("calib")) {
    const json& c = j["calib"];
    const std::string ctx = "config calib";
    cfg.calib.alpha = get_or(c, "alpha", cfg.calib.alpha, ctx);
    cfg.calib.beta = get_or(c, "beta", cfg.calib.beta, ctx);
    cfg.calib.grid_size = get_or(c, "grid", cfg.calib.grid_size, ctx);
    cfg.calib.iterations = get_or(c, "iterations", cfg.calib.iterations, ctx);
    cfg.calib.samples = get_or(c, "samples", cfg.calib.samples, ctx);
    cfg.calib.weight_bits = get_or(c, "weight_bits", cfg.calib.weight_bits, ctx);
    cfg.calib.act_bits = get_or(c, "act_bits", cfg.calib.act_bits, ctx);
    if (c.contains("metric")) cfg.calib.metric = distance_metric_from_string(get<std::string>(c, "metric", ctx));
  }
  cfg.calib.validate();

  if (j.contains("reorder")) {
    const json& r = j["reorder"];
    const std::string ctx = "config reorder";
    cfg.reorder.population = get_or(r, "population", cfg.reorder.population, ctx);
    cfg.reorder.iterations = get_or(r, "iterations", cfg.reorder.iterations, ctx);
    cfg.reorder.max_pairs = get_or(r, "max_pairs", cfg.reorder.max_pairs, ctx);
    cfg.reorder.select_fraction = get_or(r, "select_fraction", cfg.reorder.select_fraction, ctx);
  }
  cfg.reorder.validate();

  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    const std::string ctx = "config sweep";
    cfg.sweep_rows = get_or<std::vector<std::size_t>>(s, "rows", {1}, ctx);
    if (s.contains("h")) {
      for (auto h : get<std::vector<std::size_t>>(s, "h", ctx)) {
        if (h == 0) throw InputError(ctx + ": #H must be positive");
        cfg.sweep_cols.push_back({h, true});
      }
    }
    if (s.contains("cols")) {
      if (!s["cols"].is_array()) throw InputError(ctx + ": 'cols' must be a list");
      for (const auto& c : s["cols"]) {
        cfg.sweep_cols.push_back(c.is_string() ? ColumnSpec::parse(c.get<std::string>())
                                                : ColumnSpec::parse(std::to_string(c.get<long long>())));
      }
    }
    for (auto r : cfg.sweep_rows) {
      if (r == 0) throw InputError(ctx + ": #Row must be positive");
    }
    if (cfg.sweep_rows.empty() || cfg.sweep_cols.empty()) throw InputError(ctx + ": row and column lists must be non-empty");
  }

  cfg.output = resolve(get_or<std::string>(j, "output", "out", "config"));
  cfg.set_seed(get_or<std::uint64_t>(j, "seed", 0, "config"));
  if (j.contains("formats")) {
    const auto formats = get<std::vector<std::string>>(j, "formats", "config");
    cfg.write_csv = cfg.write_json = false;
    for (const auto& f : formats) {
      if (f == "csv") cfg.write_csv = true;
      else if (f == "json") cfg.write_json = true;
      else throw InputError("config: unknown report format '" + f + "'");
    }
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("config file '" + path.string() + "' not found");
  RunConfig cfg = parse_run_config(read_file(path), path.parent_path());
  cfg.source = path;
  return cfg;
}

fs::path resolve_output_dir(const RunConfig& cfg, const std::optional<fs::path>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return cfg.output;
}

}  // namespace subquant
