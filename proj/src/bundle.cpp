#include "subquant/bundle.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "subquant/error.hpp"

namespace subquant {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

void append_floats(std::string& out, std::span<const float> values) {
  for (float f : values) {
    const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(f));
    char raw[4];
    std::memcpy(raw, &bits, 4);
    out.append(raw, 4);
  }
}

void append_u32(std::string& out, std::uint32_t v) {
  const std::uint32_t le = to_le(v);
  char raw[4];
  std::memcpy(raw, &le, 4);
  out.append(raw, 4);
}

std::uint32_t read_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + offset, 4);
  return to_le(v);
}

std::vector<float> read_floats(std::string_view bytes, std::size_t offset, std::size_t count) {
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = std::bit_cast<float>(read_u32(bytes, offset + 4 * i));
  return out;
}

class BlobWriter {
 public:
  json add(std::span<const float> values) {
    json ref = {{"blob", kBlobName}, {"offset", bytes_.size()}, {"count", values.size()}};
    append_floats(bytes_, values);
    return ref;
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

struct ManifestReader {
  std::string blob;

  template <class T>
  T field(const json& j, const char* key, const std::string& ctx) const {
    const auto it = j.find(key);
    if (it == j.end()) throw InputError(ctx + ": missing field '" + key + "'");
    try {
      return it->template get<T>();
    } catch (const json::exception& e) {
      throw InputError(ctx + ": field '" + key + "' has the wrong type");
    }
  }

  template <class T>
  T field_or(const json& j, const char* key, T fallback, const std::string& ctx) const {
    return j.contains(key) ? field<T>(j, key, ctx) : fallback;
  }

  std::vector<float> tensor(const json& ref, const std::string& ctx) const {
    const auto name = field<std::string>(ref, "blob", ctx);
    if (name != kBlobName) throw InputError(ctx + ": unknown blob '" + name + "'");
    const auto offset = field<std::uint64_t>(ref, "offset", ctx);
    const auto count = field<std::uint64_t>(ref, "count", ctx);
    if (offset % 4 != 0) throw InputError(ctx + ": blob offset " + std::to_string(offset) + " is not float-aligned");
    if (offset > blob.size() || count > (blob.size() - offset) / 4) {
      throw InputError(ctx + ": blob range [" + std::to_string(offset) + ", " + std::to_string(offset + 4 * count) +
                       ") exceeds " + std::string(kBlobName) + " size " + std::to_string(blob.size()));
    }
    return read_floats(blob, offset, count);
  }
};

std::string activation_name(ActivationKind k) {
  switch (k) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::leaky_relu: return "leaky-relu";
    case ActivationKind::identity: break;
  }
  return "identity";
}

ActivationKind activation_from_name(const std::string& name, const std::string& ctx) {
  if (name == "identity") return ActivationKind::identity;
  if (name == "relu") return ActivationKind::relu;
  if (name == "leaky-relu") return ActivationKind::leaky_relu;
  throw InputError(ctx + ": unknown activation '" + name + "'");
}

json scale_set_json(const ScaleSet& s) {
  return {{"weight_bits", s.weight_bits},       {"act_bits", s.act_bits},
          {"rows_per_group", s.rows_per_group}, {"cols_per_group", s.cols_per_group},
          {"groups_v", s.groups_v},             {"groups_h", s.groups_h},
          {"input_scale", s.input_scale},       {"weight_scales", s.weight_scales}};
}

json parse_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifestName;
  if (!fs::exists(path)) throw InputError("bundle '" + dir.string() + "' has no " + std::string(kManifestName));
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": malformed manifest: " + e.what());
  }
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

ModelGraph load_bundle(const fs::path& dir) {
  const json m = parse_manifest(dir);
  ManifestReader rd;
  if (m.value("format", std::string{}) != "subquant-bundle") throw InputError("manifest: unsupported format tag");
  if (rd.field<int>(m, "version", "manifest") != kFormatVersion) throw InputError("manifest: unsupported version");
  if (fs::exists(dir / kBlobName)) rd.blob = read_file(dir / kBlobName);

  ModelGraph g;
  g.input_shape = rd.field<std::vector<std::size_t>>(m, "input_shape", "manifest");
  std::vector<std::string> explicit_flags;
  if (!m.contains("layers") || !m["layers"].is_array()) throw InputError("manifest: missing layer list");
  for (const json& jl : m["layers"]) {
    Layer l;
    l.id = rd.field<std::string>(jl, "id", "manifest layer");
    const std::string ctx = "layer '" + l.id + "'";
    l.kind = layer_kind_from_string(rd.field<std::string>(jl, "kind", ctx));
    l.inputs = rd.field_or<std::vector<std::string>>(jl, "inputs", {}, ctx);
    if (l.has_weights() || l.kind == LayerKind::shortcut_pad) {
      l.out_channels = rd.field<std::size_t>(jl, "out_channels", ctx);
    }
    if (l.has_weights()) l.in_channels = rd.field<std::size_t>(jl, "in_channels", ctx);
    if (l.kind == LayerKind::conv || l.kind == LayerKind::maxpool) {
      l.geometry.kernel = rd.field<std::size_t>(jl, "kernel", ctx);
      l.geometry.stride = rd.field_or<std::size_t>(jl, "stride", 1, ctx);
      l.geometry.padding = rd.field_or<std::size_t>(jl, "padding", 0, ctx);
    } else if (l.kind == LayerKind::shortcut_pad) {
      l.geometry.stride = rd.field_or<std::size_t>(jl, "stride", 1, ctx);
    }
    l.activation.kind = activation_from_name(rd.field_or<std::string>(jl, "activation", "identity", ctx), ctx);
    l.activation.slope = rd.field_or<float>(jl, "slope", 0.01f, ctx);
    if (jl.contains("quantize")) {
      l.quantize = rd.field<bool>(jl, "quantize", ctx);
      explicit_flags.push_back(l.id);
    }
    if (l.has_weights()) {
      if (jl.contains("weight")) {
        std::vector<std::size_t> shape =
            l.kind == LayerKind::conv
                ? std::vector<std::size_t>{l.out_channels, l.in_channels, l.geometry.kernel, l.geometry.kernel}
                : std::vector<std::size_t>{l.out_channels, l.in_channels};
        std::vector<float> data = rd.tensor(jl["weight"], ctx + " weight");
        if (data.size() != shape_volume(shape)) {
          throw InputError(ctx + ": weight blob holds " + std::to_string(data.size()) + " values, shape " +
                           shape_string(shape) + " needs " + std::to_string(shape_volume(shape)));
        }
        l.weight = Tensor(std::move(shape), std::move(data));
      }
      if (jl.contains("bias")) l.bias = rd.tensor(jl["bias"], ctx + " bias");
    }
    if (l.kind == LayerKind::batchnorm) {
      BatchNormParams bn;
      bn.gamma = rd.tensor(rd.field<json>(jl, "gamma", ctx), ctx + " gamma");
      bn.beta = rd.tensor(rd.field<json>(jl, "beta", ctx), ctx + " beta");
      bn.mean = rd.tensor(rd.field<json>(jl, "mean", ctx), ctx + " mean");
      bn.var = rd.tensor(rd.field<json>(jl, "var", ctx), ctx + " var");
      bn.epsilon = rd.field_or<float>(jl, "epsilon", 1e-5f, ctx);
      l.batchnorm = std::move(bn);
    }
    g.layers.push_back(std::move(l));
  }
  if (m.contains("segments")) {
    for (const json& js : m["segments"]) {
      Segment s;
      s.id = rd.field<std::string>(js, "id", "manifest segment");
      s.layers = rd.field<std::vector<std::string>>(js, "layers", "segment '" + s.id + "'");
      if (js.contains("permutations")) {
        for (const auto& mapping : js["permutations"]) {
          const auto values = mapping.get<std::vector<std::size_t>>();
          if (!is_bijection(values)) throw InputError("segment '" + s.id + "': permutation is not a bijection");
          s.permutations.emplace_back(values);
        }
      }
      g.segments.push_back(std::move(s));
    }
  }
  apply_default_quantize_flags(g, explicit_flags);
  g.validate();
  return g;
}

ScaleTable load_scale_table(const fs::path& dir) {
  const json m = parse_manifest(dir);
  ScaleTable table;
  if (!m.contains("quantization")) return table;
  ManifestReader rd;
  for (const auto& [id, js] : m["quantization"].items()) {
    const std::string ctx = "quantization entry '" + id + "'";
    ScaleSet s;
    s.weight_bits = rd.field<int>(js, "weight_bits", ctx);
    s.act_bits = rd.field<int>(js, "act_bits", ctx);
    s.rows_per_group = rd.field<std::size_t>(js, "rows_per_group", ctx);
    s.cols_per_group = rd.field<std::size_t>(js, "cols_per_group", ctx);
    s.groups_v = rd.field<std::size_t>(js, "groups_v", ctx);
    s.groups_h = rd.field<std::size_t>(js, "groups_h", ctx);
    s.input_scale = rd.field<float>(js, "input_scale", ctx);
    s.weight_scales = rd.field<std::vector<float>>(js, "weight_scales", ctx);
    if (s.weight_scales.size() != s.groups_v * s.groups_h) {
      throw InputError(ctx + ": scale grid size does not match groups_v x groups_h");
    }
    table[id] = std::move(s);
  }
  return table;
}

void save_bundle(const ModelGraph& g, const fs::path& dir, const ScaleTable& scales) {
  BlobWriter blob;
  json layers = json::array();
  for (const Layer& l : g.layers) {
    json jl = {{"id", l.id}, {"kind", std::string(to_string(l.kind))}, {"inputs", l.inputs}};
    if (l.has_weights() || l.kind == LayerKind::shortcut_pad) jl["out_channels"] = l.out_channels;
    if (l.has_weights()) {
      jl["in_channels"] = l.in_channels;
      jl["quantize"] = l.quantize;
      jl["activation"] = activation_name(l.activation.kind);
      if (l.activation.kind == ActivationKind::leaky_relu) jl["slope"] = l.activation.slope;
    }
    if (l.kind == LayerKind::leaky_relu) jl["slope"] = l.activation.slope;
    if (l.kind == LayerKind::conv || l.kind == LayerKind::maxpool) {
      jl["kernel"] = l.geometry.kernel;
      jl["stride"] = l.geometry.stride;
      jl["padding"] = l.geometry.padding;
    } else if (l.kind == LayerKind::shortcut_pad) {
      jl["stride"] = l.geometry.stride;
    }
    if (l.weight) jl["weight"] = blob.add(l.weight->data());
    if (!l.bias.empty()) jl["bias"] = blob.add(l.bias);
    if (l.batchnorm) {
      jl["gamma"] = blob.add(l.batchnorm->gamma);
      jl["beta"] = blob.add(l.batchnorm->beta);
      jl["mean"] = blob.add(l.batchnorm->mean);
      jl["var"] = blob.add(l.batchnorm->var);
      jl["epsilon"] = l.batchnorm->epsilon;
    }
    layers.push_back(std::move(jl));
  }
  json segments = json::array();
  for (const Segment& s : g.segments) {
    json js = {{"id", s.id}, {"layers", s.layers}};
    if (!s.permutations.empty()) {
      json perms = json::array();
      for (const auto& p : s.permutations) perms.push_back(p.mapping());
      js["permutations"] = std::move(perms);
    }
    segments.push_back(std::move(js));
  }
  json m = {{"format", "subquant-bundle"}, {"version", kFormatVersion}, {"input_shape", g.input_shape},
            {"layers", std::move(layers)},  {"segments", std::move(segments)}};
  if (!scales.empty()) {
    json q = json::object();
    for (const auto& [id, s] : scales) q[id] = scale_set_json(s);
    m["quantization"] = std::move(q);
  }
  fs::create_directories(dir);
  write_file_atomic(dir / kBlobName, blob.bytes());
  write_file_atomic(dir / kManifestName, m.dump(2) + "\n");
}

std::vector<Tensor> read_tensor_set(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("tensor set file '" + path.string() + "' not found");
  const std::string bytes = read_file(path);
  const std::string ctx = path.string();
  if (bytes.size() < 12 || bytes.compare(0, 4, "PTQC") != 0) throw InputError(ctx + ": missing PTQC header");
  const std::uint32_t count = read_u32(bytes, 4);
  const std::uint32_t rank = read_u32(bytes, 8);
  if (rank == 0 || rank > 8 || bytes.size() < 12 + 4 * std::size_t{rank}) throw InputError(ctx + ": bad rank");
  std::vector<std::size_t> shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) shape[i] = read_u32(bytes, 12 + 4 * i);
  const std::size_t per = shape_volume(shape);
  const std::size_t header = 12 + 4 * std::size_t{rank};
  if (per == 0 || bytes.size() != header + 4 * per * count) {
    throw InputError(ctx + ": payload size does not match " + std::to_string(count) + " tensors of " +
                     shape_string(shape));
  }
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    Tensor t(shape, read_floats(bytes, header + 4 * per * n, per));
    if (!t.all_finite()) throw InputError(ctx + ": tensor " + std::to_string(n) + " contains NaN/Inf");
    out.push_back(std::move(t));
  }
  return out;
}

void write_tensor_set(const fs::path& path, const std::vector<Tensor>& tensors) {
  if (tensors.empty()) throw ShapeError("empty tensor set");
  std::string bytes = "PTQC";
  append_u32(bytes, static_cast<std::uint32_t>(tensors.size()));
  const auto& shape = tensors.front().shape();
  append_u32(bytes, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) append_u32(bytes, static_cast<std::uint32_t>(d));
  for (const auto& t : tensors) {
    if (t.shape() != shape) throw ShapeError("tensor set entries must share one shape");
    append_floats(bytes, t.data());
  }
  write_file_atomic(path, bytes);
}

std::vector<int> read_labels(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<int> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      labels.push_back(std::stoi(line));
    } catch (const std::exception&) {
      throw InputError(path.string() + ": bad label '" + line + "'");
    }
  }
  return labels;
}

void write_labels(const fs::path& path, const std::vector<int>& labels) {
  std::string out;
  for (int l : labels) out += std::to_string(l) + "\n";
  write_file_atomic(path, out);
}

}  // namespace subquant
