#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "subquant/model.hpp"
#include "subquant/quant.hpp"

namespace subquant {

// Model bundle: a directory holding manifest.json and tensors.bin.
//
// manifest.json
//   format        "subquant-bundle", version 1
//   input_shape   [C, H, W]
//   layers        [{id, kind, inputs, out_channels, in_channels, kernel, stride,
//                   padding, activation, slope, quantize,
//                   weight|bias|gamma|beta|mean|var: {blob, offset, count}, epsilon}]
//   segments      [{id, layers, permutations?}]
//   quantization  {layer id: {weight_bits, act_bits, rows_per_group, cols_per_group,
//                  groups_v, groups_h, input_scale, weight_scales}}   (optional)
// tensors.bin: little-endian IEEE-754 float32 values; offsets are in bytes.
//
// Weight references may be omitted entirely for shape-only manifests.
inline constexpr std::string_view kManifestName = "manifest.json";
inline constexpr std::string_view kBlobName = "tensors.bin";

using ScaleTable = std::map<std::string, ScaleSet>;

ModelGraph load_bundle(const std::filesystem::path& dir);
ScaleTable load_scale_table(const std::filesystem::path& dir);
void save_bundle(const ModelGraph& graph, const std::filesystem::path& dir, const ScaleTable& scales = {});

// Tensor set file: "PTQC", u32 count, u32 rank, u32 dims[rank], then count
// little-endian float32 tensors of that shape.
std::vector<Tensor> read_tensor_set(const std::filesystem::path& path);
void write_tensor_set(const std::filesystem::path& path, const std::vector<Tensor>& tensors);

// One integer class label per line.
std::vector<int> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);

// Writes via a sibling temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace subquant
