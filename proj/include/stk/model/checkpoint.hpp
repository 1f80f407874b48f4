#pragma once

// Binary tensor archive: "STK1", then per tensor a u32 name length, the
// name, a u32 rank, u32 extents and the f32 payload, little-endian, until
// end of file. A JSON sidecar "<path>.json" carries the configuration.

#include <filesystem>
#include <string>
#include <vector>

#include "stk/nn/layers.hpp"

namespace stk::model {

std::string encode_tensors(const nn::ParameterList<float>& tensors);
nn::ParameterList<float> decode_tensors(std::string_view bytes);

/// Writes the archive and its sidecar; each file is written to a temporary
/// name first and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const nn::ParameterList<float>& tensors,
                     const std::string& sidecar_json);
nn::ParameterList<float> load_checkpoint_tensors(const std::filesystem::path& path);
std::string load_checkpoint_sidecar(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& path);

/// Copies values into `dst` by name; every destination needs a source of the
/// same shape.
template <typename T>
void assign_by_name(const nn::ParameterList<float>& src, nn::ParameterList<T>& dst);

}  // namespace stk::model
