#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sam/nn/tensor.hpp"

namespace sam {

/// A float32 array as stored in a SAMB blob.
struct SambArray {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  static SambArray from_tensor(const nn::Tensor& t);
  nn::Tensor to_tensor() const;
};

/// Blob layout: "SAMB", version u8 = 1, dtype u8 = 1 (float32), rank u8, pad u8,
/// 8 reserved bytes, rank x u32 LE dims, row-major float32 LE payload.
std::string encode_array(const SambArray& array);
SambArray decode_array(std::string_view blob);

/// Zip archive holding `meta.json` plus one blob per named array under `arrays/`.
struct SambContainer {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, SambArray> arrays;

  void put(const std::string& name, const nn::Tensor& t) { arrays[name] = SambArray::from_tensor(t); }
  bool has(const std::string& name) const { return arrays.count(name) != 0; }
  /// Throws LoadError when the array is missing.
  nn::Tensor tensor(const std::string& name) const;

  std::string to_bytes() const;
  static SambContainer from_bytes(const std::string& bytes);
};

/// Writes to a sibling temporary file, then renames over `path`.
void write_samb(const std::filesystem::path& path, const SambContainer& container);
SambContainer read_samb(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Atomic write-then-rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace sam
