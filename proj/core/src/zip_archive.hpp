#pragma once

#include <string>
#include <utility>
#include <vector>

namespace sam::detail {

struct ZipEntry {
  std::string name;
  std::string data;
};

/// Serializes entries as an uncompressed zip archive with fixed timestamps,
/// so identical inputs give identical bytes.
std::string write_zip(const std::vector<ZipEntry>& entries);

/// Parses stored or deflated entries; throws LoadError on malformed input.
std::vector<ZipEntry> read_zip(const std::string& bytes);

}  // namespace sam::detail
