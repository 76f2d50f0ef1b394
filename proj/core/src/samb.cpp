#include "sam/samb.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "sam/errors.hpp"
#include "zip_archive.hpp"

namespace sam {

namespace {

static_assert(std::endian::native == std::endian::little, "SAMB I/O assumes a little-endian host");

constexpr char kMagic[4] = {'S', 'A', 'M', 'B'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kFloat32 = 1;
constexpr std::size_t kHeaderBytes = 16;
constexpr std::string_view kArrayPrefix = "arrays/";

std::size_t numel(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

}  // namespace

SambArray SambArray::from_tensor(const nn::Tensor& t) {
  SambArray a;
  for (int d : t.shape()) a.dims.push_back(static_cast<std::uint32_t>(d));
  a.values.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) a.values[i] = static_cast<float>(t[i]);
  return a;
}

nn::Tensor SambArray::to_tensor() const {
  nn::Shape shape;
  for (std::uint32_t d : dims) shape.push_back(static_cast<int>(d));
  nn::Tensor t(shape);
  for (std::size_t i = 0; i < values.size(); ++i) t[i] = static_cast<double>(values[i]);
  return t;
}

std::string encode_array(const SambArray& array) {
  if (array.dims.size() > 255) throw UsageError("SAMB arrays support rank <= 255");
  if (numel(array.dims) != array.values.size()) {
    throw ShapeError(fmt::format("SAMB array dims hold {} values, payload has {}",
                                 numel(array.dims), array.values.size()));
  }
  std::string out(kHeaderBytes, '\0');
  std::memcpy(out.data(), kMagic, 4);
  out[4] = static_cast<char>(kVersion);
  out[5] = static_cast<char>(kFloat32);
  out[6] = static_cast<char>(array.dims.size());
  const std::size_t dims_bytes = array.dims.size() * 4;
  const std::size_t payload = array.values.size() * 4;
  out.resize(kHeaderBytes + dims_bytes + payload);
  std::memcpy(out.data() + kHeaderBytes, array.dims.data(), dims_bytes);
  std::memcpy(out.data() + kHeaderBytes + dims_bytes, array.values.data(), payload);
  return out;
}

SambArray decode_array(std::string_view blob) {
  if (blob.size() < kHeaderBytes) throw LoadError("SAMB blob shorter than its header");
  if (std::memcmp(blob.data(), kMagic, 4) != 0) throw LoadError("SAMB blob has bad magic");
  if (static_cast<std::uint8_t>(blob[4]) != kVersion) {
    throw LoadError(fmt::format("SAMB version {} unsupported", static_cast<int>(blob[4])));
  }
  if (static_cast<std::uint8_t>(blob[5]) != kFloat32) throw LoadError("SAMB dtype must be float32");
  const std::size_t rank = static_cast<std::uint8_t>(blob[6]);
  if (blob.size() < kHeaderBytes + rank * 4) throw LoadError("SAMB blob truncated in dims");
  SambArray a;
  a.dims.resize(rank);
  std::memcpy(a.dims.data(), blob.data() + kHeaderBytes, rank * 4);
  const std::size_t n = numel(a.dims);
  const std::size_t payload = blob.size() - kHeaderBytes - rank * 4;
  if (payload != n * 4) {
    throw LoadError(fmt::format("SAMB payload is {} bytes, dims require {}", payload, n * 4));
  }
  a.values.resize(n);
  std::memcpy(a.values.data(), blob.data() + kHeaderBytes + rank * 4, payload);
  return a;
}

nn::Tensor SambContainer::tensor(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw LoadError("SAMB container has no array '" + name + "'");
  return it->second.to_tensor();
}

std::string SambContainer::to_bytes() const {
  std::vector<detail::ZipEntry> entries;
  entries.push_back({"meta.json", meta.dump(2)});
  for (const auto& [name, array] : arrays) {
    entries.push_back({std::string(kArrayPrefix) + name, encode_array(array)});
  }
  return detail::write_zip(entries);
}

SambContainer SambContainer::from_bytes(const std::string& bytes) {
  SambContainer c;
  bool has_meta = false;
  for (detail::ZipEntry& e : detail::read_zip(bytes)) {
    if (e.name == "meta.json") {
      try {
        c.meta = nlohmann::json::parse(e.data);
      } catch (const nlohmann::json::exception& ex) {
        throw LoadError(std::string("SAMB meta.json: ") + ex.what());
      }
      has_meta = true;
    } else if (e.name.starts_with(kArrayPrefix)) {
      c.arrays[e.name.substr(kArrayPrefix.size())] = decode_array(e.data);
    }
  }
  if (!has_meta) throw LoadError("SAMB container lacks meta.json");
  return c;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += fmt::format(".tmp{}-{}", std::hash<std::thread::id>{}(std::this_thread::get_id()),
                     counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_samb(const std::filesystem::path& path, const SambContainer& container) {
  write_file_atomic(path, container.to_bytes());
}

SambContainer read_samb(const std::filesystem::path& path) {
  try {
    return SambContainer::from_bytes(read_file(path));
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace sam
