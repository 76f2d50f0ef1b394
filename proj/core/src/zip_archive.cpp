#include "zip_archive.hpp"

#include <cstdint>
#include <cstring>

#include <zlib.h>

#include "sam/errors.hpp"

namespace sam::detail {

namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
constexpr std::uint16_t kUtf8Flag = 0x0800;
constexpr std::uint16_t kDosDate = 0x0021;  // 1980-01-01

void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint16_t get16(const std::string& s, std::size_t off) {
  if (off + 2 > s.size()) throw LoadError("zip: truncated archive");
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[off]) |
                                    (static_cast<unsigned char>(s[off + 1]) << 8));
}

std::uint32_t get32(const std::string& s, std::size_t off) {
  if (off + 4 > s.size()) throw LoadError("zip: truncated archive");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[off + i]);
  return v;
}

std::uint32_t crc_of(const std::string& data) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

std::string inflate_raw(const std::string& compressed, std::size_t expected) {
  std::string out(expected, '\0');
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw LoadError("zip: inflate init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
  zs.avail_in = static_cast<uInt>(compressed.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != expected) throw LoadError("zip: corrupt deflate stream");
  return out;
}

}  // namespace

std::string write_zip(const std::vector<ZipEntry>& entries) {
  std::string out;
  std::string central;
  for (const ZipEntry& e : entries) {
    const auto offset = static_cast<std::uint32_t>(out.size());
    const std::uint32_t crc = crc_of(e.data);
    const auto size = static_cast<std::uint32_t>(e.data.size());
    const auto name_len = static_cast<std::uint16_t>(e.name.size());

    put32(out, kLocalSig);
    put16(out, 20);
    put16(out, kUtf8Flag);
    put16(out, 0);
    put16(out, 0);
    put16(out, kDosDate);
    put32(out, crc);
    put32(out, size);
    put32(out, size);
    put16(out, name_len);
    put16(out, 0);
    out += e.name;
    out += e.data;

    put32(central, kCentralSig);
    put16(central, 20);
    put16(central, 20);
    put16(central, kUtf8Flag);
    put16(central, 0);
    put16(central, 0);
    put16(central, kDosDate);
    put32(central, crc);
    put32(central, size);
    put32(central, size);
    put16(central, name_len);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put32(central, 0);
    put32(central, offset);
    central += e.name;
  }
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  out += central;
  put32(out, kEndSig);
  put16(out, 0);
  put16(out, 0);
  put16(out, static_cast<std::uint16_t>(entries.size()));
  put16(out, static_cast<std::uint16_t>(entries.size()));
  put32(out, static_cast<std::uint32_t>(central.size()));
  put32(out, cd_offset);
  put16(out, 0);
  return out;
}

std::vector<ZipEntry> read_zip(const std::string& bytes) {
  if (bytes.size() < 22) throw LoadError("zip: file too small");
  std::size_t eocd = std::string::npos;
  const std::size_t lowest = bytes.size() >= 22 + 65535 ? bytes.size() - 22 - 65535 : 0;
  for (std::size_t pos = bytes.size() - 22 + 1; pos-- > lowest;) {
    if (get32(bytes, pos) == kEndSig) {
      eocd = pos;
      break;
    }
  }
  if (eocd == std::string::npos) throw LoadError("zip: end of central directory not found");
  const std::uint16_t count = get16(bytes, eocd + 10);
  std::size_t cd = get32(bytes, eocd + 16);

  std::vector<ZipEntry> entries;
  entries.reserve(count);
  for (std::uint16_t i = 0; i < count; ++i) {
    if (get32(bytes, cd) != kCentralSig) throw LoadError("zip: bad central directory entry");
    const std::uint16_t method = get16(bytes, cd + 10);
    const std::uint32_t crc = get32(bytes, cd + 16);
    const std::uint32_t csize = get32(bytes, cd + 20);
    const std::uint32_t usize = get32(bytes, cd + 24);
    const std::uint16_t name_len = get16(bytes, cd + 28);
    const std::uint16_t extra_len = get16(bytes, cd + 30);
    const std::uint16_t comment_len = get16(bytes, cd + 32);
    const std::uint32_t local = get32(bytes, cd + 42);
    if (cd + 46 + name_len > bytes.size()) throw LoadError("zip: truncated central directory");
    ZipEntry e;
    e.name = bytes.substr(cd + 46, name_len);
    cd += 46u + name_len + extra_len + comment_len;

    if (get32(bytes, local) != kLocalSig) throw LoadError("zip: bad local header for " + e.name);
    const std::size_t data_off = local + 30u + get16(bytes, local + 26) + get16(bytes, local + 28);
    if (data_off + csize > bytes.size()) throw LoadError("zip: truncated data for " + e.name);
    std::string raw = bytes.substr(data_off, csize);
    if (method == 0) {
      e.data = std::move(raw);
    } else if (method == 8) {
      e.data = inflate_raw(raw, usize);
    } else {
      throw LoadError("zip: unsupported compression method for " + e.name);
    }
    if (crc_of(e.data) != crc) throw LoadError("zip: checksum mismatch for " + e.name);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace sam::detail
