#include "blob.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "tempest/errors.hpp"

namespace tempest::detail {

namespace {

constexpr std::array<char, 8> kMagic = {'T', 'M', 'P', 'S', 'T', 'B', 'L', 'B'};

void put_u64_le(std::ostream& os, std::uint64_t v) {
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

std::uint64_t get_u64_le(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void write_blob(const std::filesystem::path& path, const Blob& blob) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string header = blob.header.dump();
  os.write(kMagic.data(), kMagic.size());
  put_u64_le(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (double v : blob.payload) put_u64_le(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

Blob read_blob(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    throw FormatError("'" + path.string() + "' is not a tempest blob");
  const std::uint64_t header_len = get_u64_le(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw FormatError("truncated header in '" + path.string() + "'");
  Blob blob;
  try {
    blob.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad JSON header in '" + path.string() + "': " + e.what());
  }
  const std::size_t rest = bytes.size() - 16 - header_len;
  if (rest % 8 != 0) throw FormatError("payload of '" + path.string() + "' is not a whole number of doubles");
  blob.payload.resize(rest / 8);
  const unsigned char* p = bytes.data() + 16 + header_len;
  for (std::size_t i = 0; i < blob.payload.size(); ++i) blob.payload[i] = std::bit_cast<double>(get_u64_le(p + 8 * i));
  return blob;
}

}  // namespace tempest::detail
