#include "epiflow/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <boost/crc.hpp>
#include <boost/uuid/detail/sha1.hpp>

namespace epiflow {

std::uint32_t crc32(std::span<const unsigned char> bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

std::string crc32_hex(std::span<const unsigned char> bytes) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc32(bytes));
  return buf;
}

std::string git_blob_sha1(std::string_view content) {
  boost::uuids::detail::sha1 sha;
  const std::string prefix = "blob " + std::to_string(content.size());
  sha.process_bytes(prefix.data(), prefix.size() + 1);  // includes the NUL
  sha.process_bytes(content.data(), content.size());
  unsigned int digest[5];
  sha.get_digest(digest);
  char buf[41];
  for (int i = 0; i < 5; ++i) std::snprintf(buf + 8 * i, 9, "%08x", digest[i]);
  return buf;
}

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& text) {
  const char* begin = text.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw FormatError(FormatError::Kind::MalformedHeader, "not a number: '" + text + "'");
  }
  return v;
}

void append_f64_le(std::vector<unsigned char>& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<unsigned char>(bits & 0xffu));
    bits >>= 8;
  }
}

double read_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

void TextHeader::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries.emplace_back(key, value);
}

bool TextHeader::has(const std::string& key) const {
  for (const auto& [k, v] : entries)
    if (k == key) return true;
  return false;
}

const std::string& TextHeader::get(const std::string& key) const {
  for (const auto& [k, v] : entries)
    if (k == key) return v;
  throw FormatError(FormatError::Kind::MalformedHeader, "header field '" + key + "' missing");
}

void TextHeader::write(std::ostream& os) const {
  os << magic << ' ' << version << '\n';
  for (const auto& [k, v] : entries) os << k << ' ' << v << '\n';
  os << "end-header\n";
}

TextHeader TextHeader::read(std::istream& is, std::string_view expected_magic,
                            std::string_view expected_version) {
  TextHeader h;
  std::string line;
  if (!std::getline(is, line)) {
    throw FormatError(FormatError::Kind::MalformedHeader, "missing header line");
  }
  const auto space = line.find(' ');
  if (space == std::string::npos || line.substr(0, space) != expected_magic) {
    throw FormatError(FormatError::Kind::MalformedHeader,
                      "expected '" + std::string(expected_magic) + "' header");
  }
  h.magic = line.substr(0, space);
  h.version = line.substr(space + 1);
  if (h.version != expected_version) {
    throw FormatError(FormatError::Kind::VersionMismatch,
                      "unsupported version '" + h.version + "', expected '" +
                          std::string(expected_version) + "'");
  }
  // Guard against binary garbage being read as an endless header.
  constexpr std::size_t kMaxHeaderLines = 4096;
  while (std::getline(is, line)) {
    if (line == "end-header") return h;
    if (h.entries.size() >= kMaxHeaderLines) break;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0) {
      throw FormatError(FormatError::Kind::MalformedHeader, "malformed header line '" + line + "'");
    }
    h.entries.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  throw FormatError(FormatError::Kind::MalformedHeader, "header not terminated by end-header");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write '" + path + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw FormatError(FormatError::Kind::Io, "short write to '" + path + "'");
}

}  // namespace epiflow
