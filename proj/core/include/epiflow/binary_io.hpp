#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace epiflow {

/// Raised by every file loader. `kind` distinguishes the failure class so
/// callers (and tests) can tell a corrupt file from an incompatible one.
class FormatError : public std::runtime_error {
 public:
  enum class Kind { MalformedHeader, VersionMismatch, ChecksumMismatch, EmptyDataset, Io };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

std::uint32_t crc32(std::span<const unsigned char> bytes);
std::string crc32_hex(std::span<const unsigned char> bytes);

/// SHA-1 of "blob <size>\0<content>", i.e. what `git hash-object` prints.
std::string git_blob_sha1(std::string_view content);

/// Exact text form of a double (C99 hex float).
std::string hexfloat(double v);
double parse_double(const std::string& text);

void append_f64_le(std::vector<unsigned char>& out, double v);
double read_f64_le(const unsigned char* p);

/// Ordered "key value" header terminated by an `end-header` line. The first
/// line is a magic + version tag (e.g. "epiflow-dataset v1").
struct TextHeader {
  std::string magic;
  std::string version;
  std::vector<std::pair<std::string, std::string>> entries;

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  /// Throws FormatError(MalformedHeader) when missing.
  const std::string& get(const std::string& key) const;

  void write(std::ostream& os) const;
  /// Reads up to and including the end-header line. Throws FormatError.
  static TextHeader read(std::istream& is, std::string_view expected_magic,
                         std::string_view expected_version);
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace epiflow
