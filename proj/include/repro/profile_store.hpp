#pragma once

// On-disk random profiles.
//
// A profile directory holds one file per entropy source, `urandom.conf` and
// `getrandom.conf`. Despite the extension the content is binary:
//
//   header:  magic "RRPF" | format_version u16 | source u8
//   record:  seq u64 | requested_len u64 | returned_len u64 | flags u32 | bytes
//
// All integers are little-endian. Records are appended one write per record
// so that a crashing child never loses entropy that was already served.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace repro {

enum class EntropySource : std::uint8_t {
  UrandomRead = 0,
  Getrandom = 1,
};

std::string_view to_string(EntropySource source);
std::optional<EntropySource> parse_entropy_source(std::string_view name);

/// File name used for a source inside a profile directory.
std::string_view profile_file_name(EntropySource source);

inline constexpr std::uint8_t kProfileMagic[4] = {'R', 'R', 'P', 'F'};
inline constexpr std::uint16_t kProfileFormatVersion = 1;
inline constexpr std::size_t kProfileHeaderSize = 7;
inline constexpr std::size_t kRecordPrefixSize = 8 + 8 + 8 + 4;

class ProfileError : public std::runtime_error {
 public:
  enum class Kind { MissingProfile, CorruptProfile, Io, InvalidRecord };

  ProfileError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct RandomRecord {
  std::uint64_t seq = 0;
  EntropySource source = EntropySource::UrandomRead;
  std::uint64_t requested_len = 0;
  std::uint32_t flags = 0;
  std::vector<std::uint8_t> bytes;

  std::uint64_t returned_len() const noexcept { return bytes.size(); }

  friend bool operator==(const RandomRecord&, const RandomRecord&) = default;
};

struct RandomProfile {
  EntropySource source = EntropySource::UrandomRead;
  std::vector<RandomRecord> records;

  friend bool operator==(const RandomProfile&, const RandomProfile&) = default;
};

/// Encodes a profile. Throws InvalidRecord if any record breaks the
/// profile invariants (source, seq order, returned_len <= requested_len).
std::vector<std::uint8_t> serialize_profile(const RandomProfile& profile);

/// Decodes and fully validates a profile image. Any framing error is reported
/// as CorruptProfile. When `expected` is set the header source must match it.
RandomProfile deserialize_profile(std::span<const std::uint8_t> image,
                                  std::optional<EntropySource> expected = std::nullopt);

/// Append-only writer used in record mode. Owns the file descriptor.
class ProfileWriter {
 public:
  /// Creates or truncates `<dir>/<profile_file_name(source)>` and writes the
  /// header.
  static ProfileWriter create(const std::filesystem::path& dir, EntropySource source);

  ProfileWriter(ProfileWriter&& other) noexcept;
  ProfileWriter& operator=(ProfileWriter&& other) noexcept;
  ProfileWriter(const ProfileWriter&) = delete;
  ProfileWriter& operator=(const ProfileWriter&) = delete;
  ~ProfileWriter();

  /// Persists one record and returns its seq. The record has reached the
  /// kernel when this returns.
  std::uint64_t append(std::uint64_t requested_len, std::uint32_t flags,
                       std::span<const std::uint8_t> bytes);

  EntropySource source() const noexcept { return source_; }
  const std::filesystem::path& path() const noexcept { return path_; }
  std::uint64_t next_seq() const noexcept { return next_seq_; }

 private:
  ProfileWriter(int fd, EntropySource source, std::filesystem::path path);
  void write_all(std::span<const std::uint8_t> data);

  int fd_ = -1;
  EntropySource source_;
  std::filesystem::path path_;
  std::uint64_t next_seq_ = 0;
};

/// Strictly ordered reader used in replay mode. The whole file is validated
/// on open.
class ProfileReader {
 public:
  static ProfileReader open(const std::filesystem::path& dir, EntropySource source);

  /// Next record in seq order, or nullopt once exhausted.
  std::optional<RandomRecord> next();

  /// Record that the next call to next() would return, without advancing.
  const RandomRecord* peek() const;

  std::size_t position() const noexcept { return cursor_; }
  std::size_t size() const noexcept { return profile_.records.size(); }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  ProfileReader(RandomProfile profile, std::filesystem::path path)
      : profile_(std::move(profile)), path_(std::move(path)) {}

  RandomProfile profile_;
  std::filesystem::path path_;
  std::size_t cursor_ = 0;
};

}  // namespace repro
