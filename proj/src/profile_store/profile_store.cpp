#include "repro/profile_store.hpp"

#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <unistd.h>

namespace repro {
namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t at) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[at + i]) << (8 * i);
  return v;
}

void put_header(std::vector<std::uint8_t>& out, EntropySource source) {
  out.insert(out.end(), std::begin(kProfileMagic), std::end(kProfileMagic));
  put_u16(out, kProfileFormatVersion);
  out.push_back(static_cast<std::uint8_t>(source));
}

void put_record(std::vector<std::uint8_t>& out, std::uint64_t seq, std::uint64_t requested_len,
                std::uint32_t flags, std::span<const std::uint8_t> bytes) {
  put_u64(out, seq);
  put_u64(out, requested_len);
  put_u64(out, bytes.size());
  put_u32(out, flags);
  out.insert(out.end(), bytes.begin(), bytes.end());
}

[[noreturn]] void corrupt(const std::string& what) {
  throw ProfileError(ProfileError::Kind::CorruptProfile, "corrupt profile: " + what);
}

std::string errno_text(int err) { return std::strerror(err); }

}  // namespace

std::string_view to_string(EntropySource source) {
  switch (source) {
    case EntropySource::UrandomRead:
      return "urandom_read";
    case EntropySource::Getrandom:
      return "getrandom";
  }
  return "unknown";
}

std::optional<EntropySource> parse_entropy_source(std::string_view name) {
  if (name == "urandom_read" || name == "urandom") return EntropySource::UrandomRead;
  if (name == "getrandom") return EntropySource::Getrandom;
  return std::nullopt;
}

std::string_view profile_file_name(EntropySource source) {
  return source == EntropySource::Getrandom ? "getrandom.conf" : "urandom.conf";
}

std::vector<std::uint8_t> serialize_profile(const RandomProfile& profile) {
  std::vector<std::uint8_t> out;
  put_header(out, profile.source);
  for (std::size_t i = 0; i < profile.records.size(); ++i) {
    const RandomRecord& r = profile.records[i];
    if (r.source != profile.source)
      throw ProfileError(ProfileError::Kind::InvalidRecord, "record source differs from profile source");
    if (r.seq != i)
      throw ProfileError(ProfileError::Kind::InvalidRecord, "record seq " + std::to_string(r.seq) +
                                                                " at position " + std::to_string(i));
    if (r.returned_len() > r.requested_len)
      throw ProfileError(ProfileError::Kind::InvalidRecord, "returned_len exceeds requested_len");
    if (r.source == EntropySource::UrandomRead && r.flags != 0)
      throw ProfileError(ProfileError::Kind::InvalidRecord, "urandom record with nonzero flags");
    put_record(out, r.seq, r.requested_len, r.flags, r.bytes);
  }
  return out;
}

RandomProfile deserialize_profile(std::span<const std::uint8_t> image,
                                  std::optional<EntropySource> expected) {
  if (image.size() < kProfileHeaderSize) corrupt("truncated header");
  if (std::memcmp(image.data(), kProfileMagic, sizeof(kProfileMagic)) != 0) corrupt("bad magic");
  const auto version = get_le<std::uint16_t>(image, 4);
  if (version != kProfileFormatVersion)
    corrupt("unsupported format version " + std::to_string(version));
  const std::uint8_t raw_source = image[6];
  if (raw_source > static_cast<std::uint8_t>(EntropySource::Getrandom))
    corrupt("unknown source " + std::to_string(raw_source));

  RandomProfile profile;
  profile.source = static_cast<EntropySource>(raw_source);
  if (expected && *expected != profile.source)
    corrupt("source " + std::string(to_string(profile.source)) + " where " +
            std::string(to_string(*expected)) + " was expected");

  std::size_t pos = kProfileHeaderSize;
  while (pos < image.size()) {
    const std::size_t index = profile.records.size();
    if (image.size() - pos < kRecordPrefixSize)
      corrupt("truncated record prefix at offset " + std::to_string(pos));
    RandomRecord r;
    r.source = profile.source;
    r.seq = get_le<std::uint64_t>(image, pos);
    r.requested_len = get_le<std::uint64_t>(image, pos + 8);
    const auto returned_len = get_le<std::uint64_t>(image, pos + 16);
    r.flags = get_le<std::uint32_t>(image, pos + 24);
    pos += kRecordPrefixSize;
    if (r.seq != index)
      corrupt("seq " + std::to_string(r.seq) + " at record " + std::to_string(index));
    if (returned_len > r.requested_len)
      corrupt("returned_len exceeds requested_len at record " + std::to_string(index));
    if (returned_len > image.size() - pos)
      corrupt("record " + std::to_string(index) + " runs past end of file");
    if (profile.source == EntropySource::UrandomRead && r.flags != 0)
      corrupt("nonzero flags in urandom record " + std::to_string(index));
    r.bytes.assign(image.begin() + static_cast<std::ptrdiff_t>(pos),
                   image.begin() + static_cast<std::ptrdiff_t>(pos + returned_len));
    pos += returned_len;
    profile.records.push_back(std::move(r));
  }
  return profile;
}

ProfileWriter::ProfileWriter(int fd, EntropySource source, std::filesystem::path path)
    : fd_(fd), source_(source), path_(std::move(path)) {}

ProfileWriter ProfileWriter::create(const std::filesystem::path& dir, EntropySource source) {
  auto path = dir / profile_file_name(source);
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) {
    const int err = errno;
    throw ProfileError(ProfileError::Kind::Io,
                       "cannot create profile " + path.string() + ": " + errno_text(err));
  }
  ProfileWriter writer(fd, source, std::move(path));
  std::vector<std::uint8_t> header;
  put_header(header, source);
  writer.write_all(header);
  return writer;
}

ProfileWriter::ProfileWriter(ProfileWriter&& other) noexcept
    : fd_(other.fd_), source_(other.source_), path_(std::move(other.path_)),
      next_seq_(other.next_seq_) {
  other.fd_ = -1;
}

ProfileWriter& ProfileWriter::operator=(ProfileWriter&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = other.fd_;
    source_ = other.source_;
    path_ = std::move(other.path_);
    next_seq_ = other.next_seq_;
    other.fd_ = -1;
  }
  return *this;
}

ProfileWriter::~ProfileWriter() {
  if (fd_ >= 0) ::close(fd_);
}

void ProfileWriter::write_all(std::span<const std::uint8_t> data) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd_, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      throw ProfileError(ProfileError::Kind::Io,
                         "write to profile " + path_.string() + " failed: " + errno_text(err));
    }
    data = data.subspan(static_cast<std::size_t>(n));
  }
}

std::uint64_t ProfileWriter::append(std::uint64_t requested_len, std::uint32_t flags,
                                    std::span<const std::uint8_t> bytes) {
  if (bytes.size() > requested_len)
    throw ProfileError(ProfileError::Kind::InvalidRecord,
                       "record of " + std::to_string(bytes.size()) + " bytes exceeds requested " +
                           std::to_string(requested_len));
  if (source_ == EntropySource::UrandomRead && flags != 0)
    throw ProfileError(ProfileError::Kind::InvalidRecord, "urandom record with nonzero flags");
  std::vector<std::uint8_t> buf;
  buf.reserve(kRecordPrefixSize + bytes.size());
  put_record(buf, next_seq_, requested_len, flags, bytes);
  write_all(buf);
  return next_seq_++;
}

ProfileReader ProfileReader::open(const std::filesystem::path& dir, EntropySource source) {
  auto path = dir / profile_file_name(source);
  int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) {
    const int err = errno;
    if (err == ENOENT || err == ENOTDIR)
      throw ProfileError(ProfileError::Kind::MissingProfile, "missing profile " + path.string());
    throw ProfileError(ProfileError::Kind::Io,
                       "cannot open profile " + path.string() + ": " + errno_text(err));
  }
  std::vector<std::uint8_t> image;
  std::uint8_t chunk[16384];
  for (;;) {
    const ssize_t n = ::read(fd, chunk, sizeof(chunk));
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw ProfileError(ProfileError::Kind::Io,
                         "cannot read profile " + path.string() + ": " + errno_text(err));
    }
    if (n == 0) break;
    image.insert(image.end(), chunk, chunk + n);
  }
  ::close(fd);
  RandomProfile profile;
  try {
    profile = deserialize_profile(image, source);
  } catch (const ProfileError& e) {
    throw ProfileError(e.kind(), path.string() + ": " + e.what());
  }
  return ProfileReader(std::move(profile), std::move(path));
}

std::optional<RandomRecord> ProfileReader::next() {
  if (cursor_ >= profile_.records.size()) return std::nullopt;
  return profile_.records[cursor_++];
}

const RandomRecord* ProfileReader::peek() const {
  if (cursor_ >= profile_.records.size()) return nullptr;
  return &profile_.records[cursor_];
}

}  // namespace repro
