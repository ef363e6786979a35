#include <fcntl.h>
#include <sys/random.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <iostream>
#include <system_error>

#include "repro/decimal.hpp"
#include "repro/orchestrator.hpp"

namespace repro::orchestrator {
namespace {

constexpr std::size_t kToyInstances = 100;
constexpr std::size_t kToyClasses = 10;
constexpr std::size_t kToyEpochs = 5;

void fill_from_device(int fd, std::uint8_t* out, std::size_t size, const std::string& device) {
  while (size > 0) {
    const ssize_t n = ::read(fd, out, size);
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) throw std::system_error(errno, std::generic_category(), "read " + device);
    if (n == 0) throw std::runtime_error("unexpected end of " + device);
    out += n;
    size -= static_cast<std::size_t>(n);
  }
}

void fill_from_getrandom(std::uint8_t* out, std::size_t size) {
  while (size > 0) {
    const ssize_t n = ::getrandom(out, size, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) throw std::system_error(errno, std::generic_category(), "getrandom");
    out += n;
    size -= static_cast<std::size_t>(n);
  }
}

}  // namespace

std::string consume_entropy(const ConsumerConfig& config, std::vector<std::uint8_t>* bytes_out) {
  std::vector<std::uint8_t> bytes;
  if (!config.no_entropy && config.bytes > 0) {
    bytes.resize(config.bytes);
    const std::size_t chunk = config.chunk == 0 ? config.bytes : config.chunk;
    const bool use_device = !config.device.empty();
    if (!use_device && !config.use_getrandom) throw std::invalid_argument("no entropy source selected");
    int fd = -1;
    if (use_device) {
      fd = ::open(config.device.c_str(), O_RDONLY | O_CLOEXEC);
      if (fd < 0) throw std::system_error(errno, std::generic_category(), "open " + config.device);
    }
    std::size_t offset = 0;
    for (std::size_t i = 0; offset < bytes.size(); ++i) {
      const std::size_t n = std::min(chunk, bytes.size() - offset);
      const bool device_turn = use_device && (!config.use_getrandom || i % 2 == 0);
      if (device_turn)
        fill_from_device(fd, bytes.data() + offset, n, config.device);
      else
        fill_from_getrandom(bytes.data() + offset, n);
      offset += n;
    }
    if (fd >= 0) ::close(fd);
  }
  std::string digest = digest_hex(DigestAlgo::Sha256, bytes);
  if (bytes_out) *bytes_out = std::move(bytes);
  return digest;
}

verifier::RunArtifact consumer_artifact(std::span<const std::uint8_t> entropy) {
  auto byte_at = [&](std::size_t i) -> unsigned { return entropy.empty() ? 0u : entropy[i % entropy.size()]; };
  verifier::RunArtifact a;
  a.task = a.manifest.task = verifier::Task::Classification;
  a.manifest.command = "repro __consume";
  for (std::size_t i = 0; i < kToyInstances; ++i) {
    const std::size_t truth = i % kToyClasses;
    const unsigned b = byte_at(i);
    a.truths.push_back(std::to_string(truth));
    // About one instance in five is misclassified, chosen by the entropy.
    a.predictions.push_back(std::to_string(b >= 205 ? b % kToyClasses : truth));
  }
  for (std::size_t e = 0; e < kToyEpochs; ++e) {
    const double loss = (byte_at(kToyInstances + e) + 1) / 256.0 / static_cast<double>(e + 1);
    a.process.losses.push_back(format_decimal(loss));
  }
  a.process.epochs = kToyEpochs;
  a.process.wall_seconds = 1;
  return a;
}

int cmd_consume(const ConsumerConfig& config, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  try {
    std::vector<std::uint8_t> bytes;
    const std::string digest = consume_entropy(config, &bytes);
    out << digest << '\n';
    out.flush();
    if (config.artifact_dir) {
      verifier::RunArtifact a = consumer_artifact(bytes);
      a.process.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (!(a.process.wall_seconds > 0)) a.process.wall_seconds = 1e-9;
      std::filesystem::create_directories(*config.artifact_dir);
      verifier::save_run_artifact(*config.artifact_dir, a);
    }
  } catch (const std::exception& e) {
    std::cerr << "repro __consume: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace repro::orchestrator
