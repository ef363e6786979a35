#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <memory>

#include "repro/orchestrator.hpp"

namespace repro::orchestrator {
namespace {

namespace fs = std::filesystem;

struct MdCtxFree {
  void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};
using MdCtx = std::unique_ptr<EVP_MD_CTX, MdCtxFree>;

const EVP_MD* evp_md(DigestAlgo algo) { return algo == DigestAlgo::Sha1 ? EVP_sha1() : EVP_sha256(); }

class Hasher {
 public:
  explicit Hasher(DigestAlgo algo) : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), evp_md(algo), nullptr) != 1)
      throw DigestError("cannot initialise digest");
  }
  void update(const void* data, std::size_t size) {
    if (EVP_DigestUpdate(ctx_.get(), data, size) != 1) throw DigestError("digest update failed");
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md, &len) != 1) throw DigestError("digest finalisation failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
      out += kHex[md[i] >> 4];
      out += kHex[md[i] & 0xf];
    }
    return out;
  }

 private:
  MdCtx ctx_;
};

void collect(const fs::path& path, std::vector<fs::path>& files) {
  std::error_code ec;
  const auto status = fs::status(path, ec);
  if (ec || !fs::exists(status)) throw DigestError("cannot read " + path.string() + ": no such file or directory");
  if (!fs::is_directory(status)) {
    files.push_back(path);
    return;
  }
  std::vector<fs::path> children;
  for (fs::directory_iterator it(path, ec), end; !ec && it != end; it.increment(ec)) children.push_back(it->path());
  if (ec) throw DigestError("cannot list " + path.string() + ": " + ec.message());
  std::sort(children.begin(), children.end());
  for (const auto& child : children) collect(child, files);
}

}  // namespace

std::optional<DigestAlgo> parse_digest_algo(std::string_view name) {
  if (name == "sha1") return DigestAlgo::Sha1;
  if (name == "sha256") return DigestAlgo::Sha256;
  return std::nullopt;
}

std::string_view to_string(DigestAlgo algo) { return algo == DigestAlgo::Sha1 ? "sha1" : "sha256"; }

std::string digest_hex(DigestAlgo algo, std::span<const std::uint8_t> data) {
  Hasher h(algo);
  h.update(data.data(), data.size());
  return h.hex();
}

std::string digest_file(DigestAlgo algo, const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DigestError("cannot read " + path.string());
  Hasher h(algo);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    if (in.gcount() > 0) h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  if (in.bad()) throw DigestError("read error on " + path.string());
  return h.hex();
}

std::vector<std::string> hash_manifest(std::span<const fs::path> paths, DigestAlgo algo) {
  std::vector<fs::path> files;
  for (const auto& p : paths) collect(p, files);
  std::vector<std::string> lines;
  lines.reserve(files.size());
  for (const auto& f : files)
    lines.push_back(std::string(to_string(algo)) + ":" + digest_file(algo, f) + "  " + f.string());
  return lines;
}

}  // namespace repro::orchestrator
