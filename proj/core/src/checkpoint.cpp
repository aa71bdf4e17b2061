#include "regen/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace regen::ckpt {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'R', 'G', 'N', 'C', 'K', 'P', 'T', '1'};

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("SHA-256 init failed");
    }
  }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md, &len);
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

void Checkpoint::restore(const std::string& prefix, std::vector<nets::TensorRef> refs) const {
  for (auto& r : refs) {
    auto it = tensors.find(prefix + r.name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint lacks tensor " + prefix + r.name);
    if (!(it->second.shape == r.shape)) {
      throw std::runtime_error("checkpoint tensor " + prefix + r.name + " has shape " +
                               it->second.shape.str() + ", expected " + r.shape.str());
    }
    std::copy(it->second.data.begin(), it->second.data.end(), r.data.begin());
  }
}

void save(const fs::path& path, const json& meta, const std::vector<TensorGroup>& groups) {
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const auto& g : groups) {
    for (const auto& r : g.refs) {
      const std::uint64_t nbytes = r.data.size() * sizeof(double);
      entries.push_back({{"name", g.prefix + r.name},
                         {"shape", {r.shape.n, r.shape.c, r.shape.h, r.shape.w}},
                         {"dtype", "float64"},
                         {"offset", offset},
                         {"nbytes", nbytes}});
      offset += nbytes;
    }
  }
  const std::string header = json{{"meta", meta}, {"tensors", entries}}.dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    const std::uint64_t len = header.size();
    f.write(kMagic, sizeof(kMagic));
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& g : groups) {
      for (const auto& r : g.refs) {
        f.write(reinterpret_cast<const char*>(r.data.data()),
                static_cast<std::streamsize>(r.data.size() * sizeof(double)));
      }
    }
    if (!f) throw std::runtime_error("checkpoint write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("missing checkpoint: " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  f.read(magic, sizeof(magic));
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  std::string header(len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("truncated checkpoint header: " + path.string());
  const json doc = json::parse(header);
  const auto data_start = f.tellg();

  Checkpoint ck;
  ck.meta = doc.at("meta");
  for (const auto& e : doc.at("tensors")) {
    if (e.at("dtype") != "float64") throw std::runtime_error("unsupported dtype in " + path.string());
    const auto shape = e.at("shape").get<std::vector<int>>();
    StoredTensor t{ad::Shape{shape.at(0), shape.at(1), shape.at(2), shape.at(3)}, {}};
    const auto nbytes = e.at("nbytes").get<std::uint64_t>();
    if (nbytes != t.shape.size() * sizeof(double)) {
      throw std::runtime_error("inconsistent tensor size in " + path.string());
    }
    t.data.resize(t.shape.size());
    f.seekg(data_start + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    f.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(nbytes));
    if (!f) throw std::runtime_error("truncated tensor data in " + path.string());
    ck.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_hex(const std::string& text) {
  Sha256 h;
  h.update(text.data(), text.size());
  return h.hex();
}

std::string tensors_hash(const std::vector<nets::TensorRef>& refs) {
  Sha256 h;
  for (const auto& r : refs) {
    h.update(r.name.data(), r.name.size() + 1);
    const int dims[4] = {r.shape.n, r.shape.c, r.shape.h, r.shape.w};
    h.update(dims, sizeof(dims));
    h.update(r.data.data(), r.data.size() * sizeof(double));
  }
  return h.hex();
}

}  // namespace regen::ckpt
