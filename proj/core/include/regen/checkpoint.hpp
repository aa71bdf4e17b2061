#pragma once

// Checkpoint container:
//   bytes 0..7   magic "RGNCKPT1"
//   bytes 8..15  little-endian uint64 header length L
//   next L bytes UTF-8 JSON header:
//                  {"meta": {...}, "tensors": [{"name", "shape":[n,c,h,w],
//                   "dtype":"float64", "offset", "nbytes"}, ...]}
//   remainder    raw little-endian tensor data; offsets are relative to the
//                start of this section.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "regen/nets.hpp"

namespace regen::ckpt {

struct StoredTensor {
  ad::Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, StoredTensor> tensors;

  // Copies tensors named prefix + t.name into each ref; every ref must exist.
  void restore(const std::string& prefix, std::vector<nets::TensorRef> refs) const;
};

struct TensorGroup {
  std::string prefix;
  std::vector<nets::TensorRef> refs;
};

void save(const std::filesystem::path& path, const nlohmann::json& meta,
          const std::vector<TensorGroup>& groups);
Checkpoint load(const std::filesystem::path& path);

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(const std::string& text);
// Digest over every tensor's name, shape and raw bytes, in list order.
std::string tensors_hash(const std::vector<nets::TensorRef>& refs);

}  // namespace regen::ckpt
