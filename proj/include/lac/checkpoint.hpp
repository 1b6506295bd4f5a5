#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lac/nn.hpp"

namespace lac {

/// On-disk model container: a JSON document holding a format version, a full
/// config echo, named f64 tensor blobs (base64, little-endian), and trainer
/// state (step, RNG, optimizer moments) when present.
struct Checkpoint {
  std::string kind;  // "generator" | "visual_encoder" | "contrastive"
  nlohmann::json config;
  int64_t step = 0;
  std::string rng_state;
  nlohmann::json extra;

  struct Tensor {
    std::string name;
    int64_t rows = 0;
    int64_t cols = 0;  // 0 marks a vector
    Vec data;
  };
  std::vector<Tensor> tensors;

  void put_tensors(const std::string& prefix, const TensorRefs& refs);
  /// Strict by-name, by-shape restore; throws on any mismatch.
  void take_tensors(const std::string& prefix, TensorRefs refs) const;
  bool has_tensor(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;
  void put_vec(const std::string& name, const Vec& v);
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Fails loudly unless the stored kind and config echo match the expectation.
void require_checkpoint_kind(const Checkpoint& ckpt, const std::string& kind);

std::string base64_encode(const unsigned char* data, size_t len);
std::vector<unsigned char> base64_decode(const std::string& text);

}  // namespace lac
