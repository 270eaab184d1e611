#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vtcm/numerics/params.hpp"
#include "vtcm/numerics/tensor.hpp"

namespace vtcm::data {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct StoredTensor {
  num::Shape shape;
  std::vector<double> values;
};

// Versioned container of string metadata (config, RNG states, counters) and
// named float64 tensors. Maps are ordered, so serialization is canonical.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, StoredTensor> tensors;

  void put(const std::string& name, const num::Tensor& t);
  void put_store(const std::string& prefix, const num::ParameterStore& store);
  const StoredTensor& tensor(const std::string& name) const;
  const std::string& get(const std::string& key) const;

  // Copies values into every tensor of `store` whose name, prefixed, appears
  // here. Throws Error(kMissing) listing every absent name, and ShapeError on
  // a shape mismatch.
  void restore_store(const std::string& prefix, num::ParameterStore& store) const;
  void restore(const std::string& name, num::Tensor& t) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vtcm::data
