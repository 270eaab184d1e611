#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "vtcm/numerics/tensor.hpp"

namespace vtcm::data {

inline constexpr std::uint16_t kFeatureFormatVersion = 1;
inline constexpr double kPooledTolerance = 1e-6;

struct RegionFeatureSet {
  std::string image_id;
  num::Tensor features;  // M x D
  num::Tensor pooled;    // D, row mean of features

  // Fills `pooled` from the rows of `features`.
  static RegionFeatureSet create(std::string image_id, num::Tensor features);

  std::size_t regions() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  // Throws FormatError when a dimension is zero or pooled deviates from the
  // row mean by more than kPooledTolerance.
  void validate() const;
};

num::Tensor row_mean(const num::Tensor& features);

// 64-bit FNV-1a.
std::uint64_t fnv1a(const unsigned char* bytes, std::size_t length,
                    std::uint64_t hash = 14695981039346656037ull);

// Streams records from a feature container. The pooled vector of every
// record is recomputed from its rows.
class FeatureReader {
 public:
  explicit FeatureReader(const std::string& path);
  std::optional<RegionFeatureSet> next();
  std::uint16_t version() const { return version_; }

 private:
  std::ifstream in_;
  std::string path_;
  std::uint16_t version_ = 0;
  std::uint64_t remaining_ = 0;
};

class FeatureWriter {
 public:
  explicit FeatureWriter(const std::string& path);
  // Validates the set before writing; values are stored as float32.
  void write(const RegionFeatureSet& set);
  void close();

 private:
  std::ofstream out_;
  std::string path_;
};

std::vector<RegionFeatureSet> load_features(const std::string& path);
void save_features(const std::string& path, const std::vector<RegionFeatureSet>& sets);

// Serialized record bytes, checksum included.
std::string encode_feature_record(const RegionFeatureSet& set);

}  // namespace vtcm::data
