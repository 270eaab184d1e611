#include "vtcm/data/features.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "vtcm/error.hpp"

namespace vtcm::data {

namespace {

constexpr char kMagic[4] = {'V', 'T', 'C', 'F'};

void put_le(std::string& out, std::uint64_t value, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::uint64_t fnv1a(const unsigned char* bytes, std::size_t length, std::uint64_t hash) {
  for (std::size_t i = 0; i < length; ++i) {
    hash ^= bytes[i];
    hash *= 1099511628211ull;
  }
  return hash;
}

num::Tensor row_mean(const num::Tensor& features) {
  const std::size_t m = features.rows(), d = features.cols();
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += features.at(i, j);
  for (double& v : mean) v /= static_cast<double>(m);
  return num::Tensor::vector(std::move(mean));
}

RegionFeatureSet RegionFeatureSet::create(std::string image_id, num::Tensor features) {
  if (features.ndim() != 2 || features.rows() == 0 || features.cols() == 0) {
    throw FormatError("region features must be a nonempty M x D matrix, got " +
                      num::to_string(features.shape()));
  }
  RegionFeatureSet s;
  s.image_id = std::move(image_id);
  s.pooled = row_mean(features);
  s.features = std::move(features);
  return s;
}

void RegionFeatureSet::validate() const {
  if (!features.defined() || features.ndim() != 2 || features.rows() == 0 ||
      features.cols() == 0) {
    throw FormatError("feature set '" + image_id + "' needs M >= 1 and D >= 1");
  }
  if (!pooled.defined() || pooled.shape() != num::Shape{features.cols()}) {
    throw FormatError("feature set '" + image_id + "' has a pooled vector of the wrong size");
  }
  const num::Tensor mean = row_mean(features);
  for (std::size_t j = 0; j < mean.size(); ++j) {
    const double gap = std::abs(mean[j] - pooled[j]);
    if (!(gap <= kPooledTolerance)) {
      throw FormatError("feature set '" + image_id + "': pooled[" + std::to_string(j) +
                        "] deviates from the row mean by " + std::to_string(gap));
    }
  }
}

std::string encode_feature_record(const RegionFeatureSet& set) {
  set.validate();
  if (set.image_id.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw FormatError("image id longer than 65535 bytes");
  }
  if (set.regions() > std::numeric_limits<std::uint32_t>::max() ||
      set.dim() > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError("feature dimensions exceed 32 bits");
  }
  std::string out;
  put_le(out, set.image_id.size(), 2);
  out += set.image_id;
  put_le(out, set.regions(), 4);
  put_le(out, set.dim(), 4);
  for (double v : set.features.data()) {
    const auto f = static_cast<float>(v);
    if (!std::isfinite(f)) throw NumericError("non-finite feature in '" + set.image_id + "'");
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    put_le(out, bits, 4);
  }
  put_le(out, fnv1a(reinterpret_cast<const unsigned char*>(out.data()), out.size()), 8);
  return out;
}

FeatureReader::FeatureReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
  if (!in_) throw Error(ErrorKind::kIo, "cannot open feature file " + path);
  in_.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in_.tellg());
  in_.seekg(0);
  unsigned char header[6];
  if (size < sizeof header || !in_.read(reinterpret_cast<char*>(header), sizeof header)) {
    throw FormatError(path + ": truncated header");
  }
  if (std::memcmp(header, kMagic, 4) != 0) throw FormatError(path + ": bad magic, not a VTCF file");
  version_ = static_cast<std::uint16_t>(get_le(header + 4, 2));
  if (version_ != kFeatureFormatVersion) {
    throw Error(ErrorKind::kVersion, path + ": feature format version " +
                                         std::to_string(version_) + ", expected " +
                                         std::to_string(kFeatureFormatVersion));
  }
  remaining_ = size - sizeof header;
}

std::optional<RegionFeatureSet> FeatureReader::next() {
  if (remaining_ == 0) return std::nullopt;
  auto take = [&](std::string& buf, std::uint64_t n, const char* what) {
    if (n > remaining_) throw FormatError(path_ + ": truncated record (" + what + ")");
    const std::size_t old = buf.size();
    buf.resize(old + static_cast<std::size_t>(n));
    in_.read(buf.data() + old, static_cast<std::streamsize>(n));
    if (!in_) throw FormatError(path_ + ": truncated record (" + what + ")");
    remaining_ -= n;
    return reinterpret_cast<const unsigned char*>(buf.data() + old);
  };
  std::string rec;
  const std::uint64_t id_len = get_le(take(rec, 2, "id length"), 2);
  take(rec, id_len, "id");
  const unsigned char* dims = take(rec, 8, "dimensions");
  const std::uint64_t m = get_le(dims, 4), d = get_le(dims + 4, 4);
  if (m == 0 || d == 0) throw FormatError(path_ + ": record with M or D equal to zero");
  // m, d < 2^32, so the product fits in 64 bits; the byte count may not.
  const std::uint64_t count = m * d;
  if (count > remaining_ / 4) {
    throw FormatError(path_ + ": M*D = " + std::to_string(count) +
                      " exceeds the bytes left in the file");
  }
  const unsigned char* body = take(rec, count * 4, "values");
  std::vector<double> values(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = static_cast<std::uint32_t>(get_le(body + 4 * i, 4));
    float f;
    std::memcpy(&f, &bits, sizeof f);
    values[i] = f;
  }
  const std::uint64_t expected =
      fnv1a(reinterpret_cast<const unsigned char*>(rec.data()), rec.size());
  std::string tail;
  const std::uint64_t stored = get_le(take(tail, 8, "checksum"), 8);
  if (stored != expected) throw FormatError(path_ + ": record checksum mismatch");
  std::string id = rec.substr(2, static_cast<std::size_t>(id_len));
  return RegionFeatureSet::create(
      std::move(id), num::Tensor::from({static_cast<std::size_t>(m), static_cast<std::size_t>(d)},
                                       std::move(values)));
}

FeatureWriter::FeatureWriter(const std::string& path)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
  if (!out_) throw Error(ErrorKind::kIo, "cannot write feature file " + path);
  std::string header(kMagic, 4);
  put_le(header, kFeatureFormatVersion, 2);
  out_.write(header.data(), static_cast<std::streamsize>(header.size()));
}

void FeatureWriter::write(const RegionFeatureSet& set) {
  const std::string rec = encode_feature_record(set);
  out_.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  if (!out_) throw Error(ErrorKind::kIo, "write failed on " + path_);
}

void FeatureWriter::close() {
  out_.close();
  if (!out_) throw Error(ErrorKind::kIo, "close failed on " + path_);
}

std::vector<RegionFeatureSet> load_features(const std::string& path) {
  FeatureReader reader(path);
  std::vector<RegionFeatureSet> out;
  while (auto s = reader.next()) out.push_back(std::move(*s));
  return out;
}

void save_features(const std::string& path, const std::vector<RegionFeatureSet>& sets) {
  FeatureWriter writer(path);
  for (const auto& s : sets) writer.write(s);
  writer.close();
}

}  // namespace vtcm::data
