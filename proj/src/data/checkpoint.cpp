#include "vtcm/data/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "vtcm/data/features.hpp"
#include "vtcm/error.hpp"

namespace vtcm::data {

namespace {

constexpr char kMagic[4] = {'V', 'T', 'C', 'K'};

void put_le(std::string& out, std::uint64_t value, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

void put_string(std::string& out, const std::string& s) {
  put_le(out, s.size(), 4);
  out += s;
}

class Cursor {
 public:
  Cursor(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  std::uint64_t u(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u(4);
    need(n);
    std::string s = bytes_.substr(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }
  std::size_t left() const { return end_ - pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > end_ - pos_) throw FormatError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 6;
};

}  // namespace

void Checkpoint::put(const std::string& name, const num::Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError("checkpoint tensor " + name + " is not finite");
  }
  tensors[name] = StoredTensor{t.shape(), t.to_vector()};
}

void Checkpoint::put_store(const std::string& prefix, const num::ParameterStore& store) {
  for (const auto& [name, t] : store.all()) put(prefix + name, t);
}

const StoredTensor& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(ErrorKind::kMissing, "checkpoint lacks tensor " + name);
  return it->second;
}

const std::string& Checkpoint::get(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw Error(ErrorKind::kMissing, "checkpoint lacks entry " + key);
  return it->second;
}

void Checkpoint::restore(const std::string& name, num::Tensor& t) const {
  const StoredTensor& s = tensor(name);
  if (s.shape != t.shape()) {
    throw ShapeError("checkpoint tensor " + name + " has shape " + num::to_string(s.shape) +
                     ", model expects " + num::to_string(t.shape()));
  }
  std::copy(s.values.begin(), s.values.end(), t.mutable_data().begin());
}

void Checkpoint::restore_store(const std::string& prefix, num::ParameterStore& store) const {
  std::string missing;
  for (const auto& [name, t] : store.all()) {
    if (!tensors.count(prefix + name)) missing += (missing.empty() ? "" : ", ") + prefix + name;
  }
  if (!missing.empty()) throw Error(ErrorKind::kMissing, "checkpoint lacks tensors: " + missing);
  for (auto& [name, t] : store.all()) restore(prefix + name, t);
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  put_le(out, kCheckpointVersion, 2);
  put_le(out, ckpt.meta.size(), 4);
  for (const auto& [k, v] : ckpt.meta) {
    put_string(out, k);
    put_string(out, v);
  }
  put_le(out, ckpt.tensors.size(), 4);
  for (const auto& [name, t] : ckpt.tensors) {
    if (num::shape_size(t.shape) != t.values.size()) {
      throw ShapeError("checkpoint tensor " + name + " value count disagrees with its shape");
    }
    put_string(out, name);
    put_le(out, t.shape.size(), 4);
    for (std::size_t d : t.shape) put_le(out, d, 8);
    for (double v : t.values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_le(out, bits, 8);
    }
  }
  put_le(out, fnv1a(reinterpret_cast<const unsigned char*>(out.data()), out.size()), 8);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 6 + 8) throw FormatError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic");
  const auto version = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[4]) |
                                                  (static_cast<unsigned char>(bytes[5]) << 8));
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kVersion, "checkpoint version " + std::to_string(version) +
                                         " does not match supported version " +
                                         std::to_string(kCheckpointVersion));
  }
  const std::size_t body_end = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) {
    stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[body_end + i])) << (8 * i);
  }
  if (stored != fnv1a(reinterpret_cast<const unsigned char*>(bytes.data()), body_end)) {
    throw FormatError("checkpoint checksum mismatch");
  }
  Cursor c(bytes, body_end);
  Checkpoint ckpt;
  const std::uint64_t n_meta = c.u(4);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = c.str();
    ckpt.meta[k] = c.str();
  }
  const std::uint64_t n_tensors = c.u(4);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = c.str();
    StoredTensor t;
    const std::uint64_t nd = c.u(4);
    if (nd > 8) throw FormatError("checkpoint tensor " + name + " has too many dimensions");
    std::uint64_t count = 1;
    for (std::uint64_t d = 0; d < nd; ++d) {
      const std::uint64_t n = c.u(8);
      if (n != 0 && count > (c.left() / 8) / n) {
        throw FormatError("checkpoint tensor " + name + " is larger than the file");
      }
      count *= n;
      t.shape.push_back(static_cast<std::size_t>(n));
    }
    t.values.resize(static_cast<std::size_t>(count));
    for (double& v : t.values) {
      const std::uint64_t bits = c.u(8);
      std::memcpy(&v, &bits, sizeof v);
    }
    ckpt.tensors[name] = std::move(t);
  }
  if (c.left() != 0) throw FormatError("trailing bytes in checkpoint");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "cannot write checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace vtcm::data
