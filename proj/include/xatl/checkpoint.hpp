// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xatl/params.hpp"

// .xatl file layout, all integers little-endian:
//   "XATL"                     4 bytes magic
//   version                    u32
//   metadata length, metadata  u64 + UTF-8 JSON
//   record count               u64
//   records, sorted by name:
//     name length, name        u32 + bytes
//     dtype                    u8   (0 float32, 1 float64)
//     rank                     u8
//     dims                     rank x u64
//     data                     numel x scalar, little-endian
namespace xatl {

inline constexpr char kCheckpointMagic[4] = {'X', 'A', 'T', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class BadMagic : public CheckpointError {
 public:
  explicit BadMagic(const std::string& found) : CheckpointError("bad magic: found " + found + ", expected \"XATL\"") {}
};

class VersionMismatch : public CheckpointError {
 public:
  explicit VersionMismatch(std::uint32_t found)
      : CheckpointError("checkpoint version " + std::to_string(found) + " not readable by version " +
                        std::to_string(kCheckpointVersion) + " reader"),
        found_(found) {}
  std::uint32_t found() const { return found_; }

 private:
  std::uint32_t found_;
};

class TruncatedRecord : public CheckpointError {
 public:
  explicit TruncatedRecord(const std::string& what)
      : CheckpointError("truncated checkpoint: " + what), what_(what) {}
  const std::string& record() const { return what_; }

 private:
  std::string what_;
};

class DuplicateName : public CheckpointError {
 public:
  explicit DuplicateName(const std::string& name) : CheckpointError("duplicate tensor name in checkpoint: " + name) {}
};

class DtypeMismatch : public CheckpointError {
 public:
  DtypeMismatch(const std::string& name, DType found, DType wanted)
      : CheckpointError("tensor " + name + " is " + dtype_name(found) + ", expected " + dtype_name(wanted)) {}
};

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class U>
  void le(U v) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(char((v >> (8 * i)) & 0xFF));
  }
  template <Scalar T>
  void scalars(const T* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(p, n * sizeof(T));
    } else {
      using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      for (std::size_t i = 0; i < n; ++i) le(std::bit_cast<Bits>(p[i]));
    }
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& b) : buf_(b) {}
  bool has(std::size_t n) const { return pos_ + n <= buf_.size() && pos_ + n >= pos_; }
  void need(std::size_t n, const std::string& what) const {
    if (!has(n)) throw TruncatedRecord(what);
  }
  std::string bytes(std::size_t n, const std::string& what) {
    need(n, what);
    std::string out = buf_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  template <class U>
  U le(const std::string& what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  template <Scalar T>
  void scalars(T* out, std::size_t n, const std::string& what) {
    need(n * sizeof(T), what);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out, buf_.data() + pos_, n * sizeof(T));
      pos_ += n * sizeof(T);
    } else {
      using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<T>(le<Bits>(what));
    }
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// One tensor as stored on disk, dtype-erased.
struct CheckpointRecord {
  std::string name;
  DType dtype = DType::kFloat32;
  Shape dims;
  std::vector<double> values;  // widened copy; exact for both dtypes
  std::string raw;             // payload bytes as stored

  bool payload_equal(const CheckpointRecord& o) const { return dtype == o.dtype && dims == o.dims && raw == o.raw; }
};

struct CheckpointImage {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<CheckpointRecord> records;  // sorted by name
};

/// Serialized bytes of a store; identical stores and metadata give identical bytes.
template <Scalar T>
std::string encode_checkpoint(const ParameterStore<T>& store, const nlohmann::json& metadata) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.le(kCheckpointVersion);
  const std::string meta = metadata.dump();
  w.le(std::uint64_t(meta.size()));
  w.bytes(meta.data(), meta.size());
  w.le(std::uint64_t(store.size()));
  for (const auto& [name, t] : store) {  // std::map iteration: sorted by name
    w.le(std::uint32_t(name.size()));
    w.bytes(name.data(), name.size());
    w.le(std::uint8_t(dtype_of<T>::value));
    w.le(std::uint8_t(t.rank()));
    for (std::size_t d : t.dims()) w.le(std::uint64_t(d));
    w.scalars(t.data(), t.numel());
  }
  return w.str();
}

inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename checkpoint into place: " + path);
  }
}

template <Scalar T>
void save_checkpoint(const ParameterStore<T>& store, const nlohmann::json& metadata, const std::string& path) {
  write_file_atomic(path, encode_checkpoint(store, metadata));
}

inline CheckpointImage decode_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (!r.has(4)) throw BadMagic("\"" + bytes + "\" (file shorter than 4 bytes)");
  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    std::string shown = "\"";
    char hex[8];
    for (unsigned char c : magic) {
      if (c >= 0x20 && c < 0x7F) {
        shown += char(c);
      } else {
        std::snprintf(hex, sizeof(hex), "\\x%02X", c);
        shown += hex;
      }
    }
    throw BadMagic(shown + "\"");
  }
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw VersionMismatch(version);
  CheckpointImage img;
  const auto meta_len = r.le<std::uint64_t>("metadata length");
  const std::string meta = r.bytes(meta_len, "metadata");
  try {
    img.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  const auto count = r.le<std::uint64_t>("record count");
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string where = "record " + std::to_string(i);
    const auto name_len = r.le<std::uint32_t>(where + " name length");
    CheckpointRecord rec;
    rec.name = r.bytes(name_len, where + " name");
    if (!seen.insert(rec.name).second) throw DuplicateName(rec.name);
    const auto dt = r.le<std::uint8_t>(rec.name);
    if (dt > 1) throw CheckpointError("tensor " + rec.name + ": unsupported dtype code " + std::to_string(dt));
    rec.dtype = DType(dt);
    const auto rank = r.le<std::uint8_t>(rec.name);
    if (rank == 0 || rank > kMaxRank) {
      throw CheckpointError("tensor " + rec.name + ": invalid rank " + std::to_string(rank));
    }
    std::size_t numel = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto d = r.le<std::uint64_t>(rec.name);
      if (d == 0) throw CheckpointError("tensor " + rec.name + ": zero dimension");
      rec.dims.push_back(std::size_t(d));
      numel *= std::size_t(d);
    }
    const std::size_t width = rec.dtype == DType::kFloat32 ? 4 : 8;
    if (numel > bytes.size() / width + 1) throw TruncatedRecord(rec.name);
    rec.raw = r.bytes(numel * width, rec.name);
    rec.values.resize(numel);
    detail::ByteReader payload(rec.raw);
    if (rec.dtype == DType::kFloat32) {
      std::vector<float> tmp(numel);
      payload.scalars(tmp.data(), numel, rec.name);
      std::copy(tmp.begin(), tmp.end(), rec.values.begin());
    } else {
      payload.scalars(rec.values.data(), numel, rec.name);
    }
    img.records.push_back(std::move(rec));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after last checkpoint record");
  return img;
}

inline CheckpointImage read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path);
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

template <Scalar T>
struct LoadedCheckpoint {
  ParameterStore<T> store;
  nlohmann::json metadata;
};

/// Typed load: every record must already be of dtype T.
template <Scalar T>
LoadedCheckpoint<T> to_store(const CheckpointImage& img) {
  LoadedCheckpoint<T> out;
  out.metadata = img.metadata;
  for (const auto& rec : img.records) {
    if (rec.dtype != dtype_of<T>::value) throw DtypeMismatch(rec.name, rec.dtype, dtype_of<T>::value);
    AlignedVector<T> data(rec.values.begin(), rec.values.end());
    out.store.set(rec.name, Tensor<T>(rec.dims, std::move(data)));
  }
  return out;
}

template <Scalar T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  return to_store<T>(read_checkpoint(path));
}

struct ChangedTensor {
  std::string name;
  double max_abs_delta = 0;
};

struct CheckpointDiff {
  std::vector<std::string> identical;
  std::vector<ChangedTensor> changed;
  std::vector<std::string> only_a;
  std::vector<std::string> only_b;

  bool no_changes() const { return changed.empty() && only_a.empty() && only_b.empty(); }
};

/// Three-way partition of tensor names. A tensor is identical when dtype,
/// dims and payload bytes all match; a dims or dtype change counts as changed
/// with an infinite delta.
inline CheckpointDiff diff_checkpoints(const CheckpointImage& a, const CheckpointImage& b) {
  CheckpointDiff d;
  std::map<std::string, const CheckpointRecord*> bm;
  for (const auto& r : b.records) bm[r.name] = &r;
  std::set<std::string> an;
  for (const auto& ra : a.records) {
    an.insert(ra.name);
    auto it = bm.find(ra.name);
    if (it == bm.end()) {
      d.only_a.push_back(ra.name);
      continue;
    }
    const CheckpointRecord& rb = *it->second;
    if (ra.payload_equal(rb)) {
      d.identical.push_back(ra.name);
    } else if (ra.dims != rb.dims || ra.dtype != rb.dtype) {
      d.changed.push_back({ra.name, std::numeric_limits<double>::infinity()});
    } else {
      double m = 0;
      for (std::size_t i = 0; i < ra.values.size(); ++i) m = std::max(m, std::abs(ra.values[i] - rb.values[i]));
      d.changed.push_back({ra.name, m});
    }
  }
  for (const auto& rb : b.records) {
    if (!an.contains(rb.name)) d.only_b.push_back(rb.name);
  }
  return d;
}

template <Scalar T>
CheckpointImage image_of(const ParameterStore<T>& store, const nlohmann::json& metadata = nlohmann::json::object()) {
  return decode_checkpoint(encode_checkpoint(store, metadata));
}

inline nlohmann::json diff_to_json(const CheckpointDiff& d) {
  nlohmann::json changed = nlohmann::json::array();
  for (const auto& c : d.changed) changed.push_back({{"name", c.name}, {"max_abs_delta", c.max_abs_delta}});
  return {{"identical", d.identical}, {"changed", changed}, {"only_a", d.only_a}, {"only_b", d.only_b}};
}

}  // namespace xatl
