#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kdesign/errors.hpp"
#include "kdesign/phantom.hpp"

namespace kdesign {

// Binary dataset container: magic, format version, little-endian u32
// dimensions, then raw interleaved complex doubles (maps first, slices
// after). Split assignments live in a plain-text sidecar manifest
// "<path>.manifest" with one "<index> <split>" line per slice.

inline constexpr char kDatasetMagic[4] = {'K', 'D', 'S', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& buf, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Cursor {
 public:
  Cursor(const std::string& buf, std::size_t pos) : buf_(buf), pos_(pos) {}

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8, "f64");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }

  cxd complex() {
    const double re = f64();
    return {re, f64()};
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > buf_.size()) {
      throw TruncatedPayload(std::string("dataset: ran out of bytes reading ") + what);
    }
  }

  const std::string& buf_;
  std::size_t pos_;
};

}  // namespace detail

/// FNV-1a 64-bit.
inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string serialize_dataset(const Dataset& ds) {
  std::string buf;
  buf.append(kDatasetMagic, 4);
  detail::put_u32(buf, kDatasetVersion);
  detail::put_u32(buf, static_cast<std::uint32_t>(ds.n0));
  detail::put_u32(buf, static_cast<std::uint32_t>(ds.maps.coils));
  detail::put_u32(buf, static_cast<std::uint32_t>(ds.slices.size()));
  for (const cxd& v : ds.maps.values) {
    detail::put_f64(buf, v.real());
    detail::put_f64(buf, v.imag());
  }
  for (const MultiCoilKSpace& slice : ds.slices) {
    for (const cxd& v : slice.samples) {
      detail::put_f64(buf, v.real());
      detail::put_f64(buf, v.imag());
    }
  }
  return buf;
}

inline std::string dataset_manifest(const Dataset& ds) {
  std::string out;
  for (std::size_t i = 0; i < ds.splits.size(); ++i) {
    out += std::to_string(i);
    out += ' ';
    out += split_name(ds.splits[i]);
    out += '\n';
  }
  return out;
}

/// Content identity of a dataset: hash of the binary payload plus the
/// manifest, so both the samples and the split assignment are pinned.
inline std::uint64_t dataset_hash(const Dataset& ds) {
  return fnv1a64(serialize_dataset(ds) + dataset_manifest(ds));
}

inline std::string manifest_path(const std::string& path) { return path + ".manifest"; }

inline void save_dataset(const Dataset& ds, const std::string& path) {
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("dataset: cannot open for writing: " + path);
    const std::string buf = serialize_dataset(ds);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("dataset: write failed: " + path);
  }
  std::ofstream m(manifest_path(path), std::ios::trunc);
  if (!m) throw IoError("dataset: cannot open manifest for writing: " + manifest_path(path));
  m << dataset_manifest(ds);
  if (!m) throw IoError("dataset: manifest write failed: " + manifest_path(path));
}

inline Dataset parse_dataset(const std::string& buf) {
  if (buf.size() < 4 || buf.compare(0, 4, kDatasetMagic, 4) != 0) {
    throw CorruptHeader("dataset: bad magic bytes");
  }
  detail::Cursor cur(buf, 4);
  const std::uint32_t version = cur.u32();
  if (version != kDatasetVersion) {
    throw VersionMismatch("dataset: version " + std::to_string(version) + ", expected " +
                          std::to_string(kDatasetVersion));
  }
  const std::uint32_t n0 = cur.u32();
  const std::uint32_t coils = cur.u32();
  const std::uint32_t count = cur.u32();
  if (n0 < 2 || n0 % 2 != 0 || coils < 1) {
    throw CorruptHeader("dataset: implausible dimensions n0=" + std::to_string(n0) +
                        " coils=" + std::to_string(coils));
  }
  Dataset ds;
  ds.n0 = static_cast<int>(n0);
  ds.maps = SensitivityMaps(static_cast<int>(coils), static_cast<int>(n0));
  for (cxd& v : ds.maps.values) v = cur.complex();
  for (std::uint32_t t = 0; t < count; ++t) {
    MultiCoilKSpace slice(static_cast<int>(coils), static_cast<int>(n0));
    for (cxd& v : slice.samples) v = cur.complex();
    ds.slices.push_back(std::move(slice));
  }
  if (cur.remaining() != 0) {
    throw CorruptHeader("dataset: " + std::to_string(cur.remaining()) + " trailing bytes");
  }
  ds.splits.assign(count, Split::Train);
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("dataset: cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  Dataset ds = parse_dataset(ss.str());

  std::ifstream m(manifest_path(path));
  if (!m) throw IoError("manifest", "dataset: cannot open manifest: " + manifest_path(path));
  std::vector<bool> seen(ds.slices.size(), false);
  std::string line;
  while (std::getline(m, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t index = 0;
    std::string split;
    if (!(ls >> index >> split) || index >= ds.slices.size() || seen[index]) {
      throw IoError("manifest", "dataset: bad manifest line: " + line);
    }
    ds.splits[index] = split_from_name(split);
    seen[index] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) {
      throw IoError("manifest", "dataset: slice " + std::to_string(i) + " missing from manifest");
    }
  }
  return ds;
}

}  // namespace kdesign
