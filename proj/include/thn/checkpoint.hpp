#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "thn/tensor.hpp"

namespace thn {

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320).
inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t crc = 0) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

// Checkpoint container, magic "THN1":
//   magic[4], version u32 LE (1 = f32 payload, 2 = f64 payload),
//   count u32 LE, then per record:
//     name_len u32 LE, name bytes, rank u32 LE, dims u64 LE each, payload LE floats,
//   trailing CRC32 (u32 LE) of all preceding bytes.
struct CheckpointRecord {
  std::string name;
  Shape dims;
  std::vector<double> values;  // held in double; written at the file's precision
};

namespace detail {

struct ByteWriter {
  std::vector<std::uint8_t> bytes;
  void u32(std::uint32_t x) {
    for (int i = 0; i < 4; ++i) bytes.push_back(std::uint8_t(x >> (8 * i)));
  }
  void u64(std::uint64_t x) {
    for (int i = 0; i < 8; ++i) bytes.push_back(std::uint8_t(x >> (8 * i)));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
};

struct ByteReader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= std::uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    return x;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= std::uint64_t(bytes[pos + i]) << (8 * i);
    pos += 8;
    return x;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes.data() + pos, n);
    pos += n;
  }
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records,
                            int precision_bits = 32) {
  require(precision_bits == 32 || precision_bits == 64, "checkpoint: precision must be 32 or 64");
  detail::ByteWriter w;
  w.raw("THN1", 4);
  w.u32(precision_bits == 32 ? 1u : 2u);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.raw(r.name.data(), r.name.size());
    w.u32(static_cast<std::uint32_t>(r.dims.size()));
    for (int d : r.dims) w.u64(static_cast<std::uint64_t>(d));
    if (precision_bits == 32) {
      for (double x : r.values) {
        const float f = static_cast<float>(x);
        w.raw(&f, 4);
      }
    } else {
      for (double x : r.values) w.raw(&x, 8);
    }
  }
  const std::uint32_t crc = crc32(w.bytes.data(), w.bytes.size());
  w.u32(crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline std::vector<CheckpointRecord> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw std::runtime_error("checkpoint: file too small: " + path);

  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= std::uint32_t(bytes[body + i]) << (8 * i);
  if (crc32(bytes.data(), body) != stored) throw std::runtime_error("checkpoint: CRC mismatch: " + path);

  detail::ByteReader r{bytes};
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "THN1", 4) != 0) throw std::runtime_error("checkpoint: bad magic: " + path);
  const std::uint32_t version = r.u32();
  if (version != 1 && version != 2) throw std::runtime_error("checkpoint: unsupported version");
  const std::uint32_t count = r.u32();

  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    const std::uint32_t name_len = r.u32();
    rec.name.resize(name_len);
    r.raw(rec.name.data(), name_len);
    const std::uint32_t rank = r.u32();
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t e = r.u64();
      rec.dims.push_back(static_cast<int>(e));
      n *= e;
    }
    rec.values.resize(n);
    if (version == 1) {
      for (std::uint64_t k = 0; k < n; ++k) {
        float f;
        r.raw(&f, 4);
        rec.values[k] = f;
      }
    } else {
      r.raw(rec.values.data(), n * 8);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace thn
