#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "utlo/common.hpp"

namespace utlo {

// Versioned binary container: magic "UTLO", version u32, then a sequence of
// (name_len u32, name bytes, rank u32, dims u32..., f32 payload) records.
// Optimizer state rides along under ".adam_m" / ".adam_v" / ".step" suffixes.

struct CheckpointRecord {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> data;
};

namespace detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline uint32_t get_u32(const std::vector<uint8_t>& in, size_t& pos) {
  if (pos + 4 > in.size()) throw FormatError("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace detail

constexpr uint32_t kCheckpointVersion = 1;

inline std::vector<uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'U', 'T', 'L', 'O'});
  detail::put_u32(out, kCheckpointVersion);
  for (const auto& r : records) {
    detail::put_u32(out, static_cast<uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    detail::put_u32(out, static_cast<uint32_t>(r.dims.size()));
    uint64_t n = 1;
    for (uint32_t d : r.dims) {
      detail::put_u32(out, d);
      n *= d;
    }
    if (n != r.data.size()) throw ContractError("checkpoint: record '" + r.name + "' size mismatch");
    const size_t base = out.size();
    out.resize(base + 4 * r.data.size());
    std::memcpy(out.data() + base, r.data.data(), 4 * r.data.size());
  }
  return out;
}

inline std::vector<CheckpointRecord> decode_checkpoint(const std::vector<uint8_t>& in) {
  size_t pos = 0;
  if (in.size() < 8 || std::memcmp(in.data(), "UTLO", 4) != 0)
    throw FormatError("checkpoint: bad magic bytes (expected UTLO)");
  pos = 4;
  const uint32_t version = detail::get_u32(in, pos);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  std::vector<CheckpointRecord> records;
  while (pos < in.size()) {
    CheckpointRecord r;
    const uint32_t name_len = detail::get_u32(in, pos);
    if (pos + name_len > in.size()) throw FormatError("checkpoint: truncated record name");
    r.name.assign(reinterpret_cast<const char*>(in.data() + pos), name_len);
    pos += name_len;
    const uint32_t rank = detail::get_u32(in, pos);
    uint64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      r.dims.push_back(detail::get_u32(in, pos));
      n *= r.dims.back();
    }
    if (pos + 4 * n > in.size()) throw FormatError("checkpoint: truncated payload in '" + r.name + "'");
    r.data.resize(n);
    std::memcpy(r.data.data(), in.data() + pos, 4 * n);
    pos += 4 * n;
    records.push_back(std::move(r));
  }
  return records;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error("cannot open for writing: " + path);
  const size_t n = bytes.empty() ? 0 : std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (n != bytes.size()) throw Error("short write: " + path);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw Error("cannot open for reading: " + path);
  std::fseek(f, 0, SEEK_END);
  const long sz = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> bytes(static_cast<size_t>(sz));
  const size_t n = sz ? std::fread(bytes.data(), 1, bytes.size(), f) : 0;
  std::fclose(f);
  if (n != bytes.size()) throw Error("short read: " + path);
  return bytes;
}

// u64 values (counters, rng state) are stored as 8 bytes spread over 8
// floats, each holding a byte value 0..255; arithmetic-free round trip.
inline std::vector<float> u64_to_floats(uint64_t v) {
  std::vector<float> out(8);
  for (int i = 0; i < 8; ++i) out[i] = static_cast<float>((v >> (8 * i)) & 0xff);
  return out;
}

inline uint64_t floats_to_u64(const std::vector<float>& f) {
  if (f.size() != 8) throw FormatError("checkpoint: bad u64 payload");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(f[i])) << (8 * i);
  return v;
}

}  // namespace utlo
