#pragma once

// Checkpoint container, little-endian:
//
//   "MTMK" | version u16 = 1 | kind u8 (0 = baseline, 1 = task)
//   descriptor: u32 byte length + UTF-8 canonical JSON
//   entries until 32 bytes remain, each:
//     name: u16 byte length + UTF-8
//     dtype u8 (0 = f32 array, 1 = bit-packed mask)
//     rank u8, extents u32 x rank
//     payload: f32 values, or ceil(n/8) bytes, row-major, LSB-first, zero padded
//   SHA-256 digest (32 bytes) of all preceding bytes

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "maskmod/mask.hpp"
#include "maskmod/tensor.hpp"

namespace maskmod::io {

constexpr std::array<char, 4> kMagic{'M', 'T', 'M', 'K'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kDigestSize = 32;

using Digest = std::array<std::uint8_t, kDigestSize>;

Digest sha256(std::span<const std::uint8_t> bytes);
std::string to_hex(const Digest& d);

enum class ContainerKind : std::uint8_t { baseline = 0, task = 1 };
enum class DType : std::uint8_t { f32 = 0, bits = 1 };

struct Entry {
  std::string name;
  DType dtype = DType::f32;
  Tensor values;        // dtype f32
  mask::BitMask bits;   // dtype bits

  static Entry f32(std::string name, const Tensor& t) { return {std::move(name), DType::f32, t, {}}; }
  static Entry mask(std::string name, mask::BitMask b) { return {std::move(name), DType::bits, {}, std::move(b)}; }

  const Shape& shape() const { return dtype == DType::f32 ? values.shape() : bits.shape(); }
  std::size_t payload_bytes() const;
};

struct Container {
  ContainerKind kind = ContainerKind::baseline;
  std::string descriptor;
  std::vector<Entry> entries;

  const Entry& entry(const std::string& name) const;
  bool contains(const std::string& name) const;
};

std::vector<std::uint8_t> encode(const Container& c);
/// Throws bad_magic, bad_version, truncated, parse or digest_mismatch errors.
Container decode(std::span<const std::uint8_t> bytes);

/// Digest stored in the trailer of an encoded container.
Digest trailer_digest(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace maskmod::io
