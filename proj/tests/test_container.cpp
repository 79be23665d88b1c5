#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "maskmod/container.hpp"
#include "maskmod/error.hpp"
#include "support.hpp"

using namespace maskmod;
using namespace maskmod::io;
using maskmod::testing::random_tensor;

namespace {

Container sample_container(std::mt19937_64& rng) {
  Container c;
  c.kind = ContainerKind::task;
  c.descriptor = R"({"k":1})";
  c.entries.push_back(Entry::f32("a.weight", random_tensor({2, 3}, rng)));
  mask::BitMask bits = mask::BitMask::ones({9});
  bits.set(3, false);
  c.entries.push_back(Entry::mask("a.mask", bits));
  c.entries.push_back(Entry::f32("a.k0", Tensor::scalar(1.0)));
  return c;
}

ErrorKind decode_error(std::span<const std::uint8_t> bytes) {
  try {
    (void)decode(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorKind::io;
}

}  // namespace

TEST(Container, NineWeightMaskOccupiesTwoBytes) {
  const Entry e = Entry::mask("m", mask::BitMask::ones({9}));
  EXPECT_EQ(e.payload_bytes(), 2U);
  Container c;
  c.descriptor = "{}";
  c.entries.push_back(e);
  // header 7, descriptor 4+2, name 2+1, dtype 1, rank 1, extent 4, payload 2, digest 32
  EXPECT_EQ(encode(c).size(), 7U + 6U + 3U + 1U + 1U + 4U + 2U + 32U);
}

TEST(Container, LayoutIsLittleEndianWithMagicAndKind) {
  std::mt19937_64 rng(1);
  const auto bytes = encode(sample_container(rng));
  EXPECT_EQ(bytes[0], 'M');
  EXPECT_EQ(bytes[3], 'K');
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 1);
  EXPECT_EQ(bytes[7], 7);  // descriptor length, low byte first
  EXPECT_EQ(bytes[8], 0);
  const auto d = sha256(std::span(bytes).first(bytes.size() - kDigestSize));
  EXPECT_EQ(trailer_digest(bytes), d);
}

TEST(Container, RoundTripIsIdempotent) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto first = encode(sample_container(rng));
    const Container decoded = decode(first);
    EXPECT_EQ(decoded.entry("a.mask").bits.popcount(), 8U);
    EXPECT_EQ(encode(decoded), first);
  }
}

TEST(Container, Sha256KnownVector) {
  const std::string abc = "abc";
  const auto d = sha256(std::span(reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()));
  EXPECT_EQ(to_hex(d), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Container, CorruptMaskByteIsDigestMismatch) {
  std::mt19937_64 rng(3);
  const Container c = sample_container(rng);
  const auto bytes = encode(c);
  // The mask payload sits right before the k0 record: name(2+4) dtype rank extent(4) f32(4).
  const std::size_t k0_record = 2 + 4 + 1 + 1 + 4 + 4;
  const std::size_t mask_last = bytes.size() - kDigestSize - k0_record - 1;
  for (std::size_t offset : {mask_last - 1, mask_last}) {
    auto corrupt = bytes;
    corrupt[offset] ^= 0x01;
    EXPECT_EQ(decode_error(corrupt), ErrorKind::digest_mismatch);
  }
}

TEST(Container, DistinctErrorKinds) {
  std::mt19937_64 rng(4);
  const auto bytes = encode(sample_container(rng));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(decode_error(bad_magic), ErrorKind::bad_magic);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_EQ(decode_error(bad_version), ErrorKind::bad_version);
  for (std::size_t keep : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() - 1}) {
    EXPECT_EQ(decode_error(std::span(bytes).first(keep)), ErrorKind::truncated) << keep;
  }
  auto flipped = bytes;
  flipped[12] ^= 0x40;
  EXPECT_EQ(decode_error(flipped), ErrorKind::digest_mismatch);
}

TEST(Container, FileRoundTrip) {
  std::mt19937_64 rng(5);
  const auto dir = std::filesystem::temp_directory_path() / "maskmod_container_test";
  const auto path = dir / "nested" / "c.mtmk";
  const auto bytes = encode(sample_container(rng));
  write_file(path, bytes);
  EXPECT_EQ(read_file(path), bytes);
  std::filesystem::remove_all(dir);
  try {
    (void)read_file(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}
