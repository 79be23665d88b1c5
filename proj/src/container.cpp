#include "maskmod/container.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "maskmod/error.hpp"

namespace maskmod::io {

Digest sha256(std::span<const std::uint8_t> bytes) {
  Digest d{};
  SHA256(bytes.data(), bytes.size(), d.data());
  return d;
}

std::string to_hex(const Digest& d) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(2 * d.size());
  for (auto b : d) {
    s += kHex[b >> 4];
    s += kHex[b & 0xF];
  }
  return s;
}

std::size_t Entry::payload_bytes() const {
  return dtype == DType::f32 ? values.numel() * sizeof(float) : bits.packed_bytes();
}

const Entry& Container::entry(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw Error(ErrorKind::layer_mismatch, "container has no entry '" + name + "'");
}

bool Container::contains(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return true;
  return false;
}

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void str(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return limit_ - pos_; }

  void need(std::size_t n, const char* what) const {
    if (n > remaining()) {
      throw Error(ErrorKind::truncated, std::string("container truncated while reading ") + what + " at offset " +
                                            std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode(const Container& c) {
  Writer w;
  w.str(std::string_view(kMagic.data(), kMagic.size()));
  w.u16(kVersion);
  w.u8(static_cast<std::uint8_t>(c.kind));
  w.u32(static_cast<std::uint32_t>(c.descriptor.size()));
  w.str(c.descriptor);
  for (const auto& e : c.entries) {
    if (e.name.size() > 0xFFFF) throw Error(ErrorKind::invalid_argument, "entry name too long");
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.str(e.name);
    w.u8(static_cast<std::uint8_t>(e.dtype));
    const auto& shape = e.shape();
    if (shape.size() > 0xFF) throw Error(ErrorKind::invalid_argument, "entry rank too large");
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (auto extent : shape) w.u32(static_cast<std::uint32_t>(extent));
    if (e.dtype == DType::f32) {
      for (double v : e.values.data()) w.f32(static_cast<float>(v));
    } else {
      w.bytes(e.bits.packed());
    }
  }
  auto& out = w.buffer();
  const Digest d = sha256(out);
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

Digest trailer_digest(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kDigestSize) throw Error(ErrorKind::truncated, "container shorter than its digest");
  Digest d{};
  std::memcpy(d.data(), bytes.data() + bytes.size() - kDigestSize, kDigestSize);
  return d;
}

Container decode(std::span<const std::uint8_t> bytes) {
  const std::size_t head = std::min(bytes.size(), kMagic.size());
  if (!std::equal(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(head), kMagic.begin())) {
    throw Error(ErrorKind::bad_magic, "not a mask checkpoint (bad magic)");
  }
  if (bytes.size() < kMagic.size() + 2 + 1 + 4 + kDigestSize) {
    throw Error(ErrorKind::truncated, "container truncated: " + std::to_string(bytes.size()) + " bytes");
  }
  Reader r(bytes, bytes.size() - kDigestSize);
  r.take(kMagic.size(), "magic");
  const auto version = r.u16("version");
  if (version != kVersion) {
    throw Error(ErrorKind::bad_version, "unsupported container version " + std::to_string(version));
  }
  Container c;
  const auto kind = r.u8("kind");
  if (kind > 1) throw Error(ErrorKind::parse, "unknown container kind " + std::to_string(kind));
  c.kind = static_cast<ContainerKind>(kind);
  const auto desc_len = r.u32("descriptor length");
  auto desc = r.take(desc_len, "descriptor");
  c.descriptor.assign(desc.begin(), desc.end());

  // Structure first, so a short file reports truncation; then the digest, so
  // corrupted payload bytes report a digest mismatch before any value checks.
  struct Record {
    std::string name;
    DType dtype;
    Shape shape;
    std::span<const std::uint8_t> payload;
  };
  std::vector<Record> records;
  while (r.remaining() > 0) {
    Record rec;
    const auto name_len = r.u16("entry name length");
    auto name = r.take(name_len, "entry name");
    rec.name.assign(name.begin(), name.end());
    const auto dtype = r.u8("dtype");
    if (dtype > 1) throw Error(ErrorKind::parse, "entry '" + rec.name + "' has unknown dtype " + std::to_string(dtype));
    rec.dtype = static_cast<DType>(dtype);
    rec.shape.resize(r.u8("rank"));
    for (auto& extent : rec.shape) extent = r.u32("extent");
    std::size_t n = 1;
    for (auto extent : rec.shape) {
      if (extent != 0 && n > r.remaining() * 8 / extent) r.need(r.remaining() + 1, "payload");
      n *= extent;
    }
    rec.payload = rec.dtype == DType::f32 ? r.take(n * sizeof(float), "f32 payload") : r.take((n + 7) / 8, "mask payload");
    records.push_back(std::move(rec));
  }

  const Digest expected = sha256(bytes.first(bytes.size() - kDigestSize));
  if (expected != trailer_digest(bytes)) {
    throw Error(ErrorKind::digest_mismatch, "content digest mismatch (stored " + to_hex(trailer_digest(bytes)) +
                                                ", computed " + to_hex(expected) + ")");
  }

  for (auto& rec : records) {
    for (auto extent : rec.shape) {
      if (extent == 0) throw Error(ErrorKind::parse, "entry '" + rec.name + "' has a zero extent");
    }
    Entry e;
    e.name = std::move(rec.name);
    e.dtype = rec.dtype;
    if (e.dtype == DType::f32) {
      const std::size_t n = rec.payload.size() / sizeof(float);
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(rec.payload[4 * i + b]) << (8 * b);
        values[i] = static_cast<double>(std::bit_cast<float>(u));
      }
      e.values = Tensor::from(std::move(rec.shape), std::move(values));
    } else {
      e.bits = mask::BitMask(std::move(rec.shape), std::vector<std::uint8_t>(rec.payload.begin(), rec.payload.end()));
    }
    c.entries.push_back(std::move(e));
  }
  return c;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "write failed for '" + path.string() + "'");
}

}  // namespace maskmod::io
