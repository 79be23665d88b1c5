#include "maskmod/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "maskmod/container.hpp"
#include "maskmod/error.hpp"

namespace maskmod::data {

Tensor Dataset::batch(std::span<const std::size_t> indices, std::span<const std::uint8_t> mirror) const {
  const std::size_t per = sample_numel();
  const std::size_t c = sample_shape[0], h = sample_shape[1], w = sample_shape[2];
  std::vector<double> out(indices.size() * per);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= size()) throw Error(ErrorKind::invalid_argument, "sample index out of range");
    const double* src = images.data() + indices[b] * per;
    double* dst = out.data() + b * per;
    if (!mirror.empty() && mirror[b]) {
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) dst[(ch * h + y) * w + x] = src[(ch * h + y) * w + (w - 1 - x)];
    } else {
      std::copy(src, src + per, dst);
    }
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor::from(std::move(shape), std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

void Dataset::validate() const {
  if (sample_shape.size() != 3) throw Error(ErrorKind::invalid_argument, "dataset samples must be [c,h,w]");
  if (images.size() != size() * sample_numel()) {
    throw Error(ErrorKind::invalid_argument, "dataset image buffer does not match its label count");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw Error(ErrorKind::invalid_argument, "label " + std::to_string(labels[i]) + " at index " +
                                                   std::to_string(i) + " outside [0," + std::to_string(classes) + ")");
    }
  }
}

std::string_view to_string(Transform t) {
  switch (t) {
    case Transform::none: return "none";
    case Transform::rotate90: return "rotate90";
    case Transform::invert: return "invert";
    case Transform::permute_labels: return "permute-labels";
    case Transform::channel_shuffle: return "channel-shuffle";
  }
  return "?";
}

Transform parse_transform(std::string_view text) {
  for (auto t : {Transform::none, Transform::rotate90, Transform::invert, Transform::permute_labels,
                 Transform::channel_shuffle}) {
    if (text == to_string(t)) return t;
  }
  throw Error(ErrorKind::invalid_argument, "unknown transform '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw Error(ErrorKind::invalid_argument, "unknown split '" + std::string(text) + "'");
}

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

nlohmann::json DatasetSpec::to_json() const {
  nlohmann::json j{{"name", name}, {"classes", classes}, {"norm_mean", norm.mean}, {"norm_std", norm.stddev}};
  if (source == Source::synthetic) {
    j["source"] = "synthetic";
    j["generator_seed"] = generator_seed;
    j["sample_seed"] = sample_seed;
    j["transform"] = std::string(to_string(transform));
    j["shape"] = {channels, height, width};
    j["train_count"] = train_count;
    j["test_count"] = test_count;
    j["noise"] = noise;
  } else {
    j["source"] = "idx";
    j["train_images"] = train_images;
    j["train_labels"] = train_labels;
    j["test_images"] = test_images;
    j["test_labels"] = test_labels;
  }
  return j;
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  try {
    DatasetSpec s;
    const auto source = j.value("source", std::string("synthetic"));
    s.name = j.value("name", std::string{});
    s.classes = j.at("classes").get<std::size_t>();
    s.norm.mean = j.value("norm_mean", s.norm.mean);
    s.norm.stddev = j.value("norm_std", s.norm.stddev);
    if (source == "synthetic") {
      s.source = Source::synthetic;
      s.generator_seed = j.at("generator_seed").get<std::uint64_t>();
      s.sample_seed = j.at("sample_seed").get<std::uint64_t>();
      s.transform = parse_transform(j.value("transform", std::string("none")));
      if (j.contains("shape")) {
        const auto shape = j.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 3) throw Error(ErrorKind::parse, "dataset shape must be [c,h,w]");
        s.channels = shape[0];
        s.height = shape[1];
        s.width = shape[2];
      }
      s.train_count = j.value("train_count", s.train_count);
      s.test_count = j.value("test_count", s.test_count);
      s.noise = j.value("noise", s.noise);
    } else if (source == "idx") {
      s.source = Source::idx;
      s.train_images = j.at("train_images").get<std::string>();
      s.train_labels = j.at("train_labels").get<std::string>();
      s.test_images = j.at("test_images").get<std::string>();
      s.test_labels = j.at("test_labels").get<std::string>();
    } else {
      throw Error(ErrorKind::parse, "unknown dataset source '" + source + "'");
    }
    if (s.norm.stddev <= 0.0) throw Error(ErrorKind::parse, "norm_std must be positive");
    if (s.classes == 0) throw Error(ErrorKind::parse, "classes must be positive");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("dataset spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (static_cast<std::uint32_t>(b[at]) << 24) | (static_cast<std::uint32_t>(b[at + 1]) << 16) |
         (static_cast<std::uint32_t>(b[at + 2]) << 8) | static_cast<std::uint32_t>(b[at + 3]);
}

struct IdxArray {
  std::vector<std::size_t> dims;
  std::span<const std::uint8_t> payload;
};

IdxArray parse_idx(std::span<const std::uint8_t> bytes, const std::string& what) {
  if (bytes.size() < 4) throw Error(ErrorKind::truncated, what + ": truncated IDX header");
  if (bytes[0] != 0 || bytes[1] != 0) throw Error(ErrorKind::bad_magic, what + ": bad IDX magic");
  if (bytes[2] != 0x08) {
    throw Error(ErrorKind::parse, what + ": only unsigned byte IDX data (type 0x08) is supported");
  }
  const std::size_t ndims = bytes[3];
  if (ndims == 0) throw Error(ErrorKind::parse, what + ": IDX file without dimensions");
  if (bytes.size() < 4 + 4 * ndims) throw Error(ErrorKind::truncated, what + ": truncated IDX dimensions");
  IdxArray a;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    a.dims.push_back(read_be32(bytes, 4 + 4 * i));
    count *= a.dims.back();
  }
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header + count) {
    throw Error(ErrorKind::truncated, what + ": expected " + std::to_string(count) + " data bytes, found " +
                                          std::to_string(bytes.size() - header));
  }
  a.payload = bytes.subspan(header, count);
  return a;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes,
                 Normalization norm) {
  const auto image_bytes = io::read_file(images);
  const auto label_bytes = io::read_file(labels);
  const auto img = parse_idx(image_bytes, images.string());
  const auto lab = parse_idx(label_bytes, labels.string());
  if (img.dims.size() != 3 && img.dims.size() != 4) {
    throw Error(ErrorKind::parse, images.string() + ": image file must have 3 or 4 dimensions");
  }
  if (lab.dims.size() != 1) throw Error(ErrorKind::parse, labels.string() + ": label file must have 1 dimension");
  if (lab.dims[0] != img.dims[0]) {
    throw Error(ErrorKind::shape_mismatch, "IDX sample count mismatch: " + std::to_string(img.dims[0]) + " images, " +
                                               std::to_string(lab.dims[0]) + " labels");
  }

  Dataset d;
  d.classes = classes;
  d.sample_shape = img.dims.size() == 3 ? Shape{1, img.dims[1], img.dims[2]} : Shape{img.dims[1], img.dims[2], img.dims[3]};
  for (auto e : d.sample_shape)
    if (e == 0) throw Error(ErrorKind::parse, images.string() + ": zero image extent");
  d.images.resize(img.payload.size());
  for (std::size_t i = 0; i < img.payload.size(); ++i) {
    d.images[i] = (static_cast<double>(img.payload[i]) / 255.0 - norm.mean) / norm.stddev;
  }
  round_in_place(d.images);
  d.labels.assign(lab.payload.begin(), lab.payload.end());
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic prototypes

std::uint64_t derive_seed(std::uint64_t seed, std::string_view salt) {
  // FNV-1a over the salt, then a splitmix64 finalizer with the seed.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : salt) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<double> rotate90(std::span<const double> sample, std::size_t c, std::size_t h, std::size_t w) {
  // Counter-clockwise: out[y][x] = in[x][w-1-y], output extent [c, w, h].
  std::vector<double> out(sample.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < w; ++y)
      for (std::size_t x = 0; x < h; ++x) out[(ch * w + y) * h + x] = sample[(ch * h + x) * w + (w - 1 - y)];
  return out;
}

std::vector<double> invert(std::span<const double> sample) {
  std::vector<double> out(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) out[i] = 1.0 - sample[i];
  return out;
}

std::vector<std::size_t> channel_permutation(std::uint64_t seed, std::size_t channels) {
  std::vector<std::size_t> perm(channels);
  for (std::size_t i = 0; i < channels; ++i) perm[i] = i;
  if (channels < 2) return perm;
  std::mt19937_64 rng(derive_seed(seed, "channel-permutation"));
  do {
    std::shuffle(perm.begin(), perm.end(), rng);
  } while (std::is_sorted(perm.begin(), perm.end()));
  return perm;
}

std::vector<int> label_permutation(std::uint64_t seed, std::size_t classes) {
  // A derangement: no class keeps its label.
  std::vector<int> perm(classes);
  for (std::size_t i = 0; i < classes; ++i) perm[i] = static_cast<int>(i);
  if (classes < 2) return perm;
  std::mt19937_64 rng(derive_seed(seed, "label-permutation"));
  for (;;) {
    std::shuffle(perm.begin(), perm.end(), rng);
    bool fixed = false;
    for (std::size_t i = 0; i < classes; ++i) fixed = fixed || perm[i] == static_cast<int>(i);
    if (!fixed) return perm;
  }
}

namespace {

struct Part {
  bool bar = true;
  double cx = 0, cy = 0;
  double angle = 0, length = 0, width = 0;
  std::vector<double> color;
};

// Parts favour near-horizontal bars and a red-heavy palette, so rotation and
// channel shuffling move a task away from the pretraining statistics.
std::vector<std::vector<double>> make_prototypes(const DatasetSpec& spec) {
  std::mt19937_64 rng(derive_seed(spec.generator_seed, "prototypes"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t c = spec.channels, h = spec.height, w = spec.width;
  std::vector<std::vector<double>> protos;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    std::vector<Part> parts(3);
    for (auto& p : parts) {
      p.bar = unit(rng) < 0.7;
      p.cx = 2.0 + unit(rng) * (static_cast<double>(w) - 5.0);
      p.cy = 2.0 + unit(rng) * (static_cast<double>(h) - 5.0);
      p.angle = (unit(rng) - 0.5) * std::numbers::pi / 3.0;
      p.length = 3.0 + unit(rng) * 4.0;
      p.width = 0.6 + unit(rng) * 0.8;
      p.color.resize(c);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double bias = 1.0 - 0.3 * static_cast<double>(ch);
        p.color[ch] = std::max(0.1, bias) * (0.3 + 0.7 * unit(rng));
      }
    }
    std::vector<double> img(c * h * w, 0.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        for (const auto& p : parts) {
          const double dx = static_cast<double>(x) - p.cx, dy = static_cast<double>(y) - p.cy;
          double v;
          if (p.bar) {
            const double along = dx * std::cos(p.angle) + dy * std::sin(p.angle);
            const double across = -dx * std::sin(p.angle) + dy * std::cos(p.angle);
            const double over = std::max(0.0, std::abs(along) - p.length / 2.0);
            v = std::exp(-(across * across + over * over) / (2.0 * p.width * p.width));
          } else {
            v = std::exp(-(dx * dx + dy * dy) / (2.0 * (p.width + 0.6) * (p.width + 0.6)));
          }
          for (std::size_t ch = 0; ch < c; ++ch) {
            auto& px = img[(ch * h + y) * w + x];
            px = std::max(px, v * p.color[ch]);
          }
        }
      }
    protos.push_back(std::move(img));
  }
  return protos;
}

}  // namespace

Dataset load(const DatasetSpec& spec, Split split, const std::filesystem::path& base_dir) {
  if (spec.source == DatasetSpec::Source::idx) {
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    return split == Split::train ? load_idx(resolve(spec.train_images), resolve(spec.train_labels), spec.classes, spec.norm)
                                 : load_idx(resolve(spec.test_images), resolve(spec.test_labels), spec.classes, spec.norm);
  }

  const std::size_t c = spec.channels, h = spec.height, w = spec.width;
  if (c == 0 || h < 6 || w < 6) throw Error(ErrorKind::invalid_argument, "synthetic images need c>0 and h,w >= 6");
  if (spec.transform == Transform::rotate90 && h != w) {
    throw Error(ErrorKind::invalid_argument, "rotate90 needs square images");
  }
  const auto protos = make_prototypes(spec);
  const std::size_t count = split == Split::train ? spec.train_count : spec.test_count;
  std::mt19937_64 rng(derive_seed(spec.sample_seed, to_string(split)));
  std::uniform_int_distribution<int> shift(-1, 1);
  std::uniform_real_distribution<double> amplitude(0.7, 1.3);
  std::normal_distribution<double> noise(0.0, spec.noise);
  const auto channel_perm = channel_permutation(spec.generator_seed, c);
  const auto label_perm = label_permutation(spec.sample_seed, spec.classes);

  Dataset d;
  d.sample_shape = {c, h, w};
  d.classes = spec.classes;
  d.images.resize(count * c * h * w);
  d.labels.resize(count);
  std::vector<double> sample(c * h * w);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t k = i % spec.classes;
    const auto& proto = protos[k];
    const int sx = shift(rng), sy = shift(rng);
    const double a = amplitude(rng);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const auto py = static_cast<std::ptrdiff_t>(y) - sy, px = static_cast<std::ptrdiff_t>(x) - sx;
          double v = 0.0;
          if (py >= 0 && px >= 0 && py < static_cast<std::ptrdiff_t>(h) && px < static_cast<std::ptrdiff_t>(w)) {
            v = a * proto[(ch * h + static_cast<std::size_t>(py)) * w + static_cast<std::size_t>(px)];
          }
          sample[(ch * h + y) * w + x] = std::clamp(v + noise(rng), 0.0, 1.0);
        }

    std::vector<double> out;
    switch (spec.transform) {
      case Transform::rotate90: out = rotate90(sample, c, h, w); break;
      case Transform::invert: out = invert(sample); break;
      case Transform::channel_shuffle:
        out.resize(sample.size());
        for (std::size_t ch = 0; ch < c; ++ch)
          std::copy_n(sample.begin() + static_cast<std::ptrdiff_t>(channel_perm[ch] * h * w), h * w,
                      out.begin() + static_cast<std::ptrdiff_t>(ch * h * w));
        break;
      default: out = sample; break;
    }
    for (std::size_t j = 0; j < out.size(); ++j) {
      d.images[i * out.size() + j] = (out[j] - spec.norm.mean) / spec.norm.stddev;
    }
    d.labels[i] = spec.transform == Transform::permute_labels ? label_perm[k] : static_cast<int>(k);
  }
  round_in_place(d.images);
  d.validate();
  return d;
}

std::vector<DatasetSpec> make_synthetic_suite(std::uint64_t seed, std::size_t n_tasks) {
  if (n_tasks < 2) throw Error(ErrorKind::invalid_argument, "a synthetic suite needs at least 2 tasks");
  static constexpr Transform kCycle[] = {Transform::rotate90, Transform::invert, Transform::channel_shuffle,
                                         Transform::permute_labels};
  std::vector<DatasetSpec> suite;
  DatasetSpec base;
  base.name = "task0";
  base.generator_seed = derive_seed(seed, "generator-0");
  base.sample_seed = derive_seed(seed, "samples-0");
  base.train_count = 3000;
  base.test_count = 500;
  suite.push_back(base);
  for (std::size_t i = 1; i < n_tasks; ++i) {
    DatasetSpec t = base;
    t.transform = kCycle[(i - 1) % 4];
    t.name = "task" + std::to_string(i) + "-" + std::string(to_string(t.transform));
    t.sample_seed = derive_seed(seed, "samples-" + std::to_string(i));
    if (t.transform != Transform::permute_labels) t.generator_seed = derive_seed(seed, "generator-" + std::to_string(i));
    t.train_count = 1000;
    t.test_count = 500;
    suite.push_back(std::move(t));
  }
  return suite;
}

}  // namespace maskmod::data
