#include "lln/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "lln/error.hpp"

namespace lln {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Byte-level helpers
// ---------------------------------------------------------------------------
namespace {

class ByteWriter {
 public:
  void magic(const char (&tag)[5]) { bytes_.insert(bytes_.end(), tag, tag + 4); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) {
    const auto u = static_cast<std::uint64_t>(v);
    u32(static_cast<std::uint32_t>(u & 0xffffffffu));
    u32(static_cast<std::uint32_t>(u >> 32));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f32s(std::span<const double> v) {
    for (double x : v) f32(x);
  }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw FormatError(what_ + ": " + msg + " (at byte " + std::to_string(at) + ")");
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::uint64_t n, const char* field) const {
    if (remaining() < n) {
      fail(std::string("truncated ") + field + ": need " + std::to_string(n) + " bytes, have " +
               std::to_string(remaining()),
           pos_);
    }
  }
  void magic(const char (&tag)[5]) {
    need(4, "magic");
    if (std::memcmp(bytes_.data() + pos_, tag, 4) != 0) fail(std::string("bad magic, expected '") + tag + "'", pos_);
    pos_ += 4;
  }
  std::uint8_t u8(const char* field) {
    need(1, field);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int64_t i64(const char* field) {
    need(8, field);
    const std::uint64_t lo = u32(field);
    const std::uint64_t hi = u32(field);
    return static_cast<std::int64_t>(lo | (hi << 32));
  }
  double f32(const char* field) {
    const std::size_t at = pos_;
    const float f = std::bit_cast<float>(u32(field));
    if (!std::isfinite(f)) fail(std::string("non-finite ") + field, at);
    return static_cast<double>(f);
  }
  void f32s(std::span<double> out, const char* field) {
    need(static_cast<std::uint64_t>(out.size()) * 4, field);
    for (double& v : out) v = f32(field);
  }
  std::string raw(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) {
      fail("unexpected " + std::to_string(bytes_.size() - pos_) + " trailing bytes", pos_);
    }
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string format_double(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

void check_csv_field(const std::string& s) {
  if (s.find_first_of(",\n\r") != std::string::npos) {
    throw FormatError("identifier '" + s + "' cannot be written to CSV (contains a comma or newline)");
  }
}

}  // namespace

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(std::span<const std::uint8_t> bytes, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void write_text(const std::string& text, const fs::path& path) {
  write_bytes({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}, path);
}

// ---------------------------------------------------------------------------
// Feature maps
// ---------------------------------------------------------------------------
std::vector<std::uint8_t> encode_feature_map(const FeatureMap& map) {
  for (double v : map.data()) {
    if (!std::isfinite(static_cast<float>(v))) throw FormatError("feature map holds a non-finite value");
  }
  ByteWriter w;
  w.magic("FMAP");
  w.u32(kFeatureMapVersion);
  w.u32(static_cast<std::uint32_t>(map.height()));
  w.u32(static_cast<std::uint32_t>(map.width()));
  w.u32(static_cast<std::uint32_t>(map.channels()));
  w.f32s(map.data());
  return w.take();
}

FeatureMap decode_feature_map(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "feature map");
  r.need(kFeatureMapHeaderBytes, "header");
  r.magic("FMAP");
  const std::uint32_t version = r.u32("version");
  if (version != kFeatureMapVersion) r.fail("unsupported version " + std::to_string(version), 4);
  const std::uint32_t h = r.u32("height");
  const std::uint32_t w = r.u32("width");
  const std::uint32_t c = r.u32("channels");
  if (h == 0 || w == 0 || c == 0) r.fail("zero dimension in header", 8);
  if (h > (1u << 16) || w > (1u << 16) || c > (1u << 20)) r.fail("implausible dimensions in header", 8);
  const std::uint64_t expected = static_cast<std::uint64_t>(h) * w * c * 4;
  if (r.remaining() != expected) {
    r.fail("payload length mismatch: header " + std::to_string(h) + "x" + std::to_string(w) + "x" +
               std::to_string(c) + " needs " + std::to_string(expected) + " bytes, file has " +
               std::to_string(r.remaining()),
           kFeatureMapHeaderBytes);
  }
  std::vector<double> data(static_cast<std::size_t>(expected / 4));
  r.f32s(data, "feature value");
  return FeatureMap(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), std::move(data));
}

void write_feature_map(const FeatureMap& map, const fs::path& path) { write_bytes(encode_feature_map(map), path); }

FeatureMap read_feature_map(const fs::path& path) {
  try {
    return decode_feature_map(read_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------
namespace {

void encode_layer(ByteWriter& w, const ConvLayer& l) {
  w.u32(static_cast<std::uint32_t>(l.kernel_size));
  w.u32(static_cast<std::uint32_t>(l.in_channels));
  w.u32(static_cast<std::uint32_t>(l.out_channels));
  w.f32s(l.weights);
  w.f32s(l.bias);
}

ConvLayer decode_layer(ByteReader& r) {
  const std::size_t at = r.pos();
  const std::uint32_t k = r.u32("kernel size");
  const std::uint32_t in = r.u32("in channels");
  const std::uint32_t out = r.u32("out channels");
  if (k == 0 || k % 2 == 0 || k > 63) r.fail("invalid kernel size " + std::to_string(k), at);
  if (in == 0 || out == 0 || in > (1u << 20) || out > (1u << 20)) r.fail("invalid channel counts", at + 4);
  const std::uint64_t count = static_cast<std::uint64_t>(k) * k * in * out;
  r.need(count * 4 + static_cast<std::uint64_t>(out) * 4, "layer parameters");
  ConvLayer l;
  l.kernel_size = static_cast<int>(k);
  l.in_channels = static_cast<int>(in);
  l.out_channels = static_cast<int>(out);
  l.weights.resize(static_cast<std::size_t>(count));
  l.bias.resize(out);
  r.f32s(l.weights, "weight");
  r.f32s(l.bias, "bias");
  return l;
}

}  // namespace

std::vector<std::uint8_t> encode_model(const LLNParams& params) {
  params.validate();
  ByteWriter w;
  w.magic("LLNW");
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(params.branches.size()));
  w.u32(params.branch_relu ? 1u : 0u);
  for (const auto& b : params.branches) encode_layer(w, b);
  encode_layer(w, params.combiner);
  return w.take();
}

LLNParams decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "model");
  r.magic("LLNW");
  const std::uint32_t version = r.u32("version");
  if (version != kModelVersion) r.fail("unsupported version " + std::to_string(version), 4);
  const std::uint32_t branches = r.u32("branch count");
  if (branches == 0 || branches > 64) r.fail("invalid branch count " + std::to_string(branches), 8);
  const std::uint32_t flags = r.u32("flags");
  if ((flags & ~1u) != 0) r.fail("unknown flag bits", 12);
  LLNParams p;
  p.branch_relu = (flags & 1u) != 0;
  for (std::uint32_t i = 0; i < branches; ++i) p.branches.push_back(decode_layer(r));
  p.combiner = decode_layer(r);
  r.expect_end();
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model: inconsistent layer shapes: ") + e.what());
  }
  return p;
}

void write_model(const LLNParams& params, const fs::path& path) { write_bytes(encode_model(params), path); }

LLNParams read_model(const fs::path& path) {
  try {
    return decode_model(read_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------
DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = "manifest line " + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(where + e.what());
    }
    if (!j.is_object()) throw FormatError(where + "expected a JSON object");
    ManifestEntry e;
    try {
      e.id = j.at("id").get<std::string>();
      e.path = j.at("path").get<std::string>();
      const json& loc = j.at("location");
      e.location = loc.is_string() ? loc.get<std::string>() : loc.dump();
      if (j.contains("frame") && !j["frame"].is_null()) e.frame = j["frame"].get<std::int64_t>();
      if (j.contains("positive") && !j["positive"].is_null()) e.positive = j["positive"].get<std::string>();
    } catch (const json::exception& ex) {
      throw FormatError(where + ex.what());
    }
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

DatasetManifest read_manifest(const fs::path& path) {
  try {
    return parse_manifest(read_text(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& e : manifest.entries) {
    json j;
    j["id"] = e.id;
    j["path"] = e.path;
    j["location"] = e.location;
    if (e.frame) j["frame"] = *e.frame;
    if (e.positive) j["positive"] = *e.positive;
    out += j.dump() + "\n";
  }
  return out;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  write_text(format_manifest(manifest), path);
}

namespace {

fs::path resolve(const std::string& p, const fs::path& base) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

Dataset load_dataset(const DatasetManifest& manifest, const fs::path& base_dir) {
  manifest.validate();
  Dataset d;
  d.manifest = manifest;
  for (const auto& e : manifest.entries) d.features.push_back(read_feature_map(resolve(e.path, base_dir)));
  return d;
}

std::vector<ImageRecord> load_images(const DatasetManifest& manifest, const fs::path& base_dir) {
  manifest.validate();
  std::vector<ImageRecord> out;
  for (const auto& e : manifest.entries) out.push_back({e.id, e.frame, read_feature_map(resolve(e.path, base_dir))});
  return out;
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------
GrayImage read_pgm(const fs::path& path) {
  const auto bytes = read_bytes(path);
  std::size_t pos = 0;
  auto fail = [&](const std::string& msg) -> void {
    throw FormatError(path.string() + ": " + msg + " (at byte " + std::to_string(pos) + ")");
  };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> long {
    skip_space();
    long v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos]) && v < 1000000) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) fail("expected a number in PGM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("not a binary PGM (P5)");
  pos = 2;
  const long w = number();
  const long h = number();
  const long maxval = number();
  if (w < 1 || h < 1) fail("PGM dimensions must be positive");
  if (maxval < 1 || maxval > 255) fail("only 8-bit PGM is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("missing whitespace after PGM header");
  ++pos;
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - pos < n) fail("truncated PGM payload: expected " + std::to_string(n) + " bytes");
  GrayImage img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::lround(p * 255.0 / maxval));
  }
  return img;
}

void write_pgm(const GrayImage& image, const fs::path& path) {
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height) {
    throw ConfigError("gray image buffer does not match its dimensions");
  }
  ByteWriter w;
  w.raw("P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n");
  auto bytes = w.take();
  bytes.insert(bytes.end(), image.pixels.begin(), image.pixels.end());
  write_bytes(bytes, path);
}

GrayImage render_activation_map(const ActivationMap& activations) {
  GrayImage img;
  img.width = activations.width;
  img.height = activations.height;
  img.pixels.assign(activations.values.size(), 0);
  if (activations.values.empty()) return img;
  const auto [lo, hi] = std::minmax_element(activations.values.begin(), activations.values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return img;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround((activations.values[i] - *lo) / range * 255.0));
  }
  return img;
}

void dump_activation_map(const ActivationMap& activations, const fs::path& path) {
  write_pgm(render_activation_map(activations), path);
}

// ---------------------------------------------------------------------------
// Toy extractor
// ---------------------------------------------------------------------------
namespace {

constexpr int kOrientationBins = 8;
constexpr int kPatchStats = kOrientationBins + 2 + 4;

std::array<double, kPatchStats> patch_stats(const GrayImage& img, int x0, int y0, int s) {
  std::array<double, kPatchStats> stats{};
  auto px = [&](int x, int y) {
    x = std::clamp(x, x0, x0 + s - 1);
    y = std::clamp(y, y0, y0 + s - 1);
    return img.at(x, y) / 255.0;
  };
  double sum = 0.0, sum_sq = 0.0;
  std::array<double, 4> quadrant{};
  std::array<int, 4> quadrant_count{};
  const int half = std::max(s / 2, 1);
  for (int y = y0; y < y0 + s; ++y) {
    for (int x = x0; x < x0 + s; ++x) {
      const double v = px(x, y);
      sum += v;
      sum_sq += v * v;
      const int q = ((y - y0) >= half ? 2 : 0) + ((x - x0) >= half ? 1 : 0);
      quadrant[q] += v;
      ++quadrant_count[q];
      const double gx = px(x + 1, y) - px(x - 1, y);
      const double gy = px(x, y + 1) - px(x, y - 1);
      const double mag = std::sqrt(gx * gx + gy * gy);
      if (mag <= 0.0) continue;
      const double angle = std::atan2(gy, gx) + std::numbers::pi;
      int bin = static_cast<int>(angle / (2.0 * std::numbers::pi) * kOrientationBins);
      bin = std::clamp(bin, 0, kOrientationBins - 1);
      stats[static_cast<std::size_t>(bin)] += mag;
    }
  }
  const double area = static_cast<double>(s) * s;
  for (int b = 0; b < kOrientationBins; ++b) stats[static_cast<std::size_t>(b)] /= area;
  const double mean = sum / area;
  stats[kOrientationBins] = mean;
  stats[kOrientationBins + 1] = std::sqrt(std::max(sum_sq / area - mean * mean, 0.0));
  for (int q = 0; q < 4; ++q) {
    stats[static_cast<std::size_t>(kOrientationBins + 2 + q)] =
        quadrant_count[q] > 0 ? quadrant[q] / quadrant_count[q] : 0.0;
  }
  return stats;
}

}  // namespace

FeatureMap toy_extract(const GrayImage& image, int stride, int channels, std::uint64_t seed) {
  if (stride < 1 || channels < 1) throw ConfigError("toy extractor needs positive stride and channels");
  if (image.width < stride || image.height < stride) {
    throw ConfigError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                      " is smaller than one " + std::to_string(stride) + "px cell");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(kPatchStats)));
  std::vector<double> projection(static_cast<std::size_t>(channels) * kPatchStats);
  for (double& p : projection) p = normal(rng);

  const int gh = image.height / stride;
  const int gw = image.width / stride;
  FeatureMap out(gh, gw, channels);
  for (int cy = 0; cy < gh; ++cy) {
    for (int cx = 0; cx < gw; ++cx) {
      const auto stats = patch_stats(image, cx * stride, cy * stride, stride);
      auto f = out.cell(cy, cx);
      for (int c = 0; c < channels; ++c) {
        double v = 0.0;
        for (int j = 0; j < kPatchStats; ++j) v += projection[static_cast<std::size_t>(c) * kPatchStats + j] * stats[j];
        f[c] = v > 0.0 ? v : 0.0;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Index directory
// ---------------------------------------------------------------------------
namespace {

const char* saliency_name(ActSaliency s) { return s == ActSaliency::L2Norm ? "l2" : "sum"; }

ActSaliency parse_saliency(const std::string& s) {
  if (s == "l2") return ActSaliency::L2Norm;
  if (s == "sum") return ActSaliency::ChannelSum;
  throw FormatError("index: unknown act_saliency '" + s + "'");
}

std::size_t descriptor_dim(const MapIndex& index) {
  return index.images.empty() ? 0 : index.images.front().holistic.size();
}

}  // namespace

void write_index(const MapIndex& index, const DatasetManifest& manifest, const fs::path& dir) {
  fs::create_directories(dir);
  const std::size_t dim = descriptor_dim(index);

  json header;
  header["format"] = "lln-index";
  header["version"] = kIndexVersion;
  header["variant"] = to_string(index.config.variant);
  header["landmarks"] = index.config.landmarks;
  header["stride"] = index.config.stride;
  header["shortlist"] = index.config.shortlist;
  header["seed"] = index.config.seed;
  header["act_saliency"] = saliency_name(index.config.act_saliency);
  header["geometric_weighting"] = index.config.geometric_weighting;
  header["grid_width"] = index.grid_width;
  header["grid_height"] = index.grid_height;
  header["rand_cells"] = index.rand_cells;
  header["images"] = index.images.size();
  header["descriptor_dim"] = dim;
  write_text(header.dump(2) + "\n", dir / "index.json");
  write_manifest(manifest, dir / "manifest.jsonl");

  ByteWriter w;
  w.magic("LLNX");
  w.u32(kIndexVersion);
  w.u32(static_cast<std::uint32_t>(index.images.size()));
  w.u32(static_cast<std::uint32_t>(dim));
  for (const auto& im : index.images) {
    if (im.holistic.size() != dim) throw ConfigError("index images disagree on descriptor dimension");
    w.u32(static_cast<std::uint32_t>(im.image_id.size()));
    w.raw(im.image_id);
    w.u8(im.frame ? 1 : 0);
    w.i64(im.frame.value_or(0));
    w.f32s(im.holistic);
    const LandmarkSet& ls = im.landmarks;
    w.u32(static_cast<std::uint32_t>(ls.grid_width));
    w.u32(static_cast<std::uint32_t>(ls.grid_height));
    w.u32(static_cast<std::uint32_t>(ls.stride));
    w.u32(static_cast<std::uint32_t>(ls.landmarks.size()));
    for (const auto& l : ls.landmarks) {
      if (l.descriptor.size() != dim) throw ConfigError("landmark descriptor dimension differs from index");
      w.u32(static_cast<std::uint32_t>(l.grid_x));
      w.u32(static_cast<std::uint32_t>(l.grid_y));
      w.f32(l.activation);
      w.f32s(l.descriptor);
    }
  }
  write_bytes(w.take(), dir / "descriptors.bin");
}

MapIndex read_index(const fs::path& dir) {
  MapIndex index;
  json header;
  const fs::path header_path = dir / "index.json";
  try {
    header = json::parse(read_text(header_path));
    if (header.at("format").get<std::string>() != "lln-index") throw FormatError("not an lln index header");
    if (header.at("version").get<std::uint32_t>() != kIndexVersion) throw FormatError("unsupported index version");
    index.config.variant = parse_variant(header.at("variant").get<std::string>());
    index.config.landmarks = header.at("landmarks").get<int>();
    index.config.stride = header.at("stride").get<int>();
    index.config.shortlist = header.at("shortlist").get<int>();
    index.config.seed = header.at("seed").get<std::uint64_t>();
    index.config.act_saliency = parse_saliency(header.at("act_saliency").get<std::string>());
    index.config.geometric_weighting = header.at("geometric_weighting").get<bool>();
    index.grid_width = header.at("grid_width").get<int>();
    index.grid_height = header.at("grid_height").get<int>();
    index.rand_cells = header.at("rand_cells").get<std::vector<int>>();
    index.config.validate();
  } catch (const json::exception& e) {
    throw FormatError(header_path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw FormatError(header_path.string() + ": " + e.what());
  }

  const auto bytes = read_bytes(dir / "descriptors.bin");
  ByteReader r(bytes, (dir / "descriptors.bin").string());
  r.magic("LLNX");
  const std::uint32_t version = r.u32("version");
  if (version != kIndexVersion) r.fail("unsupported version " + std::to_string(version), 4);
  const std::uint32_t count = r.u32("image count");
  const std::uint32_t dim = r.u32("descriptor dim");
  if (count != header.at("images").get<std::uint64_t>() || dim != header.at("descriptor_dim").get<std::uint64_t>()) {
    r.fail("record counts disagree with index.json", 8);
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    ImageDescriptor im;
    const std::uint32_t id_len = r.u32("id length");
    im.image_id = r.raw(id_len, "image id");
    const std::size_t flag_at = r.pos();
    const std::uint8_t has_frame = r.u8("frame flag");
    if (has_frame > 1) r.fail("invalid frame flag", flag_at);
    const std::int64_t frame = r.i64("frame");
    if (has_frame) im.frame = frame;
    im.holistic.resize(dim);
    r.f32s(im.holistic, "holistic value");
    im.landmarks.image_id = im.image_id;
    im.landmarks.grid_width = static_cast<int>(r.u32("grid width"));
    im.landmarks.grid_height = static_cast<int>(r.u32("grid height"));
    im.landmarks.stride = static_cast<int>(r.u32("stride"));
    const std::size_t count_at = r.pos();
    const std::uint32_t n = r.u32("landmark count");
    if (static_cast<std::uint64_t>(n) * (12 + 4ull * dim) > r.remaining()) r.fail("landmark count exceeds file", count_at);
    for (std::uint32_t k = 0; k < n; ++k) {
      Landmark l;
      const std::size_t at = r.pos();
      l.grid_x = static_cast<int>(r.u32("grid x"));
      l.grid_y = static_cast<int>(r.u32("grid y"));
      if (l.grid_x >= im.landmarks.grid_width || l.grid_y >= im.landmarks.grid_height) {
        r.fail("landmark outside its grid", at);
      }
      l.activation = r.f32("activation");
      l.descriptor.resize(dim);
      r.f32s(l.descriptor, "descriptor value");
      l.region_center_px = region_center(l.grid_x, l.grid_y, im.landmarks.stride);
      im.landmarks.landmarks.push_back(std::move(l));
    }
    index.images.push_back(std::move(im));
  }
  r.expect_end();
  return index;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------
std::string format_results_csv(std::span<const QueryResult> results) {
  std::string out = "query_id,rank,map_id,score\n";
  for (const auto& r : results) {
    check_csv_field(r.query_id);
    for (std::size_t i = 0; i < r.ranked.size(); ++i) {
      check_csv_field(r.ranked[i].map_id);
      out += r.query_id + "," + std::to_string(i + 1) + "," + r.ranked[i].map_id + "," +
             format_double("%.17g", r.ranked[i].score) + "\n";
    }
  }
  return out;
}

void write_results_csv(std::span<const QueryResult> results, const fs::path& path) {
  write_text(format_results_csv(results), path);
}

std::vector<QueryResult> parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || (line != "query_id,rank,map_id,score" && line != "query_id,rank,map_id,score\r")) {
    throw FormatError("results CSV: missing header 'query_id,rank,map_id,score'");
  }
  std::vector<QueryResult> results;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw FormatError("results CSV line " + std::to_string(line_no) + ": expected 4 fields");
    char* end = nullptr;
    const long rank = std::strtol(f[1].c_str(), &end, 10);
    if (*end != '\0') throw FormatError("results CSV line " + std::to_string(line_no) + ": bad rank");
    const double score = std::strtod(f[3].c_str(), &end);
    if (*end != '\0' || !std::isfinite(score)) {
      throw FormatError("results CSV line " + std::to_string(line_no) + ": bad score");
    }
    if (rank == 1) {
      results.push_back({f[0], {}, score});
    } else if (results.empty() || results.back().query_id != f[0] ||
               static_cast<long>(results.back().ranked.size()) + 1 != rank) {
      throw FormatError("results CSV line " + std::to_string(line_no) + ": ranks must start at 1 and be contiguous");
    }
    results.back().ranked.push_back({f[2], score});
  }
  return results;
}

std::vector<QueryResult> read_results_csv(const fs::path& path) {
  try {
    return parse_results_csv(read_text(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string format_pr_csv(const PRCurve& curve) {
  std::string out = "threshold,precision,recall\n";
  for (const auto& p : curve.points) {
    out += format_double("%.17g", p.threshold) + "," + format_double("%.6f", p.precision) + "," +
           format_double("%.6f", p.recall) + "\n";
  }
  out += "# precision_at_full_recall=" + format_double("%.1f", curve.precision_at_full_recall * 100.0) + "\n";
  return out;
}

void write_pr_csv(const PRCurve& curve, const fs::path& path) { write_text(format_pr_csv(curve), path); }

std::string format_loss_csv(std::span<const StepLoss> history) {
  std::string out = "epoch,step,loss\n";
  for (const auto& s : history) {
    out += std::to_string(s.epoch) + "," + std::to_string(s.step) + "," + format_double("%.17g", s.loss) + "\n";
  }
  return out;
}

void write_loss_csv(std::span<const StepLoss> history, const fs::path& path) {
  write_text(format_loss_csv(history), path);
}

std::string format_matches_csv(const SimilarityResult& result, const LandmarkSet& query, const LandmarkSet& map) {
  std::string out =
      "query_cell_x,query_cell_y,map_cell_x,map_cell_y,similarity,weight,query_px_x,query_px_y,map_px_x,map_px_y\n";
  for (const auto& p : result.pairs) {
    const Landmark& a = query.landmarks.at(static_cast<std::size_t>(p.index_a));
    const Landmark& b = map.landmarks.at(static_cast<std::size_t>(p.index_b));
    const PixelPoint pa = a.region_center_px.value_or(region_center(a.grid_x, a.grid_y, query.stride));
    const PixelPoint pb = b.region_center_px.value_or(region_center(b.grid_x, b.grid_y, map.stride));
    out += std::to_string(a.grid_x) + "," + std::to_string(a.grid_y) + "," + std::to_string(b.grid_x) + "," +
           std::to_string(b.grid_y) + "," + format_double("%.17g", p.similarity) + "," +
           format_double("%.17g", p.weight) + "," + format_double("%.1f", pa.x) + "," + format_double("%.1f", pa.y) +
           "," + format_double("%.1f", pb.x) + "," + format_double("%.1f", pb.y) + "\n";
  }
  return out;
}

void write_matches_csv(const SimilarityResult& result, const LandmarkSet& query, const LandmarkSet& map,
                       const fs::path& path) {
  write_text(format_matches_csv(result, query, map), path);
}

}  // namespace lln
