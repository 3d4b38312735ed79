#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lln/dataset.hpp"
#include "lln/matcher.hpp"
#include "lln/model.hpp"
#include "lln/retrieval.hpp"
#include "lln/tensor.hpp"
#include "lln/trainer.hpp"

namespace lln {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Feature maps: "FMAP", u32 version, u32 h, u32 w, u32 C, then h*w*C
// little-endian float32 values in (y, x, c) order.
// ---------------------------------------------------------------------------
inline constexpr std::uint32_t kFeatureMapVersion = 1;
inline constexpr std::size_t kFeatureMapHeaderBytes = 20;

std::vector<std::uint8_t> encode_feature_map(const FeatureMap& map);
FeatureMap decode_feature_map(std::span<const std::uint8_t> bytes);
void write_feature_map(const FeatureMap& map, const fs::path& path);
FeatureMap read_feature_map(const fs::path& path);

// ---------------------------------------------------------------------------
// Models: "LLNW", u32 version, u32 branch count, u32 flags (bit 0: branch
// ReLU), then per branch and finally for the combiner: u32 k, u32 in,
// u32 out, k*k*in*out float32 weights, out float32 biases.
// ---------------------------------------------------------------------------
inline constexpr std::uint32_t kModelVersion = 1;

std::vector<std::uint8_t> encode_model(const LLNParams& params);
LLNParams decode_model(std::span<const std::uint8_t> bytes);
void write_model(const LLNParams& params, const fs::path& path);
LLNParams read_model(const fs::path& path);

// ---------------------------------------------------------------------------
// Manifests: JSON lines {"id", "path", "location", "frame"?, "positive"?}.
// ---------------------------------------------------------------------------
DatasetManifest parse_manifest(const std::string& text);
DatasetManifest read_manifest(const fs::path& path);
std::string format_manifest(const DatasetManifest& manifest);
void write_manifest(const DatasetManifest& manifest, const fs::path& path);

// Relative entry paths resolve against `base_dir`.
Dataset load_dataset(const DatasetManifest& manifest, const fs::path& base_dir);
std::vector<ImageRecord> load_images(const DatasetManifest& manifest, const fs::path& base_dir);

// ---------------------------------------------------------------------------
// Grayscale images (binary PGM, 8-bit).
// ---------------------------------------------------------------------------
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

GrayImage read_pgm(const fs::path& path);
void write_pgm(const GrayImage& image, const fs::path& path);

// Min-max scaled 8-bit rendering of an activation map; a constant map renders
// as all zeros.
GrayImage render_activation_map(const ActivationMap& activations);
void dump_activation_map(const ActivationMap& activations, const fs::path& path);

// Stand-in for a pretrained backbone: every stride x stride patch becomes one
// cell whose descriptor is a seeded random projection (followed by ReLU) of
// patch statistics (orientation histogram, intensity moments, quadrant
// means). Patches never read outside themselves.
FeatureMap toy_extract(const GrayImage& image, int stride, int channels, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Index directory: index.json (config header), manifest.jsonl (copy of the
// map manifest), descriptors.bin ("LLNX" records, float32 little-endian).
// ---------------------------------------------------------------------------
inline constexpr std::uint32_t kIndexVersion = 1;

void write_index(const MapIndex& index, const DatasetManifest& manifest, const fs::path& dir);
MapIndex read_index(const fs::path& dir);

// ---------------------------------------------------------------------------
// CSV outputs.
// ---------------------------------------------------------------------------
std::string format_results_csv(std::span<const QueryResult> results);
void write_results_csv(std::span<const QueryResult> results, const fs::path& path);
std::vector<QueryResult> parse_results_csv(const std::string& text);
std::vector<QueryResult> read_results_csv(const fs::path& path);

std::string format_pr_csv(const PRCurve& curve);
void write_pr_csv(const PRCurve& curve, const fs::path& path);

std::string format_loss_csv(std::span<const StepLoss> history);
void write_loss_csv(std::span<const StepLoss> history, const fs::path& path);

std::string format_matches_csv(const SimilarityResult& result, const LandmarkSet& query, const LandmarkSet& map);
void write_matches_csv(const SimilarityResult& result, const LandmarkSet& query, const LandmarkSet& map,
                       const fs::path& path);

// Whole-file helpers.
std::vector<std::uint8_t> read_bytes(const fs::path& path);
void write_bytes(std::span<const std::uint8_t> bytes, const fs::path& path);
std::string read_text(const fs::path& path);
void write_text(const std::string& text, const fs::path& path);

}  // namespace lln
