#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lln/matcher.hpp"
#include "lln/model.hpp"

namespace lln {

// How landmarks are chosen for an image.
//   Holistic  no landmarks; ranking by max-pooled global descriptor only
//   LLN       top-n cells of the learned activation map
//   ACT       top-n cells by base-feature saliency
//   RAND      n seeded cells, identical for every image
//   ALL       every cell
enum class Variant { Holistic, LLN, ACT, RAND, ALL };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);

enum class ActSaliency { L2Norm, ChannelSum };

struct IndexConfig {
  Variant variant = Variant::LLN;
  int landmarks = 50;  // n
  int stride = 32;
  int shortlist = 30;
  std::uint64_t seed = 0;
  ActSaliency act_saliency = ActSaliency::L2Norm;
  bool geometric_weighting = true;

  void validate() const;
};

// 75 landmarks for grids of at least 144 cells, 50 otherwise.
int default_landmark_count(int grid_cells);

struct ImageRecord {
  std::string id;
  std::optional<std::int64_t> frame;
  FeatureMap features;
};

struct ImageDescriptor {
  std::string image_id;
  std::optional<std::int64_t> frame;
  std::vector<double> holistic;  // unit vector
  LandmarkSet landmarks;
};

struct MapIndex {
  IndexConfig config;
  int grid_width = 0;   // grid the RAND cells were drawn for
  int grid_height = 0;
  std::vector<int> rand_cells;  // row-major cell indices, ascending
  std::vector<ImageDescriptor> images;

  std::optional<std::size_t> find(const std::string& id) const;
};

// L2-normalised global max pool of the feature map.
std::vector<double> holistic_descriptor(const FeatureMap& features);

// Per-cell saliency of the base features (ACT variant).
ActivationMap feature_saliency(const FeatureMap& features, ActSaliency mode);

// n distinct cells of a w x h grid drawn from `seed`, ascending.
std::vector<int> random_cells(int grid_width, int grid_height, int n, std::uint64_t seed);

// Describes one image the same way for index and query sides. `model` is
// required for the LLN variant; `rand_cells` for RAND.
ImageDescriptor describe_image(const ImageRecord& image, const IndexConfig& config, const LLNParams* model,
                               std::span<const int> rand_cells);

MapIndex build_index(std::span<const ImageRecord> images, const LLNParams* model, const IndexConfig& config,
                     int threads = 1);
ImageDescriptor describe_query(const ImageRecord& image, const MapIndex& index, const LLNParams* model);

struct ScoredImage {
  std::string map_id;
  double score = 0.0;
  friend bool operator==(const ScoredImage&, const ScoredImage&) = default;
};

// Top-k map images by holistic cosine similarity; equal scores keep index order.
std::vector<ScoredImage> shortlist(std::span<const double> query_holistic, const MapIndex& index, int top_k);

struct QueryResult {
  std::string query_id;
  std::vector<ScoredImage> ranked;  // scores non-increasing
  double best_score = 0.0;
};

// Holistic variant ranks the whole index; landmark variants rerank the
// holistic shortlist by image_similarity.
QueryResult query(const ImageDescriptor& query_image, const MapIndex& index);

struct GroundTruth {
  std::map<std::string, std::int64_t> query_frames;
  std::map<std::string, std::int64_t> map_frames;
};

struct PRPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct PRCurve {
  std::vector<PRPoint> points;  // threshold descending
  double precision_at_full_recall = 0.0;
};

// Top-1 is correct when |frame(top-1) - frame(query)| <= vision_offset.
bool is_correct(const std::string& query_id, const std::string& map_id, const GroundTruth& truth,
                std::int64_t vision_offset);

PRCurve evaluate(std::span<const QueryResult> results, const GroundTruth& truth, std::int64_t vision_offset);

struct TopKPrecision {
  int k = 0;
  double precision = 0.0;
};

// Fraction of queries with a correct map image anywhere in their top k.
std::vector<TopKPrecision> precision_vs_topk(std::span<const QueryResult> results, const GroundTruth& truth,
                                             std::int64_t vision_offset, std::span<const int> ks);

}  // namespace lln
