#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lln/model.hpp"
#include "lln/tensor.hpp"

namespace lln {

struct PixelPoint {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

// One selected local feature. Coordinates are feature-grid cells.
struct Landmark {
  int grid_x = 0;
  int grid_y = 0;
  std::vector<double> descriptor;
  double activation = 0.0;
  std::optional<PixelPoint> region_center_px;

  friend bool operator==(const Landmark&, const Landmark&) = default;
};

struct LandmarkSet {
  std::string image_id;
  std::vector<Landmark> landmarks;  // activation descending
  int grid_width = 0;
  int grid_height = 0;
  int stride = 32;

  std::size_t size() const { return landmarks.size(); }
  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;
};

// Center of a grid cell in input-image pixels.
PixelPoint region_center(int grid_x, int grid_y, int stride);

struct MatchPair {
  int index_a = 0;
  int index_b = 0;
  double similarity = 0.0;
  double weight = 1.0;

  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

// Most frequent coordinate difference (a - b) among matched pairs, in cells.
struct OffsetMode {
  int dx = 0;
  int dy = 0;
  friend bool operator==(const OffsetMode&, const OffsetMode&) = default;
};

// The n most activated cells; equal activations keep row-major order.
LandmarkSet select_landmarks(const FeatureMap& features, const ActivationMap& activations, int n,
                             int stride = 32, std::string image_id = {});

// Landmarks at explicit row-major cell indices, in the given order, with unit
// activation. Used for fixed-location (random or dense) selections.
LandmarkSet landmarks_at_cells(const FeatureMap& features, std::span<const int> cells, int stride = 32,
                               std::string image_id = {});

// a.b / (|a||b|), clamped to [-1, 1]. A zero vector yields 0 and sets
// *degenerate when provided.
double cosine_similarity(std::span<const double> a, std::span<const double> b, bool* degenerate = nullptr);

// Mutual nearest neighbours by cosine similarity. Equal best similarities go
// to the lower index. Pairs are ordered by index_a.
std::vector<MatchPair> cross_match(const LandmarkSet& a, const LandmarkSet& b);

// Every histogram bin holding the maximal count, best first: smaller offset
// norm, then lexicographic (dx, dy). Throws MatchError for an empty pair list.
std::vector<OffsetMode> modal_offsets(std::span<const MatchPair> pairs, const LandmarkSet& a,
                                      const LandmarkSet& b);
OffsetMode offset_histogram(std::span<const MatchPair> pairs, const LandmarkSet& a, const LandmarkSet& b);

// exp(-0.5 * |(pa - pb) - mode|^2) with positions in cells.
double match_weight(const MatchPair& pair, const LandmarkSet& a, const LandmarkSet& b, OffsetMode mode);

struct SimilarityOptions {
  bool geometric_weighting = true;
};

struct SimilarityResult {
  double score = 0.0;
  std::vector<MatchPair> pairs;    // weights filled in
  std::optional<OffsetMode> mode;  // empty when there are no pairs
};

// sum over mutual pairs of weight * similarity. When several histogram bins
// tie for the maximum count, the bin giving the highest score is used, which
// keeps the result symmetric in (a, b) and invariant to a uniform shift.
SimilarityResult image_similarity(const LandmarkSet& a, const LandmarkSet& b,
                                  const SimilarityOptions& options = {});

}  // namespace lln
