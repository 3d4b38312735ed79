#pragma once

#include <cstdint>
#include <vector>

#include "lln/tensor.hpp"

namespace lln {

// Planted-landmark benchmark in feature space. Every location owns a few
// prototype cells whose descriptors live in the first `structure_channels`
// channels. Every other cell holds random per-view clutter and a few
// distractor cells carry strong clutter; both live in the remaining
// channels. All values are non-negative, like post-ReLU backbone features.
struct SyntheticConfig {
  int locations = 12;
  int views = 8;
  int grid_width = 8;
  int grid_height = 8;
  int channels = 16;
  int structure_channels = 8;
  int prototypes = 6;
  int distractors = 4;
  int max_shift = 1;  // per-view horizontal shift of the prototypes, in cells
  double prototype_scale = 2.0;
  double background_scale = 0.6;
  double distractor_scale = 2.0;
  double noise = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticView {
  int location = 0;
  int view = 0;
  int shift_x = 0;
  std::vector<int> prototype_cells;  // row-major, after the shift
  FeatureMap features;
};

// Views ordered by location, then view index. Deterministic in the config.
std::vector<SyntheticView> generate_synthetic(const SyntheticConfig& config);

}  // namespace lln
