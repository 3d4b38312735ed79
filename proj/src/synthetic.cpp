#include "lln/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lln/error.hpp"

namespace lln {

void SyntheticConfig::validate() const {
  if (locations < 2 || views < 1) throw ConfigError("synthetic data needs >= 2 locations and >= 1 view");
  if (structure_channels < 1 || structure_channels >= channels) {
    throw ConfigError("structure_channels must leave room for clutter channels");
  }
  if (max_shift < 0 || 2 * max_shift >= grid_width) throw ConfigError("max_shift too large for the grid");
  const int usable = (grid_width - 2 * max_shift) * grid_height;
  if (prototypes < 1 || prototypes > usable) throw ConfigError("too many prototypes for the grid");
  if (distractors < 0 || prototypes + distractors > grid_width * grid_height) {
    throw ConfigError("too many distractors for the grid");
  }
}

namespace {

// Sparse non-negative vector on channels [begin, end), rescaled to `norm`.
std::vector<double> sparse_vector(std::mt19937_64& rng, int channels, int begin, int end, double norm) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(channels), 0.0);
  double sq = 0.0;
  while (sq == 0.0) {
    for (int c = begin; c < end; ++c) {
      v[c] = unit(rng) < 0.5 ? 0.0 : 0.5 + unit(rng);
      sq += v[c] * v[c];
    }
  }
  const double scale = norm / std::sqrt(sq);
  for (double& x : v) x *= scale;
  return v;
}

}  // namespace

std::vector<SyntheticView> generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const int w = config.grid_width;
  const int h = config.grid_height;
  const int c = config.channels;
  const int s = config.structure_channels;

  struct Place {
    std::vector<int> xs, ys;
    std::vector<std::vector<double>> descriptors;
  };
  std::vector<Place> places(static_cast<std::size_t>(config.locations));
  for (auto& place : places) {
    std::vector<int> candidates;
    for (int y = 0; y < h; ++y) {
      for (int x = config.max_shift; x < w - config.max_shift; ++x) candidates.push_back(y * w + x);
    }
    std::shuffle(candidates.begin(), candidates.end(), rng);
    for (int k = 0; k < config.prototypes; ++k) {
      place.xs.push_back(candidates[k] % w);
      place.ys.push_back(candidates[k] / w);
      place.descriptors.push_back(sparse_vector(rng, c, 0, s, config.prototype_scale));
    }
  }

  std::normal_distribution<double> noise(0.0, config.noise);
  std::uniform_int_distribution<int> shift(-config.max_shift, config.max_shift);
  std::vector<SyntheticView> views;
  for (int loc = 0; loc < config.locations; ++loc) {
    const Place& place = places[static_cast<std::size_t>(loc)];
    for (int v = 0; v < config.views; ++v) {
      SyntheticView view;
      view.location = loc;
      view.view = v;
      view.shift_x = shift(rng);
      view.features = FeatureMap(h, w, c);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const auto bg = sparse_vector(rng, c, s, c, config.background_scale);
          std::copy(bg.begin(), bg.end(), view.features.cell(y, x).begin());
        }
      }
      std::vector<bool> taken(static_cast<std::size_t>(w * h), false);
      for (int k = 0; k < config.prototypes; ++k) {
        const int x = place.xs[static_cast<std::size_t>(k)] + view.shift_x;
        const int y = place.ys[static_cast<std::size_t>(k)];
        const auto& d = place.descriptors[static_cast<std::size_t>(k)];
        std::copy(d.begin(), d.end(), view.features.cell(y, x).begin());
        view.prototype_cells.push_back(y * w + x);
        taken[static_cast<std::size_t>(y * w + x)] = true;
      }
      std::vector<int> free_cells;
      for (int i = 0; i < w * h; ++i) {
        if (!taken[static_cast<std::size_t>(i)]) free_cells.push_back(i);
      }
      std::shuffle(free_cells.begin(), free_cells.end(), rng);
      for (int k = 0; k < config.distractors; ++k) {
        const int cell = free_cells[static_cast<std::size_t>(k)];
        const auto d = sparse_vector(rng, c, s, c, config.distractor_scale);
        std::copy(d.begin(), d.end(), view.features.cell(cell / w, cell % w).begin());
      }
      for (double& x : view.features.data()) x += std::abs(noise(rng));
      std::sort(view.prototype_cells.begin(), view.prototype_cells.end());
      views.push_back(std::move(view));
    }
  }
  return views;
}

}  // namespace lln
