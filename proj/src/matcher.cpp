#include "lln/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <utility>

#include "lln/error.hpp"

namespace lln {

PixelPoint region_center(int grid_x, int grid_y, int stride) {
  const double half = stride / 2.0;
  return {grid_x * static_cast<double>(stride) + half, grid_y * static_cast<double>(stride) + half};
}

namespace {

Landmark make_landmark(const FeatureMap& features, int cell, double activation, int stride) {
  Landmark l;
  l.grid_y = cell / features.width();
  l.grid_x = cell % features.width();
  auto f = features.cell(l.grid_y, l.grid_x);
  l.descriptor.assign(f.begin(), f.end());
  l.activation = activation;
  l.region_center_px = region_center(l.grid_x, l.grid_y, stride);
  return l;
}

double cosine_from_parts(double d, double norm_a, double norm_b, bool* degenerate) {
  if (norm_a <= kNormalizeEpsilon || norm_b <= kNormalizeEpsilon) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (degenerate) *degenerate = false;
  return std::clamp(d / (norm_a * norm_b), -1.0, 1.0);
}

}  // namespace

LandmarkSet select_landmarks(const FeatureMap& features, const ActivationMap& activations, int n, int stride,
                             std::string image_id) {
  if (activations.height != features.height() || activations.width != features.width() ||
      activations.values.size() != static_cast<std::size_t>(features.cells())) {
    throw ConfigError("select_landmarks: activation map dims do not match feature grid");
  }
  if (n < 1) throw ConfigError("select_landmarks: n must be >= 1");
  const int total = features.cells();
  const int keep = std::min(n, total);
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  const auto& act = activations.values;
  std::partial_sort(order.begin(), order.begin() + keep, order.end(), [&](int a, int b) {
    if (act[a] != act[b]) return act[a] > act[b];
    return a < b;
  });

  LandmarkSet set;
  set.image_id = std::move(image_id);
  set.grid_width = features.width();
  set.grid_height = features.height();
  set.stride = stride;
  for (int i = 0; i < keep; ++i) set.landmarks.push_back(make_landmark(features, order[i], act[order[i]], stride));
  return set;
}

LandmarkSet landmarks_at_cells(const FeatureMap& features, std::span<const int> cells, int stride,
                               std::string image_id) {
  LandmarkSet set;
  set.image_id = std::move(image_id);
  set.grid_width = features.width();
  set.grid_height = features.height();
  set.stride = stride;
  for (int cell : cells) {
    if (cell < 0 || cell >= features.cells()) {
      throw ConfigError("landmark cell " + std::to_string(cell) + " outside a " +
                        std::to_string(features.height()) + "x" + std::to_string(features.width()) + " grid");
    }
    set.landmarks.push_back(make_landmark(features, cell, 1.0, stride));
  }
  return set;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b, bool* degenerate) {
  return cosine_from_parts(dot(a, b), l2_norm(a), l2_norm(b), degenerate);
}

std::vector<MatchPair> cross_match(const LandmarkSet& a, const LandmarkSet& b) {
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  std::vector<MatchPair> pairs;
  if (na == 0 || nb == 0) return pairs;
  const std::size_t dim = a.landmarks.front().descriptor.size();
  for (const auto& l : a.landmarks) {
    if (l.descriptor.size() != dim) throw ConfigError("cross_match: descriptor dimensions differ");
  }
  for (const auto& l : b.landmarks) {
    if (l.descriptor.size() != dim) throw ConfigError("cross_match: descriptor dimensions differ");
  }

  std::vector<double> norm_a(na), norm_b(nb);
  for (std::size_t i = 0; i < na; ++i) norm_a[i] = l2_norm(a.landmarks[i].descriptor);
  for (std::size_t j = 0; j < nb; ++j) norm_b[j] = l2_norm(b.landmarks[j].descriptor);

  // Landmarks with a zero descriptor have no direction and never match.
  std::vector<double> sim(na * nb, 0.0);
  std::vector<int> best_b(na, -1), best_a(nb, -1);
  for (std::size_t i = 0; i < na; ++i) {
    if (norm_a[i] <= kNormalizeEpsilon) continue;
    for (std::size_t j = 0; j < nb; ++j) {
      if (norm_b[j] <= kNormalizeEpsilon) continue;
      const double s = cosine_from_parts(dot(a.landmarks[i].descriptor, b.landmarks[j].descriptor), norm_a[i],
                                         norm_b[j], nullptr);
      sim[i * nb + j] = s;
      if (best_b[i] < 0 || s > sim[i * nb + static_cast<std::size_t>(best_b[i])]) best_b[i] = static_cast<int>(j);
      if (best_a[j] < 0 || s > sim[static_cast<std::size_t>(best_a[j]) * nb + j]) best_a[j] = static_cast<int>(i);
    }
  }
  for (std::size_t i = 0; i < na; ++i) {
    const int j = best_b[i];
    if (j >= 0 && best_a[static_cast<std::size_t>(j)] == static_cast<int>(i)) {
      pairs.push_back({static_cast<int>(i), j, sim[i * nb + static_cast<std::size_t>(j)], 1.0});
    }
  }
  return pairs;
}

namespace {

std::pair<int, int> pair_offset(const MatchPair& p, const LandmarkSet& a, const LandmarkSet& b) {
  if (p.index_a < 0 || static_cast<std::size_t>(p.index_a) >= a.size() || p.index_b < 0 ||
      static_cast<std::size_t>(p.index_b) >= b.size()) {
    throw ConfigError("match pair refers to a landmark outside its set");
  }
  const Landmark& la = a.landmarks[static_cast<std::size_t>(p.index_a)];
  const Landmark& lb = b.landmarks[static_cast<std::size_t>(p.index_b)];
  return {la.grid_x - lb.grid_x, la.grid_y - lb.grid_y};
}

}  // namespace

std::vector<OffsetMode> modal_offsets(std::span<const MatchPair> pairs, const LandmarkSet& a,
                                      const LandmarkSet& b) {
  if (pairs.empty()) throw MatchError("no mutual matches");
  std::map<std::pair<int, int>, int> histogram;
  for (const auto& p : pairs) ++histogram[pair_offset(p, a, b)];
  int best = 0;
  for (const auto& [bin, count] : histogram) best = std::max(best, count);
  std::vector<OffsetMode> modes;
  for (const auto& [bin, count] : histogram) {
    if (count == best) modes.push_back({bin.first, bin.second});
  }
  std::sort(modes.begin(), modes.end(), [](const OffsetMode& l, const OffsetMode& r) {
    const long nl = static_cast<long>(l.dx) * l.dx + static_cast<long>(l.dy) * l.dy;
    const long nr = static_cast<long>(r.dx) * r.dx + static_cast<long>(r.dy) * r.dy;
    if (nl != nr) return nl < nr;
    return std::pair(l.dx, l.dy) < std::pair(r.dx, r.dy);
  });
  return modes;
}

OffsetMode offset_histogram(std::span<const MatchPair> pairs, const LandmarkSet& a, const LandmarkSet& b) {
  return modal_offsets(pairs, a, b).front();
}

double match_weight(const MatchPair& pair, const LandmarkSet& a, const LandmarkSet& b, OffsetMode mode) {
  const auto [ox, oy] = pair_offset(pair, a, b);
  const double ex = static_cast<double>(ox - mode.dx);
  const double ey = static_cast<double>(oy - mode.dy);
  return std::exp(-0.5 * (ex * ex + ey * ey));
}

SimilarityResult image_similarity(const LandmarkSet& a, const LandmarkSet& b, const SimilarityOptions& options) {
  SimilarityResult result;
  result.pairs = cross_match(a, b);
  if (result.pairs.empty()) return result;

  const std::vector<OffsetMode> modes = modal_offsets(result.pairs, a, b);
  if (!options.geometric_weighting) {
    result.mode = modes.front();
    for (auto& p : result.pairs) {
      p.weight = 1.0;
      result.score += p.similarity;
    }
    return result;
  }

  std::vector<double> weights(result.pairs.size());
  std::vector<double> best_weights;
  for (const OffsetMode& mode : modes) {
    double score = 0.0;
    for (std::size_t k = 0; k < result.pairs.size(); ++k) {
      weights[k] = match_weight(result.pairs[k], a, b, mode);
      score += weights[k] * result.pairs[k].similarity;
    }
    if (!result.mode || score > result.score) {
      result.mode = mode;
      result.score = score;
      best_weights = weights;
    }
  }
  for (std::size_t k = 0; k < result.pairs.size(); ++k) result.pairs[k].weight = best_weights[k];
  return result;
}

}  // namespace lln
