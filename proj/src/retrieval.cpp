#include "lln/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "lln/error.hpp"
#include "lln/parallel.hpp"

namespace lln {

Variant parse_variant(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "holistic") return Variant::Holistic;
  if (s == "lln") return Variant::LLN;
  if (s == "act") return Variant::ACT;
  if (s == "rand") return Variant::RAND;
  if (s == "all") return Variant::ALL;
  throw ConfigError("unknown descriptor variant '" + name + "' (expected holistic, lln, act, rand or all)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Holistic: return "holistic";
    case Variant::LLN: return "lln";
    case Variant::ACT: return "act";
    case Variant::RAND: return "rand";
    case Variant::ALL: return "all";
  }
  return "unknown";
}

void IndexConfig::validate() const {
  if (landmarks < 1) throw ConfigError("landmark count must be >= 1");
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (shortlist < 1) throw ConfigError("shortlist size must be >= 1");
}

int default_landmark_count(int grid_cells) { return grid_cells >= 144 ? 75 : 50; }

std::optional<std::size_t> MapIndex::find(const std::string& id) const {
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].image_id == id) return i;
  }
  return std::nullopt;
}

std::vector<double> holistic_descriptor(const FeatureMap& features) {
  return l2_normalize(global_max_pool(features));
}

ActivationMap feature_saliency(const FeatureMap& features, ActSaliency mode) {
  ActivationMap act;
  act.height = features.height();
  act.width = features.width();
  act.values.reserve(static_cast<std::size_t>(features.cells()));
  for (int y = 0; y < features.height(); ++y) {
    for (int x = 0; x < features.width(); ++x) {
      auto f = features.cell(y, x);
      if (mode == ActSaliency::L2Norm) {
        act.values.push_back(l2_norm(f));
      } else {
        act.values.push_back(std::accumulate(f.begin(), f.end(), 0.0));
      }
    }
  }
  return act;
}

std::vector<int> random_cells(int grid_width, int grid_height, int n, std::uint64_t seed) {
  if (grid_width < 1 || grid_height < 1) throw ConfigError("random_cells: empty grid");
  std::vector<int> cells(static_cast<std::size_t>(grid_width) * grid_height);
  std::iota(cells.begin(), cells.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(cells.begin(), cells.end(), rng);
  cells.resize(std::min(cells.size(), static_cast<std::size_t>(std::max(n, 0))));
  std::sort(cells.begin(), cells.end());
  return cells;
}

ImageDescriptor describe_image(const ImageRecord& image, const IndexConfig& config, const LLNParams* model,
                               std::span<const int> rand_cells) {
  const FeatureMap& f = image.features;
  ImageDescriptor d;
  d.image_id = image.id;
  d.frame = image.frame;
  d.holistic = holistic_descriptor(f);

  switch (config.variant) {
    case Variant::Holistic:
      d.landmarks.image_id = image.id;
      d.landmarks.grid_width = f.width();
      d.landmarks.grid_height = f.height();
      d.landmarks.stride = config.stride;
      break;
    case Variant::LLN:
      if (model == nullptr) throw ConfigError("variant lln needs a trained model");
      d.landmarks = select_landmarks(f, lln_forward(f, *model), config.landmarks, config.stride, image.id);
      break;
    case Variant::ACT:
      d.landmarks = select_landmarks(f, feature_saliency(f, config.act_saliency), config.landmarks, config.stride,
                                     image.id);
      break;
    case Variant::RAND:
      d.landmarks = landmarks_at_cells(f, rand_cells, config.stride, image.id);
      break;
    case Variant::ALL: {
      std::vector<int> cells(static_cast<std::size_t>(f.cells()));
      std::iota(cells.begin(), cells.end(), 0);
      d.landmarks = landmarks_at_cells(f, cells, config.stride, image.id);
      break;
    }
  }
  return d;
}

MapIndex build_index(std::span<const ImageRecord> images, const LLNParams* model, const IndexConfig& config,
                     int threads) {
  config.validate();
  if (images.empty()) throw DatasetError("cannot build an index from zero images");
  std::set<std::string> ids;
  for (const auto& im : images) {
    if (!ids.insert(im.id).second) throw DatasetError("duplicate image id '" + im.id + "' in index input");
  }
  if (config.variant == Variant::LLN && model == nullptr) throw ConfigError("variant lln needs a trained model");

  MapIndex index;
  index.config = config;
  index.grid_width = images.front().features.width();
  index.grid_height = images.front().features.height();
  if (config.variant == Variant::RAND) {
    for (const auto& im : images) {
      if (im.features.width() != index.grid_width || im.features.height() != index.grid_height) {
        throw ConfigError("variant rand needs every image on the same grid; '" + im.id + "' differs");
      }
    }
    index.rand_cells = random_cells(index.grid_width, index.grid_height, config.landmarks, config.seed);
  }
  index.images.resize(images.size());
  parallel_for(images.size(), threads,
               [&](std::size_t i) { index.images[i] = describe_image(images[i], config, model, index.rand_cells); });
  return index;
}

ImageDescriptor describe_query(const ImageRecord& image, const MapIndex& index, const LLNParams* model) {
  if (index.config.variant == Variant::RAND &&
      (image.features.width() != index.grid_width || image.features.height() != index.grid_height)) {
    throw ConfigError("query '" + image.id + "' grid differs from the index grid used for random cells");
  }
  return describe_image(image, index.config, model, index.rand_cells);
}

std::vector<ScoredImage> shortlist(std::span<const double> query_holistic, const MapIndex& index, int top_k) {
  std::vector<ScoredImage> scored;
  scored.reserve(index.images.size());
  for (const auto& im : index.images) scored.push_back({im.image_id, cosine_similarity(query_holistic, im.holistic)});
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredImage& a, const ScoredImage& b) { return a.score > b.score; });
  if (top_k >= 0 && scored.size() > static_cast<std::size_t>(top_k)) scored.resize(static_cast<std::size_t>(top_k));
  return scored;
}

QueryResult query(const ImageDescriptor& query_image, const MapIndex& index) {
  if (index.images.empty()) throw DatasetError("query against an empty index");
  QueryResult result;
  result.query_id = query_image.image_id;
  if (index.config.variant == Variant::Holistic) {
    result.ranked = shortlist(query_image.holistic, index, static_cast<int>(index.images.size()));
  } else {
    const SimilarityOptions options{index.config.geometric_weighting};
    for (const ScoredImage& candidate : shortlist(query_image.holistic, index, index.config.shortlist)) {
      const ImageDescriptor& map_image = index.images[*index.find(candidate.map_id)];
      result.ranked.push_back(
          {candidate.map_id, image_similarity(query_image.landmarks, map_image.landmarks, options).score});
    }
    std::stable_sort(result.ranked.begin(), result.ranked.end(),
                     [](const ScoredImage& a, const ScoredImage& b) { return a.score > b.score; });
  }
  result.best_score = result.ranked.empty() ? 0.0 : result.ranked.front().score;
  return result;
}

bool is_correct(const std::string& query_id, const std::string& map_id, const GroundTruth& truth,
                std::int64_t vision_offset) {
  auto q = truth.query_frames.find(query_id);
  auto m = truth.map_frames.find(map_id);
  if (q == truth.query_frames.end() || m == truth.map_frames.end()) return false;
  const std::int64_t diff = q->second - m->second;
  return (diff < 0 ? -diff : diff) <= vision_offset;
}

namespace {

void check_truth(std::span<const QueryResult> results, const GroundTruth& truth) {
  std::string missing;
  for (const auto& r : results) {
    if (!truth.query_frames.count(r.query_id)) missing += (missing.empty() ? "" : ",") + r.query_id;
  }
  if (!missing.empty()) throw DatasetError("missing ground-truth frame for queries: " + missing);
  std::string unknown;
  for (const auto& r : results) {
    for (const auto& s : r.ranked) {
      if (!truth.map_frames.count(s.map_id) && unknown.find(s.map_id) == std::string::npos) {
        unknown += (unknown.empty() ? "" : ",") + s.map_id;
      }
    }
  }
  if (!unknown.empty()) throw DatasetError("missing frame index for map images: " + unknown);
}

}  // namespace

PRCurve evaluate(std::span<const QueryResult> results, const GroundTruth& truth, std::int64_t vision_offset) {
  check_truth(results, truth);
  PRCurve curve;
  if (results.empty()) return curve;

  struct Outcome {
    double score;
    bool correct;
  };
  std::vector<Outcome> outcomes;
  for (const auto& r : results) {
    const bool ok = !r.ranked.empty() && is_correct(r.query_id, r.ranked.front().map_id, truth, vision_offset);
    outcomes.push_back({r.best_score, ok});
  }
  std::sort(outcomes.begin(), outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.score > b.score; });

  const double total = static_cast<double>(outcomes.size());
  std::size_t retrieved = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    ++retrieved;
    if (outcomes[i].correct) ++correct;
    // Emit a point once every query sharing this score has been admitted.
    if (i + 1 < outcomes.size() && outcomes[i + 1].score == outcomes[i].score) continue;
    curve.points.push_back({outcomes[i].score, static_cast<double>(correct) / static_cast<double>(retrieved),
                            static_cast<double>(retrieved) / total});
  }
  curve.precision_at_full_recall = curve.points.back().precision;
  return curve;
}

std::vector<TopKPrecision> precision_vs_topk(std::span<const QueryResult> results, const GroundTruth& truth,
                                             std::int64_t vision_offset, std::span<const int> ks) {
  check_truth(results, truth);
  std::vector<TopKPrecision> table;
  for (int k : ks) {
    if (k < 1) throw ConfigError("top-k must be >= 1");
    std::size_t hits = 0;
    for (const auto& r : results) {
      const std::size_t limit = std::min(r.ranked.size(), static_cast<std::size_t>(k));
      for (std::size_t i = 0; i < limit; ++i) {
        if (is_correct(r.query_id, r.ranked[i].map_id, truth, vision_offset)) {
          ++hits;
          break;
        }
      }
    }
    table.push_back({k, results.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(results.size())});
  }
  return table;
}

}  // namespace lln
