#include "lln/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>

#include "lln/error.hpp"
#include "lln/parallel.hpp"

namespace lln {

void TrainConfig::validate() const {
  if (!(margin > 0.0)) throw ConfigError("margin must be > 0");
  if (num_negatives < 1) throw ConfigError("num_negatives must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
}

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// d|a - b| / da; zero at coincident points.
std::vector<double> distance_grad(std::span<const double> a, std::span<const double> b, double dist) {
  std::vector<double> g(a.size(), 0.0);
  if (dist <= 0.0) return g;
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = (a[i] - b[i]) / dist;
  return g;
}

}  // namespace

TripletLoss triplet_loss(std::span<const double> query, std::span<const double> positive,
                         const std::vector<std::vector<double>>& negatives, double margin) {
  const std::size_t dim = query.size();
  if (positive.size() != dim) throw ConfigError("triplet_loss: positive dimension mismatch");
  for (const auto& n : negatives) {
    if (n.size() != dim) throw ConfigError("triplet_loss: negative dimension mismatch");
  }

  TripletLoss out;
  out.grad_query.assign(dim, 0.0);
  out.grad_positive.assign(dim, 0.0);
  out.grad_negatives.assign(negatives.size(), std::vector<double>(dim, 0.0));

  const double d_pos = distance(query, positive);
  const std::vector<double> g_pos = distance_grad(query, positive, d_pos);
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    const double d_neg = distance(query, negatives[i]);
    const double violation = d_pos + margin - d_neg;
    if (violation <= 0.0) continue;  // NaN falls through so callers can detect it
    out.loss += violation;
    ++out.active_terms;
    const std::vector<double> g_neg = distance_grad(query, negatives[i], d_neg);
    for (std::size_t c = 0; c < dim; ++c) {
      out.grad_query[c] += g_pos[c] - g_neg[c];
      out.grad_positive[c] -= g_pos[c];
      out.grad_negatives[i][c] += g_neg[c];
    }
  }
  return out;
}

std::vector<Embedding> compute_embeddings(const Dataset& data, const LLNParams& params, int threads) {
  std::vector<Embedding> out(data.size());
  parallel_for(data.size(), threads,
               [&](std::size_t i) { out[i] = lln_forward_cached(data.features[i], params).embedding; });
  return out;
}

std::vector<std::size_t> mine_hard_negatives(std::size_t query, const Dataset& data,
                                             std::span<const Embedding> embeddings, int k) {
  if (query >= data.size() || embeddings.size() != data.size()) {
    throw ConfigError("mine_hard_negatives: query or embeddings out of range");
  }
  if (k < 1) throw ConfigError("mine_hard_negatives: K must be >= 1");
  const std::string& loc = data.entry(query).location;

  struct Candidate {
    double dist;
    const std::string* id;
    std::size_t index;
  };
  std::vector<Candidate> pool;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.entry(i).location == loc) continue;
    pool.push_back({distance(embeddings[query].values, embeddings[i].values), &data.entry(i).id, i});
  }
  if (pool.size() < static_cast<std::size_t>(k)) {
    throw DatasetError("query '" + data.entry(query).id + "' has only " + std::to_string(pool.size()) +
                       " different-location images, need K=" + std::to_string(k));
  }
  std::partial_sort(pool.begin(), pool.begin() + k, pool.end(), [](const Candidate& a, const Candidate& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return *a.id < *b.id;
  });
  std::vector<std::size_t> out;
  for (int i = 0; i < k; ++i) out.push_back(pool[i].index);
  return out;
}

std::vector<std::size_t> mine_hard_negatives(std::size_t query, const Dataset& data, const LLNParams& params,
                                             int k) {
  return mine_hard_negatives(query, data, compute_embeddings(data, params), k);
}

std::vector<std::size_t> default_queries(const Dataset& data) {
  std::unordered_map<std::string, int> count;
  for (const auto& e : data.manifest.entries) ++count[e.location];
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.entry(i).positive || count[data.entry(i).location] >= 2) out.push_back(i);
  }
  return out;
}

std::vector<TrainingTuple> build_tuples(const Dataset& data, std::span<const std::size_t> queries,
                                        const std::map<std::size_t, std::vector<std::size_t>>& negatives,
                                        std::mt19937_64& rng) {
  std::unordered_map<std::string, std::vector<std::size_t>> by_location;
  for (std::size_t i = 0; i < data.size(); ++i) by_location[data.entry(i).location].push_back(i);

  std::vector<TrainingTuple> tuples;
  tuples.reserve(queries.size());
  for (std::size_t q : queries) {
    if (q >= data.size()) throw ConfigError("build_tuples: query index out of range");
    const ManifestEntry& qe = data.entry(q);
    TrainingTuple t;
    t.query = q;
    if (qe.positive) {
      t.positive = *data.manifest.find(*qe.positive);
    } else {
      std::vector<std::size_t> others;
      for (std::size_t i : by_location[qe.location]) {
        if (i != q) others.push_back(i);
      }
      if (others.empty()) {
        throw DatasetError("query '" + qe.id + "' is the only image of location '" + qe.location + "'");
      }
      std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
      t.positive = others[pick(rng)];
    }
    auto it = negatives.find(q);
    if (it == negatives.end() || it->second.empty()) {
      throw DatasetError("no mined negatives for query '" + qe.id + "'");
    }
    for (std::size_t n : it->second) {
      if (n >= data.size() || data.entry(n).location == qe.location) {
        throw DatasetError("negative for '" + qe.id + "' shares its location");
      }
    }
    t.negatives = it->second;
    tuples.push_back(std::move(t));
  }
  std::shuffle(tuples.begin(), tuples.end(), rng);
  return tuples;
}

std::vector<double> TrainResult::epoch_means() const {
  std::vector<double> sums;
  std::vector<int> counts;
  for (const auto& s : history) {
    const auto e = static_cast<std::size_t>(s.epoch - 1);
    if (sums.size() <= e) {
      sums.resize(e + 1, 0.0);
      counts.resize(e + 1, 0);
    }
    sums[e] += s.loss;
    counts[e] += s.tuples;
  }
  for (std::size_t e = 0; e < sums.size(); ++e) sums[e] = counts[e] > 0 ? sums[e] / counts[e] : 0.0;
  return sums;
}

namespace {

bool all_zero(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

}  // namespace

double batch_loss(const Dataset& data, const LLNParams& params, std::span<const TrainingTuple> tuples,
                  double margin, LLNParams* grads) {
  double total = 0.0;
  for (const TrainingTuple& t : tuples) {
    const LLNForward fq = lln_forward_cached(data.features[t.query], params);
    const LLNForward fp = lln_forward_cached(data.features[t.positive], params);
    std::vector<LLNForward> fn;
    std::vector<std::vector<double>> negs;
    for (std::size_t n : t.negatives) {
      fn.push_back(lln_forward_cached(data.features[n], params));
      negs.push_back(fn.back().embedding.values);
    }
    const TripletLoss tl = triplet_loss(fq.embedding.values, fp.embedding.values, negs, margin);
    total += tl.loss;
    if (grads == nullptr || tl.active_terms == 0) continue;

    auto backprop = [&](std::size_t image, const LLNForward& fw, const std::vector<double>& g) {
      if (all_zero(g)) return;
      accumulate(*grads, lln_backward(data.features[image], params, fw, g));
    };
    backprop(t.query, fq, tl.grad_query);
    backprop(t.positive, fp, tl.grad_positive);
    for (std::size_t i = 0; i < t.negatives.size(); ++i) backprop(t.negatives[i], fn[i], tl.grad_negatives[i]);
  }
  return total;
}

TrainResult train(const Dataset& data, const TrainConfig& config, LLNParams initial,
                  const EpochCallback& on_epoch) {
  config.validate();
  data.manifest.validate_for_training();
  if (data.features.size() != data.manifest.entries.size()) {
    throw ConfigError("dataset features and manifest entries are not aligned");
  }
  initial.validate();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.features[i].channels() != initial.in_channels()) {
      throw ConfigError("feature map of '" + data.entry(i).id + "' has " +
                        std::to_string(data.features[i].channels()) + " channels, model expects " +
                        std::to_string(initial.in_channels()));
    }
  }
  const std::vector<std::size_t> queries = default_queries(data);
  if (queries.empty()) throw DatasetError("no location has two or more images; nothing to train on");

  TrainResult result;
  result.params = std::move(initial);
  std::vector<double> flat = result.params.flatten();
  AdamState adam = AdamState::for_size(flat.size());
  std::mt19937_64 rng(config.seed);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    // Negatives are refreshed once, at the start of the epoch.
    const std::vector<Embedding> embeddings = compute_embeddings(data, result.params, config.threads);
    std::map<std::size_t, std::vector<std::size_t>> negatives;
    for (std::size_t q : queries) negatives[q] = mine_hard_negatives(q, data, embeddings, config.num_negatives);
    const std::vector<TrainingTuple> tuples = build_tuples(data, queries, negatives, rng);

    double epoch_loss = 0.0;
    int step = 0;
    for (std::size_t start = 0; start < tuples.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t count = std::min<std::size_t>(config.batch_size, tuples.size() - start);
      std::span<const TrainingTuple> batch(tuples.data() + start, count);
      LLNParams grads = result.params.zeros_like();
      const double loss = batch_loss(data, result.params, batch, config.margin, &grads);
      const std::vector<double> g = grads.flatten();
      const bool finite = std::isfinite(loss) &&
                          std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); });
      if (!finite) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << " step " << step << ", tuples:";
        for (const auto& t : batch) {
          msg << " [" << data.entry(t.query).id << "," << data.entry(t.positive).id;
          for (std::size_t n : t.negatives) msg << "," << data.entry(n).id;
          msg << "]";
        }
        throw TrainingError(msg.str());
      }
      adam_step(flat, g, adam, config.learning_rate);
      result.params.assign(flat);
      result.history.push_back({epoch, step, loss, static_cast<int>(count)});
      epoch_loss += loss;
      ++step;
    }
    if (on_epoch) on_epoch(epoch, tuples.empty() ? 0.0 : epoch_loss / static_cast<double>(tuples.size()));
  }
  return result;
}

}  // namespace lln
