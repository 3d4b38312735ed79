#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "lln/dataset.hpp"
#include "lln/model.hpp"

namespace lln {

// One query, one same-location positive and K different-location negatives.
// Members are indices into the Dataset.
struct TrainingTuple {
  std::size_t query = 0;
  std::size_t positive = 0;
  std::vector<std::size_t> negatives;

  friend bool operator==(const TrainingTuple&, const TrainingTuple&) = default;
};

struct TrainConfig {
  double margin = 0.3;
  int num_negatives = 4;
  double learning_rate = 1e-6;
  int batch_size = 10;
  int epochs = 1;
  std::uint64_t seed = 0;
  int threads = 1;  // embedding computation for mining only

  void validate() const;
};

struct TripletLoss {
  double loss = 0.0;
  std::vector<double> grad_query;
  std::vector<double> grad_positive;
  std::vector<std::vector<double>> grad_negatives;
  int active_terms = 0;
};

// sum_i max(0, |q - p| + m - |q - n_i|) and its gradient w.r.t. every input.
// Inactive hinge terms contribute neither loss nor gradient.
TripletLoss triplet_loss(std::span<const double> query, std::span<const double> positive,
                         const std::vector<std::vector<double>>& negatives, double margin);

// Embeddings of every dataset image under `params`. Results are index-aligned
// and independent of the thread count.
std::vector<Embedding> compute_embeddings(const Dataset& data, const LLNParams& params, int threads = 1);

// The K nearest (Euclidean, in embedding space) images from other locations.
// Equal distances go to the smaller image id.
std::vector<std::size_t> mine_hard_negatives(std::size_t query, const Dataset& data,
                                             std::span<const Embedding> embeddings, int k);
std::vector<std::size_t> mine_hard_negatives(std::size_t query, const Dataset& data,
                                             const LLNParams& params, int k);

// Images that can act as a query: those with a pinned positive or at least one
// other image at the same location.
std::vector<std::size_t> default_queries(const Dataset& data);

// One tuple per query, in seeded shuffled order. Positives are pinned ones when
// present, otherwise drawn uniformly from the query's location.
std::vector<TrainingTuple> build_tuples(const Dataset& data, std::span<const std::size_t> queries,
                                        const std::map<std::size_t, std::vector<std::size_t>>& negatives,
                                        std::mt19937_64& rng);

struct StepLoss {
  int epoch = 0;
  int step = 0;
  double loss = 0.0;  // summed over the tuples of the step
  int tuples = 0;
};

struct TrainResult {
  LLNParams params;
  std::vector<StepLoss> history;

  // Mean per-tuple loss for each epoch, in epoch order.
  std::vector<double> epoch_means() const;
};

// Summed triplet loss over `tuples`, optionally accumulating its gradient.
double batch_loss(const Dataset& data, const LLNParams& params, std::span<const TrainingTuple> tuples,
                  double margin, LLNParams* grads);

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

TrainResult train(const Dataset& data, const TrainConfig& config, LLNParams initial,
                  const EpochCallback& on_epoch = {});

}  // namespace lln
