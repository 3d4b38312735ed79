#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lln/tensor.hpp"

namespace lln {

// Non-negative per-cell saliency weights, aligned 1:1 with a feature grid.
struct ActivationMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major (y, x)

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Attention-weighted image embedding. `degenerate` is set when the weighted
// sum fell under the normalisation floor (e.g. an all-zero activation map).
struct Embedding {
  std::vector<double> values;
  bool normalized = false;
  bool degenerate = false;
};

// Landmark localisation network: parallel multi-scale conv branches whose
// outputs are concatenated (D channels) and reduced by a 1x1 conv + ReLU to
// one activation per cell.
struct LLNParams {
  std::vector<ConvLayer> branches;
  ConvLayer combiner;
  bool branch_relu = true;

  int in_channels() const;
  int concat_channels() const;
  std::size_t parameter_count() const;

  void validate() const;

  // Parameters are flattened branch by branch (weights then bias), then the
  // combiner. Gradients produced by lln_backward use the same shape.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  LLNParams zeros_like() const;

  // Xavier-uniform weights, zero biases.
  static LLNParams xavier(int in_channels, std::span<const int> kernel_sizes,
                          int channels_per_branch, std::uint64_t seed, bool branch_relu = true);

  friend bool operator==(const LLNParams&, const LLNParams&) = default;
};

// Intermediate values of one forward pass, kept for the backward pass.
struct LLNForward {
  std::vector<FeatureMap> branch_pre;  // conv outputs before the optional branch ReLU
  FeatureMap concat;                   // h x w x D
  FeatureMap combiner_pre;             // h x w x 1
  ActivationMap activations;
  std::vector<double> weighted_sum;    // sum_ij w_ij f_ij, before normalisation
  Embedding embedding;
};

ActivationMap lln_forward(const FeatureMap& features, const LLNParams& params);

Embedding aggregate(const FeatureMap& features, const ActivationMap& weights);

// Full forward (activation map + aggregated embedding) keeping intermediates.
LLNForward lln_forward_cached(const FeatureMap& features, const LLNParams& params);

// Gradient of <grad_embedding, embedding(features)> w.r.t. every parameter.
// Features are treated as constants.
LLNParams lln_backward(const FeatureMap& features, const LLNParams& params,
                       std::span<const double> grad_embedding);
LLNParams lln_backward(const FeatureMap& features, const LLNParams& params,
                       const LLNForward& forward, std::span<const double> grad_embedding);

// Adds `src` into `dst` element-wise; shapes must match.
void accumulate(LLNParams& dst, const LLNParams& src);

}  // namespace lln
