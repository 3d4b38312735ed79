#include "lln/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "lln/error.hpp"

namespace lln {

int LLNParams::in_channels() const {
  return branches.empty() ? 0 : branches.front().in_channels;
}

int LLNParams::concat_channels() const {
  int d = 0;
  for (const auto& b : branches) d += b.out_channels;
  return d;
}

std::size_t LLNParams::parameter_count() const {
  std::size_t n = combiner.parameter_count();
  for (const auto& b : branches) n += b.parameter_count();
  return n;
}

void LLNParams::validate() const {
  if (branches.empty()) throw ConfigError("LLN needs at least one branch");
  const int c = branches.front().in_channels;
  for (const auto& b : branches) {
    b.validate();
    if (b.in_channels != c) throw ConfigError("LLN branches must share in_channels");
  }
  combiner.validate();
  if (combiner.kernel_size != 1 || combiner.out_channels != 1 ||
      combiner.in_channels != concat_channels()) {
    throw ConfigError("LLN combiner must be 1x1 with in=D=" + std::to_string(concat_channels()) +
                      " and out=1");
  }
}

std::vector<double> LLNParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  auto put = [&](const ConvLayer& l) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  };
  for (const auto& b : branches) put(b);
  put(combiner);
  return flat;
}

void LLNParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw ConfigError("LLN assign: expected " + std::to_string(parameter_count()) +
                      " values, got " + std::to_string(flat.size()));
  }
  std::size_t pos = 0;
  auto take = [&](ConvLayer& l) {
    for (double& w : l.weights) w = flat[pos++];
    for (double& b : l.bias) b = flat[pos++];
  };
  for (auto& b : branches) take(b);
  take(combiner);
}

LLNParams LLNParams::zeros_like() const {
  LLNParams z;
  z.branch_relu = branch_relu;
  for (const auto& b : branches) z.branches.push_back(ConvLayer::zeros(b.kernel_size, b.in_channels, b.out_channels));
  z.combiner = ConvLayer::zeros(combiner.kernel_size, combiner.in_channels, combiner.out_channels);
  return z;
}

LLNParams LLNParams::xavier(int in_channels, std::span<const int> kernel_sizes, int channels_per_branch,
                            std::uint64_t seed, bool branch_relu) {
  if (kernel_sizes.empty()) throw ConfigError("LLN needs at least one kernel size");
  std::mt19937_64 rng(seed);
  auto fill = [&](ConvLayer& l) {
    const double fan_in = static_cast<double>(l.kernel_size * l.kernel_size * l.in_channels);
    const double fan_out = static_cast<double>(l.kernel_size * l.kernel_size * l.out_channels);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : l.weights) w = dist(rng);
  };
  LLNParams p;
  p.branch_relu = branch_relu;
  for (int k : kernel_sizes) {
    p.branches.push_back(ConvLayer::zeros(k, in_channels, channels_per_branch));
    fill(p.branches.back());
  }
  p.combiner = ConvLayer::zeros(1, p.concat_channels(), 1);
  fill(p.combiner);
  p.validate();
  return p;
}

namespace {

void check_features(const FeatureMap& features, const LLNParams& params) {
  params.validate();
  if (features.channels() != params.in_channels()) {
    throw ConfigError("LLN expects " + std::to_string(params.in_channels()) +
                      "-channel features, got " + std::to_string(features.channels()));
  }
}

}  // namespace

LLNForward lln_forward_cached(const FeatureMap& features, const LLNParams& params) {
  check_features(features, params);
  const int h = features.height();
  const int w = features.width();
  LLNForward fw;
  fw.concat = FeatureMap(h, w, params.concat_channels());

  int offset = 0;
  for (const auto& branch : params.branches) {
    fw.branch_pre.push_back(conv2d_forward(features, branch));
    const FeatureMap& pre = fw.branch_pre.back();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        auto src = pre.cell(y, x);
        auto dst = fw.concat.cell(y, x);
        for (int c = 0; c < branch.out_channels; ++c) {
          const double v = src[c];
          dst[offset + c] = params.branch_relu ? (v <= 0.0 ? 0.0 : v) : v;
        }
      }
    }
    offset += branch.out_channels;
  }

  fw.combiner_pre = conv2d_forward(fw.concat, params.combiner);
  fw.activations.height = h;
  fw.activations.width = w;
  fw.activations.values.resize(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < fw.activations.values.size(); ++i) {
    const double z = fw.combiner_pre.data()[i];
    fw.activations.values[i] = z <= 0.0 ? 0.0 : z;
  }

  fw.weighted_sum.assign(static_cast<std::size_t>(features.channels()), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double a = fw.activations.at(y, x);
      auto f = features.cell(y, x);
      for (int c = 0; c < features.channels(); ++c) fw.weighted_sum[c] += a * f[c];
    }
  }
  fw.embedding.values = l2_normalize(fw.weighted_sum);
  fw.embedding.normalized = true;
  fw.embedding.degenerate = l2_norm(fw.weighted_sum) <= kNormalizeEpsilon;
  return fw;
}

ActivationMap lln_forward(const FeatureMap& features, const LLNParams& params) {
  return lln_forward_cached(features, params).activations;
}

Embedding aggregate(const FeatureMap& features, const ActivationMap& weights) {
  if (weights.height != features.height() || weights.width != features.width() ||
      weights.values.size() != static_cast<std::size_t>(features.cells())) {
    throw ConfigError("aggregate: activation map dims do not match feature grid");
  }
  std::vector<double> sum(static_cast<std::size_t>(features.channels()), 0.0);
  for (int y = 0; y < features.height(); ++y) {
    for (int x = 0; x < features.width(); ++x) {
      const double a = weights.at(y, x);
      auto f = features.cell(y, x);
      for (int c = 0; c < features.channels(); ++c) sum[c] += a * f[c];
    }
  }
  Embedding e;
  e.degenerate = l2_norm(sum) <= kNormalizeEpsilon;
  e.values = l2_normalize(sum);
  e.normalized = true;
  return e;
}

LLNParams lln_backward(const FeatureMap& features, const LLNParams& params,
                       std::span<const double> grad_embedding) {
  return lln_backward(features, params, lln_forward_cached(features, params), grad_embedding);
}

LLNParams lln_backward(const FeatureMap& features, const LLNParams& params, const LLNForward& fw,
                       std::span<const double> grad_embedding) {
  check_features(features, params);
  if (grad_embedding.size() != static_cast<std::size_t>(features.channels())) {
    throw ConfigError("lln_backward: embedding gradient has wrong length");
  }
  const int h = features.height();
  const int w = features.width();

  // embedding -> weighted sum -> per-cell activation -> combiner pre-activation
  const std::vector<double> grad_sum = l2_normalize_backward(fw.weighted_sum, grad_embedding);
  FeatureMap grad_pre(h, w, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (fw.combiner_pre.at(y, x, 0) > 0.0) grad_pre.at(y, x, 0) = dot(grad_sum, features.cell(y, x));
    }
  }

  LLNParams grads;
  grads.branch_relu = params.branch_relu;
  ConvGradients comb = conv2d_backward(fw.concat, params.combiner, grad_pre, true);
  grads.combiner = params.combiner;
  grads.combiner.weights = std::move(comb.weights);
  grads.combiner.bias = std::move(comb.bias);

  int offset = 0;
  for (std::size_t b = 0; b < params.branches.size(); ++b) {
    const ConvLayer& branch = params.branches[b];
    const FeatureMap& pre = fw.branch_pre[b];
    FeatureMap grad_branch(h, w, branch.out_channels);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        auto gsrc = comb.input.cell(y, x);
        auto gdst = grad_branch.cell(y, x);
        auto p = pre.cell(y, x);
        for (int c = 0; c < branch.out_channels; ++c) {
          const bool pass = !params.branch_relu || p[c] > 0.0;
          gdst[c] = pass ? gsrc[offset + c] : 0.0;
        }
      }
    }
    ConvGradients g = conv2d_backward(features, branch, grad_branch, false);
    ConvLayer gl = branch;
    gl.weights = std::move(g.weights);
    gl.bias = std::move(g.bias);
    grads.branches.push_back(std::move(gl));
    offset += branch.out_channels;
  }
  return grads;
}

void accumulate(LLNParams& dst, const LLNParams& src) {
  if (dst.branches.size() != src.branches.size() || dst.parameter_count() != src.parameter_count()) {
    throw ConfigError("accumulate: parameter shapes differ");
  }
  auto add = [](ConvLayer& d, const ConvLayer& s) {
    for (std::size_t i = 0; i < d.weights.size(); ++i) d.weights[i] += s.weights[i];
    for (std::size_t i = 0; i < d.bias.size(); ++i) d.bias[i] += s.bias[i];
  };
  for (std::size_t b = 0; b < dst.branches.size(); ++b) add(dst.branches[b], src.branches[b]);
  add(dst.combiner, src.combiner);
}

}  // namespace lln
