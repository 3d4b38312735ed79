#include "lln/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lln/error.hpp"

namespace lln {

FeatureMap::FeatureMap(int height, int width, int channels)
    : FeatureMap(height, width, channels,
                 std::vector<double>(static_cast<std::size_t>(std::max(height, 0)) *
                                     std::max(width, 0) * std::max(channels, 0))) {}

FeatureMap::FeatureMap(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height < 1 || width < 1 || channels < 1) {
    throw ConfigError("feature map dims must be positive, got " + std::to_string(height) + "x" +
                      std::to_string(width) + "x" + std::to_string(channels));
  }
  const std::size_t expected = static_cast<std::size_t>(height) * width * channels;
  if (data_.size() != expected) {
    throw ConfigError("feature map data length " + std::to_string(data_.size()) +
                      " does not match h*w*C = " + std::to_string(expected));
  }
}

ConvLayer ConvLayer::zeros(int kernel_size, int in_channels, int out_channels) {
  ConvLayer layer;
  layer.kernel_size = kernel_size;
  layer.in_channels = in_channels;
  layer.out_channels = out_channels;
  layer.weights.assign(static_cast<std::size_t>(kernel_size) * kernel_size * in_channels * out_channels,
                       0.0);
  layer.bias.assign(static_cast<std::size_t>(out_channels), 0.0);
  layer.validate();
  return layer;
}

void ConvLayer::validate() const {
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ConfigError("conv kernel size must be odd and positive, got " + std::to_string(kernel_size));
  }
  if (in_channels < 1 || out_channels < 1) {
    throw ConfigError("conv channel counts must be positive");
  }
  const std::size_t expected =
      static_cast<std::size_t>(kernel_size) * kernel_size * in_channels * out_channels;
  if (weights.size() != expected || bias.size() != static_cast<std::size_t>(out_channels)) {
    throw ConfigError("conv parameter buffers do not match (k=" + std::to_string(kernel_size) +
                      ", in=" + std::to_string(in_channels) + ", out=" + std::to_string(out_channels) + ")");
  }
}

namespace {

void check_input(const FeatureMap& input, const ConvLayer& layer) {
  layer.validate();
  if (input.channels() != layer.in_channels) {
    throw ConfigError("conv expects " + std::to_string(layer.in_channels) + " input channels, got " +
                      std::to_string(input.channels()));
  }
}

}  // namespace

FeatureMap conv2d_forward(const FeatureMap& input, const ConvLayer& layer) {
  check_input(input, layer);
  const int h = input.height();
  const int w = input.width();
  const int k = layer.kernel_size;
  const int pad = k / 2;
  const int cin = layer.in_channels;
  const int cout = layer.out_channels;
  FeatureMap out(h, w, cout);

  // Per output element the accumulation order is bias, then (ky, kx, ci)
  // ascending; brute-force references rely on this order.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::span<double> acc = out.cell(y, x);
      std::copy(layer.bias.begin(), layer.bias.end(), acc.begin());
      for (int ky = 0; ky < k; ++ky) {
        const int yy = y + ky - pad;
        if (yy < 0 || yy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int xx = x + kx - pad;
          if (xx < 0 || xx >= w) continue;
          std::span<const double> in = input.cell(yy, xx);
          for (int ci = 0; ci < cin; ++ci) {
            const double v = in[ci];
            const double* wrow = layer.weights.data() + layer.weight_index(ky, kx, ci, 0);
            for (int co = 0; co < cout; ++co) acc[co] += v * wrow[co];
          }
        }
      }
    }
  }
  return out;
}

ConvGradients conv2d_backward(const FeatureMap& input, const ConvLayer& layer,
                              const FeatureMap& grad_out, bool want_input) {
  check_input(input, layer);
  if (grad_out.height() != input.height() || grad_out.width() != input.width() ||
      grad_out.channels() != layer.out_channels) {
    throw ConfigError("conv backward: grad_out shape does not match forward output");
  }
  const int h = input.height();
  const int w = input.width();
  const int k = layer.kernel_size;
  const int pad = k / 2;
  const int cin = layer.in_channels;
  const int cout = layer.out_channels;

  ConvGradients grads;
  grads.weights.assign(layer.weights.size(), 0.0);
  grads.bias.assign(layer.bias.size(), 0.0);
  if (want_input) grads.input = FeatureMap(h, w, cin);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::span<const double> g = grad_out.cell(y, x);
      for (int co = 0; co < cout; ++co) grads.bias[co] += g[co];
      for (int ky = 0; ky < k; ++ky) {
        const int yy = y + ky - pad;
        if (yy < 0 || yy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int xx = x + kx - pad;
          if (xx < 0 || xx >= w) continue;
          std::span<const double> in = input.cell(yy, xx);
          for (int ci = 0; ci < cin; ++ci) {
            const std::size_t base = layer.weight_index(ky, kx, ci, 0);
            double* gw = grads.weights.data() + base;
            const double v = in[ci];
            for (int co = 0; co < cout; ++co) gw[co] += v * g[co];
            if (want_input) {
              const double* wrow = layer.weights.data() + base;
              double s = 0.0;
              for (int co = 0; co < cout; ++co) s += wrow[co] * g[co];
              grads.input.at(yy, xx, ci) += s;
            }
          }
        }
      }
    }
  }
  return grads;
}

FeatureMap relu(const FeatureMap& input) {
  FeatureMap out = input;
  for (double& v : out.data()) v = v <= 0.0 ? 0.0 : v;  // NaN propagates
  return out;
}

FeatureMap relu_backward(const FeatureMap& input, const FeatureMap& grad_out) {
  if (!input.same_shape(grad_out)) throw ConfigError("relu backward: shape mismatch");
  FeatureMap out = grad_out;
  auto in = input.data();
  auto g = out.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(in[i] > 0.0)) g[i] = 0.0;
  }
  return out;
}

std::vector<double> global_max_pool(const FeatureMap& input) {
  std::vector<double> out(static_cast<std::size_t>(input.channels()),
                          -std::numeric_limits<double>::infinity());
  for (int y = 0; y < input.height(); ++y) {
    for (int x = 0; x < input.width(); ++x) {
      std::span<const double> f = input.cell(y, x);
      for (int c = 0; c < input.channels(); ++c) out[c] = std::max(out[c], f[c]);
    }
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ConfigError("dot: length mismatch " + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

std::vector<double> l2_normalize(std::span<const double> v, double eps) {
  const double denom = std::max(l2_norm(v), eps);
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= denom;
  return out;
}

std::vector<double> l2_normalize_backward(std::span<const double> v,
                                          std::span<const double> grad_out, double eps) {
  if (v.size() != grad_out.size()) throw ConfigError("l2_normalize backward: length mismatch");
  const double norm = l2_norm(v);
  std::vector<double> out(grad_out.begin(), grad_out.end());
  if (norm <= eps) {
    // Constant denominator below the floor: the map is linear.
    for (double& g : out) g /= eps;
    return out;
  }
  // d(v/|v|) = (I - u u^T) / |v|
  double proj = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) proj += v[i] * grad_out[i];
  proj /= norm * norm;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (grad_out[i] - v[i] * proj) / norm;
  return out;
}

AdamState AdamState::for_size(std::size_t n) {
  AdamState s;
  s.first_moment.assign(n, 0.0);
  s.second_moment.assign(n, 0.0);
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double learning_rate) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw ConfigError("adam: params, grads and state must have equal length");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grads[i] * grads[i];
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

}  // namespace lln
