#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lln {

// Dense h x w x C grid of local features, stored row-major as (y, x, c).
// Each grid cell holds one C-dimensional local descriptor.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int height, int width, int channels);
  FeatureMap(int height, int width, int channels, std::vector<double> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  int cells() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x, int c) { return data_[offset(y, x, c)]; }
  double at(int y, int x, int c) const { return data_[offset(y, x, c)]; }

  std::span<double> cell(int y, int x) {
    return {data_.data() + offset(y, x, 0), static_cast<std::size_t>(channels_)};
  }
  std::span<const double> cell(int y, int x) const {
    return {data_.data() + offset(y, x, 0), static_cast<std::size_t>(channels_)};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const FeatureMap& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  std::size_t offset(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

// Stride-1, zero-padded ("SAME") convolution layer with an odd square kernel.
// Weights are laid out as (ky, kx, in, out).
struct ConvLayer {
  int kernel_size = 1;
  int in_channels = 0;
  int out_channels = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  static ConvLayer zeros(int kernel_size, int in_channels, int out_channels);

  std::size_t weight_index(int ky, int kx, int in, int out) const {
    return ((static_cast<std::size_t>(ky) * kernel_size + kx) * in_channels + in) * out_channels + out;
  }
  std::size_t parameter_count() const { return weights.size() + bias.size(); }

  // Throws ConfigError when sizes disagree or the kernel is even.
  void validate() const;

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

struct ConvGradients {
  std::vector<double> weights;
  std::vector<double> bias;
  FeatureMap input;
};

FeatureMap conv2d_forward(const FeatureMap& input, const ConvLayer& layer);

// Gradients of sum(grad_out * conv2d_forward(input, layer)). Pass
// want_input = false to skip the input gradient (frozen inputs).
ConvGradients conv2d_backward(const FeatureMap& input, const ConvLayer& layer,
                              const FeatureMap& grad_out, bool want_input = true);

FeatureMap relu(const FeatureMap& input);
// Masks grad_out where input <= 0 (subgradient 0 at exactly 0).
FeatureMap relu_backward(const FeatureMap& input, const FeatureMap& grad_out);

std::vector<double> global_max_pool(const FeatureMap& input);

inline constexpr double kNormalizeEpsilon = 1e-12;

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

// v / max(||v||, eps).
std::vector<double> l2_normalize(std::span<const double> v, double eps = kNormalizeEpsilon);
std::vector<double> l2_normalize_backward(std::span<const double> v,
                                          std::span<const double> grad_out,
                                          double eps = kNormalizeEpsilon);

struct AdamState {
  std::int64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_size(std::size_t n);
};

// One bias-corrected Adam update, in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double learning_rate);

}  // namespace lln
