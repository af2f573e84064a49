#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "protoseg/tensor.hpp"
#include "protoseg/volume.hpp"

namespace protoseg {

/// Compact 3D U-shaped encoder-decoder.
///
/// Level 0 runs at patch resolution with `base_channels` channels; level l has
/// base_channels * 2^l channels and is reached by a stride-2 3x3x3 convolution.
/// Each level adds one 3x3x3 convolution block; the decoder upsamples with
/// 2x2x2 transposed convolutions, concatenates the skip connection and applies a
/// 3x3x3 block. A 1x1x1 head maps level 0 to `feature_dim` channels.
/// Blocks are conv -> [instance norm] -> leaky ReLU.
struct EncoderConfig {
  int levels = 3;
  int base_channels = 8;
  int feature_dim = 16;
  int in_channels = 1;
  double leaky_slope = 0.01;
  bool instance_norm = true;
  std::uint64_t seed = 0;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

void validate(const EncoderConfig& cfg);
/// Throws unless every patch axis is divisible by 2^(levels-1).
void check_patch_dims(const EncoderConfig& cfg, const Dims& dims);

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Named tensors in a fixed order determined by the config. Also used for gradients
/// and optimizer state, which share the layout.
struct Parameters {
  EncoderConfig config;
  std::vector<NamedTensor> tensors;

  std::size_t count() const;
  const NamedTensor* find(const std::string& name) const;
  NamedTensor* find(const std::string& name);

  /// Zero-filled copy with identical layout.
  Parameters zeros_like() const;
  bool same_layout(const Parameters& other) const;

  void add_scaled(const Parameters& other, double scale);
  void scale(double s);
  double dot(const Parameters& other) const;
  double squared_norm() const;
  bool all_finite() const;

  /// Visit (tensor, element) pairs in canonical order.
  template <typename Fn>
  void for_each_value(Fn&& fn) {
    for (auto& t : tensors)
      for (double& v : t.values) fn(v);
  }

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

/// Fan-in scaled He-normal weights, zero biases, unit norm scales; deterministic in cfg.seed.
Parameters init_params(const EncoderConfig& cfg);

/// Closed-form parameter count of the architecture.
std::size_t expected_parameter_count(const EncoderConfig& cfg);

/// Intermediate values recorded by a forward pass for reverse-mode differentiation.
struct ForwardTape;

struct TapedForward {
  FeatureMap features;
  std::shared_ptr<const ForwardTape> tape;
};

struct EncoderGradient {
  Parameters params;
  Tensor input;
};

FeatureMap forward(const Parameters& params, const Tensor& input);
FeatureMap forward(const Parameters& params, const Volume3D& patch);
TapedForward forward_taped(const Parameters& params, const Tensor& input);

/// Gradient of <forward(params, input), cotangent> with respect to params and input.
EncoderGradient backward(const Parameters& params, const ForwardTape& tape, const FeatureMap& cotangent);
EncoderGradient backward(const Parameters& params, const Tensor& input, const FeatureMap& cotangent);
EncoderGradient backward(const Parameters& params, const Volume3D& patch, const FeatureMap& cotangent);

}  // namespace protoseg
