#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "protoseg/volume.hpp"

namespace protoseg {

/// Multi-channel dense grid in double precision, channel-major then x-fastest.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, Dims dims, double fill = 0.0);
  Tensor(int channels, Dims dims, std::vector<double> data);

  static Tensor from_image(const Volume3D& vol);

  int channels() const noexcept { return channels_; }
  const Dims& dims() const noexcept { return dims_; }
  std::size_t voxels() const noexcept { return static_cast<std::size_t>(dims_.product()); }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(int c, std::size_t voxel) noexcept { return data_[c * voxels() + voxel]; }
  double operator()(int c, std::size_t voxel) const noexcept { return data_[c * voxels() + voxel]; }

  std::span<double> channel(int c) noexcept { return {data_.data() + c * voxels(), voxels()}; }
  std::span<const double> channel(int c) const noexcept {
    return {data_.data() + c * voxels(), voxels()};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  bool same_shape(const Tensor& o) const noexcept { return channels_ == o.channels_ && dims_ == o.dims_; }
  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  int channels_ = 0;
  Dims dims_{0, 0, 0};
  std::vector<double> data_;
};

/// Per-voxel D-channel embedding produced by the encoder.
using FeatureMap = Tensor;

}  // namespace protoseg
