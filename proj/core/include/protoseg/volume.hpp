#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "protoseg/error.hpp"

namespace protoseg {

/// Integer triple used for voxel counts and voxel indices (x fastest).
struct Vec3i {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  std::int64_t product() const noexcept { return x * y * z; }
  std::int64_t operator[](int axis) const noexcept { return axis == 0 ? x : axis == 1 ? y : z; }
  std::int64_t& operator[](int axis) noexcept { return axis == 0 ? x : axis == 1 ? y : z; }
  friend bool operator==(const Vec3i&, const Vec3i&) = default;
};

using Dims = Vec3i;
using Index3 = Vec3i;

std::string to_string(const Vec3i& v);

/// Physical voxel size in millimetres.
struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  double operator[](int axis) const noexcept { return axis == 0 ? x : axis == 1 ? y : z; }
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// Dense 3D grid with physical spacing, stored x-fastest.
///
/// Invariants (checked on construction): every dimension >= 1, every
/// spacing component > 0 and finite, data length == nx*ny*nz.
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() : Image(Dims{1, 1, 1}) {}
  explicit Image(Dims dims, Spacing spacing = {}, T fill = T{})
      : dims_(dims), spacing_(spacing) {
    validate_shape(dims_, spacing_);
    data_.assign(static_cast<std::size_t>(dims_.product()), fill);
  }
  Image(Dims dims, Spacing spacing, std::vector<T> data)
      : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    validate_shape(dims_, spacing_);
    if (data_.size() != static_cast<std::size_t>(dims_.product())) {
      fail(ErrorCode::kInvalidArgument,
           "image data length " + std::to_string(data_.size()) + " does not match dims " +
               to_string(dims_));
    }
  }

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  void set_spacing(Spacing s) {
    validate_shape(dims_, s);
    spacing_ = s;
  }
  std::size_t size() const noexcept { return data_.size(); }

  std::size_t offset(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return static_cast<std::size_t>((z * dims_.y + y) * dims_.x + x);
  }
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_.x && y < dims_.y && z < dims_.z;
  }

  T& operator()(std::int64_t x, std::int64_t y, std::int64_t z) noexcept {
    return data_[offset(x, y, z)];
  }
  const T& operator()(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return data_[offset(x, y, z)];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  static void validate_shape(const Dims& d, const Spacing& s);

  Dims dims_;
  Spacing spacing_;
  std::vector<T> data_;
};

template <typename T>
void Image<T>::validate_shape(const Dims& d, const Spacing& s) {
  if (d.x < 1 || d.y < 1 || d.z < 1) {
    fail(ErrorCode::kInvalidArgument, "image dims must be >= 1, got " + to_string(d));
  }
  for (int a = 0; a < 3; ++a) {
    if (!(s[a] > 0.0) || s[a] == std::numeric_limits<double>::infinity()) {
      fail(ErrorCode::kInvalidArgument, "image spacing must be positive and finite");
    }
  }
}

/// Real-valued intensity volume.
using Volume3D = Image<float>;
/// Integer class-index volume; 0 is background.
using LabelMask = Image<std::uint8_t>;

/// Grid geometry without data: the target of a resampling operation.
struct GridSpec {
  Dims dims{1, 1, 1};
  Spacing spacing{};
};

template <typename T>
GridSpec grid_of(const Image<T>& img) {
  return {img.dims(), img.spacing()};
}

/// 4x4 homogeneous transform in millimetre coordinates, row-major.
class AffineTransform {
 public:
  AffineTransform();  // identity
  explicit AffineTransform(const std::array<double, 16>& row_major);

  static AffineTransform translation(double tx, double ty, double tz);

  const std::array<double, 16>& matrix() const noexcept { return m_; }
  double operator()(int row, int col) const noexcept { return m_[row * 4 + col]; }

  /// Throws ErrorCode::kInvalidArgument when the linear part is singular.
  AffineTransform inverse() const;
  std::array<double, 3> apply(const std::array<double, 3>& p) const noexcept;

 private:
  std::array<double, 16> m_;
};

/// Load an affine from a text file holding 16 numbers (row-major) or 12 (top three rows).
AffineTransform load_affine(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// I/O
//
// Supported formats are chosen by extension:
//   .nii / .nii.gz  NIfTI-1 single file (uint8, int16, float32; scl_slope/inter applied on read)
//   .raw            little-endian array + sidecar "<stem>.json" {dims, spacing, dtype}
// ---------------------------------------------------------------------------

Volume3D load_volume(const std::filesystem::path& path);
/// Load an integer-valued file as a mask. Rejects non-integral or out-of-range values.
LabelMask load_mask(const std::filesystem::path& path);

void save_volume(const Volume3D& vol, const std::filesystem::path& path);
void save_volume(const LabelMask& mask, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Resampling and intensity operations
// ---------------------------------------------------------------------------

template <typename T>
struct Resampled {
  Image<T> image;
  /// True when some axis computed to 0 voxels and was clamped to 1.
  bool degenerate = false;
};

/// Resample onto an isotropic grid with dims_i = max(1, floor(dims_i * spacing_i / target)).
/// Output voxel j samples input continuous index j * target / spacing_i (voxel 0 centres
/// coincide). Trilinear with edge clamping.
Resampled<float> resample_isotropic(const Volume3D& vol, double target_spacing);
/// Nearest-neighbour variant for labels; never introduces new labels.
Resampled<std::uint8_t> resample_isotropic(const LabelMask& mask, double target_spacing);

/// Sample `vol` on `ref` through the inverse of `t`. Neighbours outside the source grid
/// contribute zero, so voxels mapped fully out of field become 0.
Volume3D apply_affine(const Volume3D& vol, const AffineTransform& t, const GridSpec& ref);
LabelMask apply_affine(const LabelMask& mask, const AffineTransform& t, const GridSpec& ref);

/// Zero mean / unit variance over nonzero voxels; zero voxels stay zero. A constant
/// (zero-variance) volume maps to all zeros.
Volume3D normalize_intensity(const Volume3D& vol);

/// Copy of the sub-grid [origin, origin + size).
template <typename T>
Image<T> crop(const Image<T>& img, Index3 origin, Dims size);

/// Write `patch` into `img` at `origin`.
template <typename T>
void paste(Image<T>& img, const Image<T>& patch, Index3 origin);

/// Count of voxels with a nonzero label.
std::int64_t count_foreground(const LabelMask& mask);

/// Replace every nonzero label with 1.
LabelMask binarize(const LabelMask& mask);

}  // namespace protoseg
