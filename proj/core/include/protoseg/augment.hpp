#pragma once

#include <array>
#include <random>

#include "protoseg/patching.hpp"
#include "protoseg/volume.hpp"

namespace protoseg {

/// Training-time augmentation. Flips act on image and mask; blur, noise and contrast
/// act on the image only.
struct AugmentConfig {
  std::array<double, 3> flip_prob{0.5, 0.5, 0.5};
  double blur_prob = 0.2;
  double blur_sigma_min = 0.5;
  double blur_sigma_max = 1.0;
  double noise_prob = 0.15;
  double noise_sigma_max = 0.1;
  double contrast_prob = 0.15;
  double contrast_min = 0.75;
  double contrast_max = 1.25;

  /// Configuration with every probability set to zero.
  static AugmentConfig none();
};

void validate(const AugmentConfig& cfg);

struct ImageMaskPair {
  Volume3D image;
  LabelMask mask;
};

ImageMaskPair augment(const Volume3D& image, const LabelMask& mask, const AugmentConfig& cfg,
                      std::mt19937_64& rng);
/// Patch overload; a patch without a mask is augmented image-only.
Patch augment(const Patch& patch, const AugmentConfig& cfg, std::mt19937_64& rng);

/// Reverse the order of voxels along `axis` (0 = x, 1 = y, 2 = z).
template <typename T>
Image<T> flip(const Image<T>& img, int axis);

/// Separable Gaussian blur with edge replication; sigma in voxels.
Volume3D gaussian_blur(const Volume3D& img, double sigma);

}  // namespace protoseg
