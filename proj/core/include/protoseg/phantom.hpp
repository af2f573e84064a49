#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "protoseg/volume.hpp"

namespace protoseg {

/// Synthetic vessel phantom: bright tubes swept along bounded random walks.
struct PhantomConfig {
  Dims dims{64, 64, 32};
  int n_tubes = 3;
  double radius_min = 1.0;  // voxels
  double radius_max = 2.0;
  double background = 1.0;
  /// Tube-to-background intensity ratio before smoothing and noise.
  double contrast = 3.0;
  double noise_sigma = 0.5;
  double smoothing_sigma = 0.7;
  /// Bound on the per-unit-step direction perturbation (uniform per component).
  double curvature = 0.35;
  /// Centreline length in voxels; 0 means 1.5 * the largest dimension.
  double tube_length = 0.0;
  /// Unlabelled bright spheres; exercise shape rather than intensity cues. 0 disables.
  int n_distractors = 0;
  double distractor_radius = 3.0;
  std::uint64_t seed = 0;
};

void validate(const PhantomConfig& cfg);

struct Phantom {
  Volume3D volume;
  LabelMask mask;
  /// Sampled centreline points per tube, in voxel coordinates.
  std::vector<std::vector<std::array<double, 3>>> centerlines;
};

Phantom generate_phantom(const PhantomConfig& cfg);

}  // namespace protoseg
