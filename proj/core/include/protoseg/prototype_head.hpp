#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "protoseg/tensor.hpp"
#include "protoseg/volume.hpp"

namespace protoseg {

struct Prototype {
  int class_id = 0;
  std::vector<double> vector;
  /// Number of support images that contributed (images without class voxels are skipped).
  int support_count = 0;
};

/// Masked average pooling.
///
/// For every support image with at least one voxel labelled `class_id`, the mean
/// feature vector over those voxels is taken; the prototype is the mean of these
/// per-image vectors. Support images without class voxels are left out of the outer
/// mean. Throws when no image has a class voxel or shapes disagree.
Prototype masked_average_pool(std::span<const FeatureMap> features, std::span<const LabelMask> masks,
                              int class_id);

/// Same pooling over the complement indicator (mask != class_id); the result carries
/// class id 0.
Prototype background_prototype(std::span<const FeatureMap> features, std::span<const LabelMask> masks,
                               int class_id);

/// Reverse-mode counterpart of the two pooling operations: adds d(prototype)/d(features)
/// contracted with `dproto` into `dfeatures` (which must be shaped like `features`).
void pool_backward(std::span<const LabelMask> masks, int class_id, bool complement,
                   std::span<const double> dproto, std::span<FeatureMap> dfeatures);

/// Per-class scores alpha * cos(feature, prototype) at every voxel; channel k
/// corresponds to prototypes[k].
struct SimilarityMap {
  Tensor scores;
  std::vector<int> class_ids;
  double alpha = 20.0;

  /// Unscaled cosine at channel k, voxel v.
  double cosine(int k, std::size_t v) const { return scores(k, v) / alpha; }
};

constexpr double kCosineEps = 1e-8;
constexpr double kDefaultCosineScale = 20.0;

SimilarityMap similarity(const FeatureMap& query, std::span<const Prototype> prototypes,
                         double alpha = kDefaultCosineScale);

struct SimilarityGradient {
  FeatureMap query;
  std::vector<std::vector<double>> prototypes;
};

/// Gradient of <similarity(query, prototypes).scores, dscores>.
SimilarityGradient similarity_backward(const FeatureMap& query, std::span<const Prototype> prototypes,
                                       double alpha, const Tensor& dscores);

struct Prediction {
  Tensor probabilities;  // channel k is the probability of class_ids[k]
  std::vector<int> class_ids;
  LabelMask hard_mask;
};

/// Voxelwise softmax over the scaled similarities and argmax labelling. Ties go to the
/// lowest channel (background when prototypes are ordered background first).
Prediction predict(const SimilarityMap& sim);

/// Softmax over channels at each voxel, computed with max subtraction.
Tensor softmax_channels(const Tensor& logits);

std::string prototypes_to_json(std::span<const Prototype> prototypes);
void save_prototypes(std::span<const Prototype> prototypes, const std::filesystem::path& path);
std::vector<Prototype> load_prototypes(const std::filesystem::path& path);

}  // namespace protoseg
