#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "protoseg/volume.hpp"

namespace protoseg {

/// Exact identity of a sampled patch; two patches are the same iff their ids are equal.
struct PatchId {
  std::string subject;
  Index3 origin;
  std::uint64_t seed = 0;

  friend bool operator==(const PatchId&, const PatchId&) = default;
  friend auto operator<=>(const PatchId& a, const PatchId& b) {
    return std::tie(a.subject, a.origin.x, a.origin.y, a.origin.z, a.seed) <=>
           std::tie(b.subject, b.origin.x, b.origin.y, b.origin.z, b.seed);
  }
};

struct PoolPatch {
  PatchId id;
  Volume3D image;
  LabelMask mask;  // binary: 0 background, 1 vessel
};

using PatchPool = std::vector<PoolPatch>;

/// Pool indices grouped per subject, subjects in lexicographic order.
std::map<std::string, std::vector<std::size_t>> group_by_subject(const PatchPool& pool);

enum class ClassFraming {
  /// One semantic class (vessel); support and query come from any subject.
  kVesselAsClass,
  /// Each subject is its own class and its patches are the class members.
  kSubjectAsClass,
};

const char* to_string(ClassFraming f);
ClassFraming class_framing_from_string(const std::string& s);

struct EpisodeConfig {
  int ways = 1;
  int shots = 1;
  int queries = 1;
  ClassFraming framing = ClassFraming::kVesselAsClass;
  std::uint64_t seed = 0;
};

struct EpisodeQuery {
  std::size_t index = 0;  // into the pool
  int label = 1;          // foreground class label in 1..ways
};

/// C-way K-shot episode expressed as indices into a PatchPool.
///
/// support[c] holds the K pool indices of class c; that class's foreground is
/// labelled c+1 and background is 0. Support and query never share a patch.
struct Episode {
  int ways = 1;
  std::vector<std::vector<std::size_t>> support;
  std::vector<EpisodeQuery> query;

  std::size_t support_size() const;
};

/// Draws one episode. Queries come from the same class pools as the support.
Episode build_episode(const PatchPool& pool, const EpisodeConfig& cfg, std::mt19937_64& rng);
/// Convenience overload seeding a fresh generator from cfg.seed.
Episode build_episode(const PatchPool& pool, const EpisodeConfig& cfg);

struct SubjectSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

struct SplitFractions {
  double train = 0.78;
  double val = 0.07;
  double test = 0.15;
};

/// Seeded shuffle, then sizes by largest-remainder rounding of fraction * n.
SubjectSplit split_subjects(std::vector<std::string> subjects, SplitFractions fractions,
                            std::uint64_t seed);

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// k folds whose test sets partition the subjects; sizes differ by at most one.
std::vector<Fold> make_folds(std::vector<std::string> subjects, int k, std::uint64_t seed);

void save_split(const SubjectSplit& split, const std::filesystem::path& path);
SubjectSplit load_split(const std::filesystem::path& path);
void save_folds(const std::vector<Fold>& folds, const std::filesystem::path& path);
std::vector<Fold> load_folds(const std::filesystem::path& path);

}  // namespace protoseg
