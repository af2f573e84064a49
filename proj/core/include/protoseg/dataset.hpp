#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "protoseg/episodes.hpp"
#include "protoseg/patching.hpp"
#include "protoseg/phantom.hpp"
#include "protoseg/volume.hpp"

namespace protoseg {

struct Subject {
  std::string id;
  Volume3D image;
  LabelMask mask;
};

/// A dataset directory holds manifest.json plus one image and one mask file per subject:
///   {"subjects": [{"id": ..., "image": "<file>", "mask": "<file>"}, ...], ...}
/// File names are relative to the directory. Extra top-level keys are preserved by
/// save_dataset through `extra_json` and ignored by load_dataset.
std::vector<Subject> load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const std::vector<Subject>& subjects,
                  const std::string& extra_json = "{}", const std::string& extension = ".nii.gz");

std::vector<std::string> subject_ids(const std::vector<Subject>& subjects);
/// Subjects whose ids appear in `ids`, in the order of `ids`. Throws on an unknown id.
std::vector<Subject> select_subjects(const std::vector<Subject>& subjects, const std::vector<std::string>& ids);

/// Intensity-normalise every image in place.
void normalize_subjects(std::vector<Subject>& subjects);

/// Per-subject sampling seed derived from a base seed and the subject's position.
std::uint64_t subject_seed(std::uint64_t base, std::size_t index);

/// Sample foreground patches from every subject. Subject i uses subject_seed(seed, i).
/// Repeated origins within a subject are kept once so patch identities stay unique.
PatchPool build_patch_pool(const std::vector<Subject>& subjects, const PatchSpec& spec, std::uint64_t seed);

/// n phantom subjects named phantom_000, phantom_001, ...; subject i uses
/// subject_seed(cfg.seed, i) as its phantom seed.
std::vector<Subject> generate_phantom_subjects(const PhantomConfig& cfg, int n);

}  // namespace protoseg
