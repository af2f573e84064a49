#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "protoseg/volume.hpp"

namespace protoseg {

/// Parameters for foreground-containing patch sampling.
struct PatchSpec {
  Dims size{64, 64, 16};
  int per_volume_count = 15;
  std::int64_t min_foreground_voxels = 30;
  /// Rejection-sampling attempts per patch before the foreground-centred fallback.
  int max_retries = 100;
};

struct Patch {
  Index3 origin;
  Volume3D image;
  std::optional<LabelMask> mask;
};

enum class TilingMode {
  /// ceil(dims/size) origins per axis; the last origin is clamped to dims - size.
  kClamped,
  /// floor(dims/size) origins per axis; trailing partial regions are left uncovered.
  kDropPartial,
};

const char* to_string(TilingMode mode);
TilingMode tiling_mode_from_string(const std::string& s);

struct TilingPlan {
  Dims parent;
  Dims patch;
  TilingMode mode = TilingMode::kClamped;
  /// Origins in x-fastest order; reconstruction is last-writer-wins in this order.
  std::vector<Index3> origins;

  std::size_t size() const noexcept { return origins.size(); }
};

/// Draw `spec.per_volume_count` patches that each hold at least
/// `spec.min_foreground_voxels` foreground voxels. Uniform origins are tried up to
/// `spec.max_retries` times per patch; after that, patches centred on randomly chosen
/// foreground voxels are tried until one qualifies.
std::vector<Patch> sample_vessel_patches(const Volume3D& vol, const LabelMask& mask,
                                         const PatchSpec& spec, std::mt19937_64& rng);

TilingPlan tile_non_overlapping(Dims dims, Dims patch_size, TilingMode mode = TilingMode::kClamped);

/// Cut the image (and optionally the mask) along a plan.
std::vector<Patch> extract_tiles(const TilingPlan& plan, const Volume3D& vol,
                                 const LabelMask* mask = nullptr);

/// Reassemble patch masks into a full-size mask. Voxels not covered by the plan are 0.
LabelMask reconstruct(const TilingPlan& plan, const std::vector<LabelMask>& patch_masks,
                      Spacing spacing = {});

// ---------------------------------------------------------------------------
// Patch cache on disk: one raw file per patch image/mask plus manifest.json.

struct CachedPatch {
  std::string subject;
  Index3 origin;
  std::uint64_t seed = 0;
  Patch patch;
};

void write_patch_cache(const std::filesystem::path& dir, const std::vector<CachedPatch>& patches);
std::vector<CachedPatch> read_patch_cache(const std::filesystem::path& dir);

}  // namespace protoseg
