#include "protoseg/patching.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace protoseg {

const char* to_string(TilingMode mode) {
  return mode == TilingMode::kClamped ? "clamped" : "drop-partial";
}

TilingMode tiling_mode_from_string(const std::string& s) {
  if (s == "clamped") return TilingMode::kClamped;
  if (s == "drop-partial") return TilingMode::kDropPartial;
  fail(ErrorCode::kInvalidArgument, "unknown tiling mode '" + s + "'");
}

namespace {

// Summed-volume table of the foreground indicator, padded by one on each axis.
class ForegroundCounter {
 public:
  explicit ForegroundCounter(const LabelMask& mask)
      : d_(mask.dims()), table_(static_cast<std::size_t>((d_.x + 1) * (d_.y + 1) * (d_.z + 1)), 0) {
    for (std::int64_t z = 0; z < d_.z; ++z)
      for (std::int64_t y = 0; y < d_.y; ++y)
        for (std::int64_t x = 0; x < d_.x; ++x) {
          at(x + 1, y + 1, z + 1) = (mask(x, y, z) != 0 ? 1 : 0) + at(x, y + 1, z + 1) +
                                    at(x + 1, y, z + 1) + at(x + 1, y + 1, z) - at(x, y, z + 1) -
                                    at(x, y + 1, z) - at(x + 1, y, z) + at(x, y, z);
        }
  }

  std::int64_t count(const Index3& o, const Dims& s) const {
    const std::int64_t x0 = o.x, y0 = o.y, z0 = o.z;
    const std::int64_t x1 = o.x + s.x, y1 = o.y + s.y, z1 = o.z + s.z;
    return at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) +
           at(x0, y1, z0) + at(x1, y0, z0) - at(x0, y0, z0);
  }

  std::int64_t total() const { return at(d_.x, d_.y, d_.z); }

 private:
  std::int64_t& at(std::int64_t x, std::int64_t y, std::int64_t z) {
    return table_[static_cast<std::size_t>((z * (d_.y + 1) + y) * (d_.x + 1) + x)];
  }
  std::int64_t at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return table_[static_cast<std::size_t>((z * (d_.y + 1) + y) * (d_.x + 1) + x)];
  }

  Dims d_;
  std::vector<std::int64_t> table_;
};

void check_patch_fits(const Dims& dims, const Dims& size) {
  for (int a = 0; a < 3; ++a) {
    if (size[a] < 1) fail(ErrorCode::kInvalidArgument, "patch size must be >= 1");
    if (size[a] > dims[a]) {
      fail(ErrorCode::kInvalidArgument,
           "patch " + to_string(size) + " larger than volume " + to_string(dims));
    }
  }
}

Patch make_patch(const Volume3D& vol, const LabelMask* mask, Index3 origin, Dims size) {
  Patch p{origin, crop(vol, origin, size), std::nullopt};
  if (mask != nullptr) p.mask = crop(*mask, origin, size);
  return p;
}

}  // namespace

std::vector<Patch> sample_vessel_patches(const Volume3D& vol, const LabelMask& mask,
                                         const PatchSpec& spec, std::mt19937_64& rng) {
  if (vol.dims() != mask.dims()) fail(ErrorCode::kInvalidArgument, "volume/mask dims differ");
  check_patch_fits(vol.dims(), spec.size);
  if (spec.per_volume_count < 1 || spec.min_foreground_voxels < 1 || spec.max_retries < 0) {
    fail(ErrorCode::kInvalidArgument, "invalid PatchSpec");
  }
  const ForegroundCounter counter(mask);
  if (counter.total() == 0) fail(ErrorCode::kInsufficientData, "mask has no foreground");
  if (counter.total() < spec.min_foreground_voxels) {
    fail(ErrorCode::kInsufficientData, "mask has fewer foreground voxels than min_foreground_voxels");
  }

  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] != 0) fg.push_back(i);

  const Dims& d = vol.dims();
  const Dims& s = spec.size;
  std::uniform_int_distribution<std::int64_t> ox(0, d.x - s.x), oy(0, d.y - s.y), oz(0, d.z - s.z);

  auto centred_on = [&](std::size_t flat) {
    const std::int64_t x = static_cast<std::int64_t>(flat) % d.x;
    const std::int64_t y = (static_cast<std::int64_t>(flat) / d.x) % d.y;
    const std::int64_t z = static_cast<std::int64_t>(flat) / (d.x * d.y);
    return Index3{std::clamp<std::int64_t>(x - s.x / 2, 0, d.x - s.x),
                  std::clamp<std::int64_t>(y - s.y / 2, 0, d.y - s.y),
                  std::clamp<std::int64_t>(z - s.z / 2, 0, d.z - s.z)};
  };

  std::vector<Patch> out;
  out.reserve(static_cast<std::size_t>(spec.per_volume_count));
  for (int p = 0; p < spec.per_volume_count; ++p) {
    std::optional<Index3> chosen;
    for (int attempt = 0; attempt < spec.max_retries && !chosen; ++attempt) {
      const Index3 o{ox(rng), oy(rng), oz(rng)};
      if (counter.count(o, s) >= spec.min_foreground_voxels) chosen = o;
    }
    if (!chosen) {
      // Visit foreground voxels in a seeded random order; the first qualifying centre wins.
      std::vector<std::size_t> order(fg.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = 0; i < order.size() && !chosen; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
        std::swap(order[i], order[pick(rng)]);
        const Index3 o = centred_on(fg[order[i]]);
        if (counter.count(o, s) >= spec.min_foreground_voxels) chosen = o;
      }
    }
    if (!chosen) {
      fail(ErrorCode::kInsufficientData,
           "no patch placement reaches " + std::to_string(spec.min_foreground_voxels) +
               " foreground voxels");
    }
    out.push_back(make_patch(vol, &mask, *chosen, s));
  }
  return out;
}

TilingPlan tile_non_overlapping(Dims dims, Dims patch_size, TilingMode mode) {
  check_patch_fits(dims, patch_size);
  TilingPlan plan{dims, patch_size, mode, {}};
  std::vector<std::int64_t> axis_origins[3];
  for (int a = 0; a < 3; ++a) {
    const std::int64_t n = mode == TilingMode::kClamped
                               ? (dims[a] + patch_size[a] - 1) / patch_size[a]
                               : dims[a] / patch_size[a];
    for (std::int64_t i = 0; i < n; ++i) {
      axis_origins[a].push_back(std::min(i * patch_size[a], dims[a] - patch_size[a]));
    }
  }
  for (std::int64_t z : axis_origins[2])
    for (std::int64_t y : axis_origins[1])
      for (std::int64_t x : axis_origins[0]) plan.origins.push_back({x, y, z});
  return plan;
}

std::vector<Patch> extract_tiles(const TilingPlan& plan, const Volume3D& vol, const LabelMask* mask) {
  if (vol.dims() != plan.parent) fail(ErrorCode::kInvalidArgument, "volume does not match tiling plan");
  if (mask != nullptr && mask->dims() != plan.parent) {
    fail(ErrorCode::kInvalidArgument, "mask does not match tiling plan");
  }
  std::vector<Patch> out;
  out.reserve(plan.size());
  for (const Index3& o : plan.origins) out.push_back(make_patch(vol, mask, o, plan.patch));
  return out;
}

LabelMask reconstruct(const TilingPlan& plan, const std::vector<LabelMask>& patch_masks,
                      Spacing spacing) {
  if (patch_masks.size() != plan.size()) {
    fail(ErrorCode::kInvalidArgument, "reconstruct: " + std::to_string(patch_masks.size()) +
                                          " masks for a plan of " + std::to_string(plan.size()));
  }
  LabelMask out(plan.parent, spacing, 0);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (patch_masks[i].dims() != plan.patch) {
      fail(ErrorCode::kInvalidArgument, "reconstruct: patch mask " + std::to_string(i) +
                                            " has dims " + to_string(patch_masks[i].dims()));
    }
    paste(out, patch_masks[i], plan.origins[i]);
  }
  return out;
}

void write_patch_cache(const std::filesystem::path& dir, const std::vector<CachedPatch>& patches) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string());
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const CachedPatch& cp = patches[i];
    char stem[64];
    std::snprintf(stem, sizeof(stem), "patch_%05zu", i);
    const std::string image_file = std::string(stem) + "_image.raw";
    save_volume(cp.patch.image, dir / image_file);
    nlohmann::json e = {{"subject", cp.subject},
                        {"origin", {cp.origin.x, cp.origin.y, cp.origin.z}},
                        {"seed", cp.seed},
                        {"image", image_file}};
    if (cp.patch.mask) {
      const std::string mask_file = std::string(stem) + "_mask.raw";
      save_volume(*cp.patch.mask, dir / mask_file);
      e["mask"] = mask_file;
    }
    entries.push_back(std::move(e));
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write patch manifest in " + dir.string());
  out << nlohmann::json{{"patches", entries}}.dump(2) << "\n";
}

std::vector<CachedPatch> read_patch_cache(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorCode::kNotFound, "no patch manifest in " + dir.string());
  std::vector<CachedPatch> out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& e : j.at("patches")) {
      const auto o = e.at("origin").get<std::vector<std::int64_t>>();
      if (o.size() != 3) fail(ErrorCode::kFormat, "patch origin needs 3 entries");
      CachedPatch cp;
      cp.subject = e.at("subject").get<std::string>();
      cp.origin = {o[0], o[1], o[2]};
      cp.seed = e.at("seed").get<std::uint64_t>();
      cp.patch.origin = cp.origin;
      cp.patch.image = load_volume(dir / e.at("image").get<std::string>());
      if (e.contains("mask")) cp.patch.mask = load_mask(dir / e.at("mask").get<std::string>());
      out.push_back(std::move(cp));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad patch manifest: ") + e.what());
  }
  return out;
}

}  // namespace protoseg
