#include "protoseg/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <unordered_map>

#include "json.hpp"

namespace protoseg {

namespace fs = std::filesystem;

std::vector<Subject> load_dataset(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  std::ifstream in(manifest);
  if (!in) fail(ErrorCode::kNotFound, "no dataset manifest at " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, manifest.string() + ": " + e.what());
  }
  std::vector<Subject> out;
  try {
    for (const auto& s : j.at("subjects")) {
      Subject sub{s.at("id").get<std::string>(), load_volume(dir / s.at("image").get<std::string>()),
                  load_mask(dir / s.at("mask").get<std::string>())};
      if (sub.image.dims() != sub.mask.dims()) {
        fail(ErrorCode::kFormat, "subject " + sub.id + ": image and mask dims differ");
      }
      out.push_back(std::move(sub));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, manifest.string() + ": " + e.what());
  }
  return out;
}

void save_dataset(const fs::path& dir, const std::vector<Subject>& subjects, const std::string& extra_json,
                  const std::string& extension) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(extra_json);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("dataset extra metadata: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "dataset extra metadata must be an object");
  nlohmann::json list = nlohmann::json::array();
  for (const auto& s : subjects) {
    const std::string image = s.id + "_image" + extension;
    const std::string mask = s.id + "_mask" + extension;
    save_volume(s.image, dir / image);
    save_volume(s.mask, dir / mask);
    list.push_back({{"id", s.id}, {"image", image}, {"mask", mask}});
  }
  j["subjects"] = list;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write manifest in " + dir.string());
  out << j.dump(2) << "\n";
}

std::vector<std::string> subject_ids(const std::vector<Subject>& subjects) {
  std::vector<std::string> ids;
  ids.reserve(subjects.size());
  for (const auto& s : subjects) ids.push_back(s.id);
  return ids;
}

std::vector<Subject> select_subjects(const std::vector<Subject>& subjects, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, const Subject*> by_id;
  for (const auto& s : subjects) by_id.emplace(s.id, &s);
  std::vector<Subject> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) fail(ErrorCode::kNotFound, "unknown subject " + id);
    out.push_back(*it->second);
  }
  return out;
}

void normalize_subjects(std::vector<Subject>& subjects) {
  for (auto& s : subjects) s.image = normalize_intensity(s.image);
}

std::uint64_t subject_seed(std::uint64_t base, std::size_t index) {
  // splitmix64 finaliser over (base, index)
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

PatchPool build_patch_pool(const std::vector<Subject>& subjects, const PatchSpec& spec, std::uint64_t seed) {
  PatchPool pool;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const Subject& s = subjects[i];
    const std::uint64_t sseed = subject_seed(seed, i);
    std::mt19937_64 rng(sseed);
    const LabelMask bin = binarize(s.mask);
    std::set<std::tuple<std::int64_t, std::int64_t, std::int64_t>> seen;
    for (auto& p : sample_vessel_patches(s.image, bin, spec, rng)) {
      if (!seen.emplace(p.origin.x, p.origin.y, p.origin.z).second) continue;
      pool.push_back({PatchId{s.id, p.origin, sseed}, std::move(p.image), std::move(*p.mask)});
    }
  }
  return pool;
}

std::vector<Subject> generate_phantom_subjects(const PhantomConfig& cfg, int n) {
  if (n < 0) fail(ErrorCode::kInvalidArgument, "subject count must be >= 0");
  std::vector<Subject> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    PhantomConfig c = cfg;
    c.seed = subject_seed(cfg.seed, static_cast<std::size_t>(i));
    Phantom ph = generate_phantom(c);
    char id[32];
    std::snprintf(id, sizeof(id), "phantom_%03d", i);
    out.push_back({id, std::move(ph.volume), std::move(ph.mask)});
  }
  return out;
}

}  // namespace protoseg
