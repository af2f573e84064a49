#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "protoseg/volume.hpp"

namespace protoseg::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("protoseg_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Volume3D random_volume(Dims d, std::uint64_t seed, Spacing s = {}) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  Volume3D v(d, s);
  for (float& x : v.data()) x = g(rng);
  return v;
}

inline LabelMask random_mask(Dims d, std::uint64_t seed, double p = 0.3, int label = 1) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  LabelMask m(d);
  for (auto& x : m.data()) x = static_cast<std::uint8_t>(b(rng) ? label : 0);
  return m;
}

}  // namespace protoseg::testing
