#include "protoseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "protoseg/augment.hpp"

namespace protoseg {

void validate(const PhantomConfig& c) {
  const double min_dim = static_cast<double>(std::min({c.dims.x, c.dims.y, c.dims.z}));
  if (c.dims.x < 1 || c.dims.y < 1 || c.dims.z < 1) fail(ErrorCode::kInvalidArgument, "phantom dims must be >= 1");
  if (c.n_tubes < 0 || c.n_distractors < 0) fail(ErrorCode::kInvalidArgument, "phantom counts must be >= 0");
  if (c.radius_min < 1.0 || c.radius_max < c.radius_min || c.radius_max > min_dim / 4.0) {
    fail(ErrorCode::kInvalidArgument, "tube radii must satisfy 1 <= min <= max <= min(dims)/4");
  }
  if (!(c.contrast > 1.0)) fail(ErrorCode::kInvalidArgument, "phantom contrast must exceed 1");
  if (c.noise_sigma < 0.0 || c.smoothing_sigma < 0.0 || c.curvature < 0.0 || c.tube_length < 0.0) {
    fail(ErrorCode::kInvalidArgument, "phantom sigmas, curvature and length must be >= 0");
  }
  if (!(c.background > 0.0)) fail(ErrorCode::kInvalidArgument, "phantom background must be positive");
}

namespace {

using Point = std::array<double, 3>;

void stamp_ball(Image<std::uint8_t>& img, const Point& c, double r) {
  const Dims& d = img.dims();
  const auto lo = [&](int a) { return std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(c[a] - r))); };
  const auto hi = [&](int a) {
    return std::min<std::int64_t>(d[a] - 1, static_cast<std::int64_t>(std::ceil(c[a] + r)));
  };
  for (std::int64_t z = lo(2); z <= hi(2); ++z)
    for (std::int64_t y = lo(1); y <= hi(1); ++y)
      for (std::int64_t x = lo(0); x <= hi(0); ++x) {
        const double dx = x - c[0], dy = y - c[1], dz = z - c[2];
        if (dx * dx + dy * dy + dz * dz <= r * r) img(x, y, z) = 1;
      }
}

}  // namespace

Phantom generate_phantom(const PhantomConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Dims& d = cfg.dims;

  Phantom ph{Volume3D(d), LabelMask(d), {}};
  const double length = cfg.tube_length > 0.0
                            ? cfg.tube_length
                            : 1.5 * static_cast<double>(std::max({d.x, d.y, d.z}));
  constexpr double kStep = 0.5;

  for (int t = 0; t < cfg.n_tubes; ++t) {
    const double r = cfg.radius_min + (cfg.radius_max - cfg.radius_min) * u01(rng);
    Point lo{}, hi{}, p{}, dir{};
    for (int a = 0; a < 3; ++a) {
      // Keep the centreline at least one radius inside the grid when the axis allows it.
      const double extent = static_cast<double>(d[a] - 1);
      const double margin = std::min(r, extent / 2.0);
      lo[a] = margin;
      hi[a] = extent - margin;
      p[a] = lo[a] + (hi[a] - lo[a]) * u01(rng);
    }
    double norm = 0.0;
    do {
      for (double& c : dir) c = gauss(rng);
      norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    } while (norm < 1e-6);
    for (double& c : dir) c /= norm;

    std::vector<Point> line;
    for (double s = 0.0; s <= length; s += kStep) {
      line.push_back(p);
      stamp_ball(ph.mask, p, r);
      const auto rc = [&](int a) {
        return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::lround(p[a])), 0, d[a] - 1);
      };
      ph.mask(rc(0), rc(1), rc(2)) = 1;
      for (double& c : dir) c += kStep * cfg.curvature * (2.0 * u01(rng) - 1.0);
      norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
      if (norm < 1e-9) dir = {1.0, 0.0, 0.0}, norm = 1.0;
      for (double& c : dir) c /= norm;
      for (int a = 0; a < 3; ++a) {
        double next = p[a] + kStep * dir[a];
        if (next < lo[a] || next > hi[a]) {
          dir[a] = -dir[a];
          next = std::clamp(p[a] + kStep * dir[a], lo[a], hi[a]);
        }
        p[a] = next;
      }
    }
    ph.centerlines.push_back(std::move(line));
  }

  LabelMask bright = ph.mask;
  for (int b = 0; b < cfg.n_distractors; ++b) {
    Point c{};
    for (int a = 0; a < 3; ++a) c[a] = static_cast<double>(d[a] - 1) * u01(rng);
    stamp_ball(bright, c, cfg.distractor_radius);
  }

  for (std::size_t i = 0; i < ph.volume.size(); ++i) {
    ph.volume[i] = static_cast<float>(cfg.background * (bright[i] != 0 ? cfg.contrast : 1.0));
  }
  ph.volume = gaussian_blur(ph.volume, cfg.smoothing_sigma);
  if (cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (float& v : ph.volume.data()) v = static_cast<float>(v + noise(rng));
  }
  return ph;
}

}  // namespace protoseg
