#include "protoseg/augment.hpp"

#include <algorithm>
#include <cmath>

namespace protoseg {

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.flip_prob = {0.0, 0.0, 0.0};
  c.blur_prob = c.noise_prob = c.contrast_prob = 0.0;
  return c;
}

void validate(const AugmentConfig& c) {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(c.flip_prob[0]) || !prob(c.flip_prob[1]) || !prob(c.flip_prob[2]) || !prob(c.blur_prob) ||
      !prob(c.noise_prob) || !prob(c.contrast_prob)) {
    fail(ErrorCode::kInvalidArgument, "augmentation probabilities must lie in [0, 1]");
  }
  if (c.blur_sigma_min < 0.0 || c.blur_sigma_max < c.blur_sigma_min || c.noise_sigma_max < 0.0) {
    fail(ErrorCode::kInvalidArgument, "augmentation sigmas must be >= 0 and ordered");
  }
  if (!(c.contrast_min > 0.0) || c.contrast_max < c.contrast_min) {
    fail(ErrorCode::kInvalidArgument, "contrast range must be positive and ordered");
  }
}

template <typename T>
Image<T> flip(const Image<T>& img, int axis) {
  if (axis < 0 || axis > 2) fail(ErrorCode::kInvalidArgument, "flip axis must be 0, 1 or 2");
  Image<T> out(img.dims(), img.spacing());
  const Dims& d = img.dims();
  for (std::int64_t z = 0; z < d.z; ++z)
    for (std::int64_t y = 0; y < d.y; ++y)
      for (std::int64_t x = 0; x < d.x; ++x) {
        const std::int64_t sx = axis == 0 ? d.x - 1 - x : x;
        const std::int64_t sy = axis == 1 ? d.y - 1 - y : y;
        const std::int64_t sz = axis == 2 ? d.z - 1 - z : z;
        out(x, y, z) = img(sx, sy, sz);
      }
  return out;
}

template Image<float> flip(const Image<float>&, int);
template Image<std::uint8_t> flip(const Image<std::uint8_t>&, int);

Volume3D gaussian_blur(const Volume3D& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& w : k) w /= sum;

  const Dims& d = img.dims();
  std::vector<double> cur(img.data().begin(), img.data().end());
  std::vector<double> next(cur.size());
  const std::int64_t strides[3] = {1, d.x, d.x * d.y};
  for (int axis = 0; axis < 3; ++axis) {
    const std::int64_t n = d[axis];
    for (std::int64_t z = 0; z < d.z; ++z)
      for (std::int64_t y = 0; y < d.y; ++y)
        for (std::int64_t x = 0; x < d.x; ++x) {
          const std::int64_t pos[3] = {x, y, z};
          const std::int64_t base = x + d.x * (y + d.y * z) - pos[axis] * strides[axis];
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            const std::int64_t j = std::clamp<std::int64_t>(pos[axis] + i, 0, n - 1);
            acc += k[static_cast<std::size_t>(i + radius)] * cur[static_cast<std::size_t>(base + j * strides[axis])];
          }
          next[static_cast<std::size_t>(x + d.x * (y + d.y * z))] = acc;
        }
    std::swap(cur, next);
  }
  Volume3D out(d, img.spacing());
  for (std::size_t i = 0; i < cur.size(); ++i) out[i] = static_cast<float>(cur[i]);
  return out;
}

ImageMaskPair augment(const Volume3D& image, const LabelMask& mask, const AugmentConfig& cfg,
                      std::mt19937_64& rng) {
  validate(cfg);
  if (image.dims() != mask.dims()) fail(ErrorCode::kInvalidArgument, "augment: image/mask dims differ");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  ImageMaskPair out{image, mask};
  // Every draw happens regardless of outcome so the random stream stays aligned.
  for (int axis = 0; axis < 3; ++axis) {
    if (u01(rng) < cfg.flip_prob[static_cast<std::size_t>(axis)]) {
      out.image = flip(out.image, axis);
      out.mask = flip(out.mask, axis);
    }
  }
  const bool do_blur = u01(rng) < cfg.blur_prob;
  const double sigma = cfg.blur_sigma_min + (cfg.blur_sigma_max - cfg.blur_sigma_min) * u01(rng);
  if (do_blur) out.image = gaussian_blur(out.image, sigma);

  const bool do_noise = u01(rng) < cfg.noise_prob;
  const double noise_sd = cfg.noise_sigma_max * u01(rng);
  if (do_noise && noise_sd > 0.0) {
    std::normal_distribution<double> n(0.0, noise_sd);
    for (float& v : out.image.data()) v = static_cast<float>(v + n(rng));
  }

  const bool do_contrast = u01(rng) < cfg.contrast_prob;
  const double factor = cfg.contrast_min + (cfg.contrast_max - cfg.contrast_min) * u01(rng);
  if (do_contrast) {
    double mean = 0.0;
    for (float v : out.image.data()) mean += v;
    mean /= static_cast<double>(out.image.size());
    for (float& v : out.image.data()) v = static_cast<float>((v - mean) * factor + mean);
  }
  return out;
}

Patch augment(const Patch& patch, const AugmentConfig& cfg, std::mt19937_64& rng) {
  const LabelMask placeholder(patch.image.dims(), patch.image.spacing());
  auto r = augment(patch.image, patch.mask ? *patch.mask : placeholder, cfg, rng);
  Patch out{patch.origin, std::move(r.image), std::nullopt};
  if (patch.mask) out.mask = std::move(r.mask);
  return out;
}

}  // namespace protoseg
