#include "protoseg/volume.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace protoseg {

std::string to_string(const Vec3i& v) {
  return "(" + std::to_string(v.x) + "," + std::to_string(v.y) + "," + std::to_string(v.z) + ")";
}

// ---------------------------------------------------------------------------
// AffineTransform

AffineTransform::AffineTransform() : m_{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1} {}

AffineTransform::AffineTransform(const std::array<double, 16>& row_major) : m_(row_major) {
  if (m_[12] != 0.0 || m_[13] != 0.0 || m_[14] != 0.0 || m_[15] != 1.0) {
    fail(ErrorCode::kInvalidArgument, "affine last row must be (0,0,0,1)");
  }
  for (double v : m_) {
    if (!std::isfinite(v)) fail(ErrorCode::kInvalidArgument, "affine has non-finite entries");
  }
}

AffineTransform AffineTransform::translation(double tx, double ty, double tz) {
  return AffineTransform({1, 0, 0, tx, 0, 1, 0, ty, 0, 0, 1, tz, 0, 0, 0, 1});
}

AffineTransform AffineTransform::inverse() const {
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = m_[r * 4 + c];
  const double det = m.topLeftCorner<3, 3>().determinant();
  const double scale = m.topLeftCorner<3, 3>().cwiseAbs().maxCoeff();
  if (scale == 0.0 || std::abs(det) <= 1e-12 * scale * scale * scale) {
    fail(ErrorCode::kInvalidArgument, "affine transform is singular");
  }
  const Eigen::Matrix4d inv = m.inverse();
  std::array<double, 16> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) out[r * 4 + c] = inv(r, c);
  out[15] = 1.0;
  return AffineTransform(out);
}

std::array<double, 3> AffineTransform::apply(const std::array<double, 3>& p) const noexcept {
  std::array<double, 3> q{};
  for (int r = 0; r < 3; ++r) {
    q[r] = m_[r * 4] * p[0] + m_[r * 4 + 1] * p[1] + m_[r * 4 + 2] * p[2] + m_[r * 4 + 3];
  }
  return q;
}

AffineTransform load_affine(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "cannot open affine file " + path.string());
  std::vector<double> values;
  double v = 0.0;
  while (in >> v) values.push_back(v);
  if (!in.eof()) fail(ErrorCode::kFormat, "non-numeric token in affine file " + path.string());
  std::array<double, 16> m{};
  if (values.size() == 16) {
    std::copy(values.begin(), values.end(), m.begin());
  } else if (values.size() == 12) {
    std::copy(values.begin(), values.end(), m.begin());
    m[15] = 1.0;
  } else {
    fail(ErrorCode::kFormat, "affine file must hold 12 or 16 numbers: " + path.string());
  }
  return AffineTransform(m);
}

// ---------------------------------------------------------------------------
// Interpolation helpers

namespace {

// Continuous-index trilinear sample with edge clamping.
double sample_clamped(const Volume3D& v, double fx, double fy, double fz) {
  const Dims& d = v.dims();
  auto axis = [](double f, std::int64_t n, std::int64_t& i0, std::int64_t& i1, double& w) {
    f = std::clamp(f, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::int64_t>(std::floor(f));
    i1 = std::min(i0 + 1, n - 1);
    w = f - static_cast<double>(i0);
  };
  std::int64_t x0, x1, y0, y1, z0, z1;
  double wx, wy, wz;
  axis(fx, d.x, x0, x1, wx);
  axis(fy, d.y, y0, y1, wy);
  axis(fz, d.z, z0, z1, wz);
  const double c00 = v(x0, y0, z0) * (1 - wx) + v(x1, y0, z0) * wx;
  const double c10 = v(x0, y1, z0) * (1 - wx) + v(x1, y1, z0) * wx;
  const double c01 = v(x0, y0, z1) * (1 - wx) + v(x1, y0, z1) * wx;
  const double c11 = v(x0, y1, z1) * (1 - wx) + v(x1, y1, z1) * wx;
  const double c0 = c00 * (1 - wy) + c10 * wy;
  const double c1 = c01 * (1 - wy) + c11 * wy;
  return c0 * (1 - wz) + c1 * wz;
}

// Trilinear sample where neighbours outside the grid read as zero.
double sample_zero_padded(const Volume3D& v, double fx, double fy, double fz) {
  const std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
  const std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
  const std::int64_t z0 = static_cast<std::int64_t>(std::floor(fz));
  const double wx = fx - static_cast<double>(x0);
  const double wy = fy - static_cast<double>(y0);
  const double wz = fz - static_cast<double>(z0);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const double cz = dz ? wz : 1 - wz;
    if (cz == 0.0) continue;
    for (int dy = 0; dy < 2; ++dy) {
      const double cy = dy ? wy : 1 - wy;
      if (cy == 0.0) continue;
      for (int dx = 0; dx < 2; ++dx) {
        const double cx = dx ? wx : 1 - wx;
        if (cx == 0.0) continue;
        const std::int64_t x = x0 + dx, y = y0 + dy, z = z0 + dz;
        if (v.contains(x, y, z)) acc += cx * cy * cz * v(x, y, z);
      }
    }
  }
  return acc;
}

// Removes floating-point noise from continuous indices that should be integral.
double snap(double f) {
  const double r = std::round(f);
  return std::abs(f - r) < 1e-9 ? r : f;
}

struct IsoGrid {
  Dims dims;
  bool degenerate = false;
};

IsoGrid iso_grid(const Dims& dims, const Spacing& sp, double target) {
  if (!(target > 0.0) || !std::isfinite(target)) {
    fail(ErrorCode::kInvalidArgument, "target spacing must be positive");
  }
  IsoGrid g;
  for (int a = 0; a < 3; ++a) {
    // Small tolerance so that exact products such as 128 * 0.8 / 1.0 are not floored away.
    const double extent = static_cast<double>(dims[a]) * sp[a] / target;
    auto n = static_cast<std::int64_t>(std::floor(extent + 1e-9));
    if (n < 1) {
      n = 1;
      g.degenerate = true;
    }
    g.dims[a] = n;
  }
  return g;
}

template <typename T, typename Sampler>
Image<T> sample_onto(const GridSpec& out_grid, Sampler&& sampler) {
  Image<T> out(out_grid.dims, out_grid.spacing);
  const Dims& d = out_grid.dims;
  for (std::int64_t z = 0; z < d.z; ++z)
    for (std::int64_t y = 0; y < d.y; ++y)
      for (std::int64_t x = 0; x < d.x; ++x) out(x, y, z) = sampler(x, y, z);
  return out;
}

}  // namespace

Resampled<float> resample_isotropic(const Volume3D& vol, double target_spacing) {
  const IsoGrid g = iso_grid(vol.dims(), vol.spacing(), target_spacing);
  const Spacing& s = vol.spacing();
  const double rx = target_spacing / s.x, ry = target_spacing / s.y, rz = target_spacing / s.z;
  auto img = sample_onto<float>(
      {g.dims, {target_spacing, target_spacing, target_spacing}},
      [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        return static_cast<float>(sample_clamped(vol, snap(x * rx), snap(y * ry), snap(z * rz)));
      });
  return {std::move(img), g.degenerate};
}

Resampled<std::uint8_t> resample_isotropic(const LabelMask& mask, double target_spacing) {
  const IsoGrid g = iso_grid(mask.dims(), mask.spacing(), target_spacing);
  const Spacing& s = mask.spacing();
  const Dims& d = mask.dims();
  const double r[3] = {target_spacing / s.x, target_spacing / s.y, target_spacing / s.z};
  auto nearest = [&](std::int64_t i, int a) {
    const auto j = static_cast<std::int64_t>(std::floor(snap(i * r[a]) + 0.5));
    return std::clamp<std::int64_t>(j, 0, d[a] - 1);
  };
  auto img = sample_onto<std::uint8_t>(
      {g.dims, {target_spacing, target_spacing, target_spacing}},
      [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        return mask(nearest(x, 0), nearest(y, 1), nearest(z, 2));
      });
  return {std::move(img), g.degenerate};
}

namespace {

// Output voxel index -> continuous source index.
struct InverseMap {
  AffineTransform inv;
  Spacing out_sp;
  Spacing src_sp;

  std::array<double, 3> operator()(std::int64_t x, std::int64_t y, std::int64_t z) const {
    const auto q = inv.apply({x * out_sp.x, y * out_sp.y, z * out_sp.z});
    return {snap(q[0] / src_sp.x), snap(q[1] / src_sp.y), snap(q[2] / src_sp.z)};
  }
};

}  // namespace

Volume3D apply_affine(const Volume3D& vol, const AffineTransform& t, const GridSpec& ref) {
  const InverseMap map{t.inverse(), ref.spacing, vol.spacing()};
  return sample_onto<float>(ref, [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    const auto f = map(x, y, z);
    return static_cast<float>(sample_zero_padded(vol, f[0], f[1], f[2]));
  });
}

LabelMask apply_affine(const LabelMask& mask, const AffineTransform& t, const GridSpec& ref) {
  const InverseMap map{t.inverse(), ref.spacing, mask.spacing()};
  return sample_onto<std::uint8_t>(ref, [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    const auto f = map(x, y, z);
    const auto i = static_cast<std::int64_t>(std::floor(f[0] + 0.5));
    const auto j = static_cast<std::int64_t>(std::floor(f[1] + 0.5));
    const auto k = static_cast<std::int64_t>(std::floor(f[2] + 0.5));
    return mask.contains(i, j, k) ? mask(i, j, k) : std::uint8_t{0};
  });
}

Volume3D normalize_intensity(const Volume3D& vol) {
  double sum = 0.0;
  std::int64_t n = 0;
  for (float v : vol.data()) {
    if (!std::isfinite(v)) fail(ErrorCode::kInvalidArgument, "volume holds non-finite intensity");
    if (v != 0.0f) {
      sum += v;
      ++n;
    }
  }
  Volume3D out(vol.dims(), vol.spacing(), 0.0f);
  if (n == 0) return out;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (float v : vol.data()) {
    if (v != 0.0f) ss += (v - mean) * (v - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) return out;
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (vol[i] != 0.0f) out[i] = static_cast<float>((vol[i] - mean) / sd);
  }
  return out;
}

template <typename T>
Image<T> crop(const Image<T>& img, Index3 origin, Dims size) {
  const Dims& d = img.dims();
  for (int a = 0; a < 3; ++a) {
    if (origin[a] < 0 || size[a] < 1 || origin[a] + size[a] > d[a]) {
      fail(ErrorCode::kInvalidArgument,
           "crop " + to_string(origin) + "+" + to_string(size) + " outside " + to_string(d));
    }
  }
  Image<T> out(size, img.spacing());
  for (std::int64_t z = 0; z < size.z; ++z)
    for (std::int64_t y = 0; y < size.y; ++y) {
      const T* src = &img(origin.x, origin.y + y, origin.z + z);
      std::copy(src, src + size.x, &out(0, y, z));
    }
  return out;
}

template <typename T>
void paste(Image<T>& img, const Image<T>& patch, Index3 origin) {
  const Dims& d = img.dims();
  const Dims& s = patch.dims();
  for (int a = 0; a < 3; ++a) {
    if (origin[a] < 0 || origin[a] + s[a] > d[a]) {
      fail(ErrorCode::kInvalidArgument, "paste outside target grid");
    }
  }
  for (std::int64_t z = 0; z < s.z; ++z)
    for (std::int64_t y = 0; y < s.y; ++y) {
      const T* src = &patch(0, y, z);
      std::copy(src, src + s.x, &img(origin.x, origin.y + y, origin.z + z));
    }
}

template Image<float> crop(const Image<float>&, Index3, Dims);
template Image<std::uint8_t> crop(const Image<std::uint8_t>&, Index3, Dims);
template void paste(Image<float>&, const Image<float>&, Index3);
template void paste(Image<std::uint8_t>&, const Image<std::uint8_t>&, Index3);

std::int64_t count_foreground(const LabelMask& mask) {
  return std::count_if(mask.data().begin(), mask.data().end(),
                       [](std::uint8_t v) { return v != 0; });
}

LabelMask binarize(const LabelMask& mask) {
  LabelMask out = mask;
  for (auto& v : out.data()) v = v != 0 ? 1 : 0;
  return out;
}

}  // namespace protoseg
