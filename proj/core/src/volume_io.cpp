// NIfTI-1 (single file, optionally gzipped) and raw+sidecar readers/writers.

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "protoseg/volume.hpp"

namespace protoseg {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

enum class DType { kUint8, kInt16, kFloat32 };

constexpr std::int16_t kNiftiUint8 = 2;
constexpr std::int16_t kNiftiInt16 = 4;
constexpr std::int16_t kNiftiFloat32 = 16;
constexpr int kNiftiHeaderSize = 348;
constexpr int kNiftiVoxOffset = 352;

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kUint8: return 1;
    case DType::kInt16: return 2;
    case DType::kFloat32: return 4;
  }
  return 0;
}

const char* dtype_name(DType t) {
  switch (t) {
    case DType::kUint8: return "uint8";
    case DType::kInt16: return "int16";
    case DType::kFloat32: return "float32";
  }
  return "?";
}

DType dtype_from_name(const std::string& s) {
  if (s == "uint8") return DType::kUint8;
  if (s == "int16") return DType::kInt16;
  if (s == "float32") return DType::kFloat32;
  fail(ErrorCode::kFormat, "unsupported dtype '" + s + "'");
}

// Decoded file contents before conversion to an Image type.
struct RawContents {
  Dims dims;
  Spacing spacing;
  DType dtype = DType::kFloat32;
  std::vector<unsigned char> bytes;
  double slope = 1.0;
  double inter = 0.0;
};

bool has_suffix(const fs::path& p, const std::string& suffix) {
  const std::string s = p.string();
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_nifti(const fs::path& p) { return has_suffix(p, ".nii") || has_suffix(p, ".nii.gz"); }
bool is_raw(const fs::path& p) { return has_suffix(p, ".raw"); }

fs::path sidecar_of(const fs::path& raw) {
  fs::path s = raw;
  s.replace_extension(".json");
  return s;
}

template <typename T>
T read_at(const unsigned char* buf, std::size_t off, bool swap) {
  T v;
  std::memcpy(&v, buf + off, sizeof(T));
  if (swap) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  }
  return v;
}

template <typename T>
void write_at(unsigned char* buf, std::size_t off, T v) {
  std::memcpy(buf + off, &v, sizeof(T));
}

std::vector<unsigned char> read_all_gz(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::kNotFound, "no such file: " + path.string());
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<unsigned char> out;
  unsigned char chunk[1 << 16];
  for (;;) {
    const int n = gzread(f, chunk, sizeof(chunk));
    if (n < 0) {
      gzclose(f);
      fail(ErrorCode::kIo, "read failure in " + path.string());
    }
    if (n == 0) break;
    out.insert(out.end(), chunk, chunk + n);
  }
  gzclose(f);
  return out;
}

void write_all(const fs::path& path, const std::vector<unsigned char>& bytes, bool gzip) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  if (gzip) {
    gzFile f = gzopen(path.string().c_str(), "wb6");
    if (f == nullptr) fail(ErrorCode::kIo, "cannot write " + path.string());
    const int n = bytes.empty() ? 0 : gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    const int rc = gzclose(f);
    if (n != static_cast<int>(bytes.size()) || rc != Z_OK) {
      fail(ErrorCode::kIo, "write failure in " + path.string());
    }
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failure in " + path.string());
}

RawContents read_nifti(const fs::path& path) {
  const std::vector<unsigned char> buf = read_all_gz(path);
  if (buf.size() < kNiftiHeaderSize) fail(ErrorCode::kFormat, "truncated NIfTI header: " + path.string());
  const unsigned char* h = buf.data();
  bool swap = false;
  if (read_at<std::int32_t>(h, 0, false) != kNiftiHeaderSize) {
    if (read_at<std::int32_t>(h, 0, true) != kNiftiHeaderSize) {
      fail(ErrorCode::kFormat, "not a NIfTI-1 file: " + path.string());
    }
    swap = true;
  }
  if (std::memcmp(h + 344, "n+1", 4) != 0) {
    fail(ErrorCode::kFormat, "only single-file NIfTI-1 (n+1) is supported: " + path.string());
  }
  RawContents c;
  const auto ndim = read_at<std::int16_t>(h, 40, swap);
  if (ndim < 1 || ndim > 7) fail(ErrorCode::kFormat, "invalid dim[0] in " + path.string());
  for (int a = 0; a < 3; ++a) {
    const std::int16_t n = a < ndim ? read_at<std::int16_t>(h, 42 + 2 * a, swap) : 1;
    if (n < 1) fail(ErrorCode::kFormat, "non-positive dimension in " + path.string());
    c.dims[a] = n;
  }
  for (int a = 3; a < ndim; ++a) {
    if (read_at<std::int16_t>(h, 42 + 2 * a, swap) > 1) {
      fail(ErrorCode::kFormat, "only 3D volumes are supported: " + path.string());
    }
  }
  double sp[3];
  for (int a = 0; a < 3; ++a) {
    const float p = read_at<float>(h, 80 + 4 * a, swap);
    sp[a] = (std::isfinite(p) && p > 0.0f) ? std::abs(p) : 1.0;
  }
  c.spacing = {sp[0], sp[1], sp[2]};
  switch (read_at<std::int16_t>(h, 70, swap)) {
    case kNiftiUint8: c.dtype = DType::kUint8; break;
    case kNiftiInt16: c.dtype = DType::kInt16; break;
    case kNiftiFloat32: c.dtype = DType::kFloat32; break;
    default: fail(ErrorCode::kFormat, "unsupported NIfTI datatype in " + path.string());
  }
  const float slope = read_at<float>(h, 112, swap);
  const float inter = read_at<float>(h, 116, swap);
  if (std::isfinite(slope) && slope != 0.0f) {
    c.slope = slope;
    c.inter = std::isfinite(inter) ? inter : 0.0;
  }
  const float vox_offset = read_at<float>(h, 108, swap);
  const auto offset = static_cast<std::size_t>(std::max(vox_offset, static_cast<float>(kNiftiHeaderSize)));
  const std::size_t nbytes = static_cast<std::size_t>(c.dims.product()) * dtype_size(c.dtype);
  if (buf.size() < offset + nbytes) {
    fail(ErrorCode::kFormat, "NIfTI data shorter than header dims in " + path.string());
  }
  c.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(offset),
                 buf.begin() + static_cast<std::ptrdiff_t>(offset + nbytes));
  if (swap && dtype_size(c.dtype) > 1) {
    const std::size_t w = dtype_size(c.dtype);
    for (std::size_t i = 0; i < c.bytes.size(); i += w) std::reverse(&c.bytes[i], &c.bytes[i] + w);
  }
  return c;
}

void write_nifti(const fs::path& path, const Dims& d, const Spacing& s, DType dtype,
                 const void* data, std::size_t nbytes) {
  std::vector<unsigned char> buf(kNiftiVoxOffset + nbytes, 0);
  unsigned char* h = buf.data();
  write_at<std::int32_t>(h, 0, kNiftiHeaderSize);
  const std::int16_t dims[8] = {3,
                                static_cast<std::int16_t>(d.x),
                                static_cast<std::int16_t>(d.y),
                                static_cast<std::int16_t>(d.z),
                                1, 1, 1, 1};
  if (d.x > 32767 || d.y > 32767 || d.z > 32767) {
    fail(ErrorCode::kInvalidArgument, "dimension exceeds NIfTI-1 limit");
  }
  for (int i = 0; i < 8; ++i) write_at<std::int16_t>(h, 40 + 2 * i, dims[i]);
  std::int16_t code = kNiftiFloat32;
  if (dtype == DType::kUint8) code = kNiftiUint8;
  if (dtype == DType::kInt16) code = kNiftiInt16;
  write_at<std::int16_t>(h, 70, code);
  write_at<std::int16_t>(h, 72, static_cast<std::int16_t>(8 * dtype_size(dtype)));
  const float pixdim[8] = {1.0f, static_cast<float>(s.x), static_cast<float>(s.y),
                           static_cast<float>(s.z), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) write_at<float>(h, 76 + 4 * i, pixdim[i]);
  write_at<float>(h, 108, static_cast<float>(kNiftiVoxOffset));
  write_at<float>(h, 112, 0.0f);  // scl_slope 0: no scaling
  write_at<float>(h, 116, 0.0f);
  h[123] = 2;  // xyzt_units: mm
  write_at<std::int16_t>(h, 254, 1);  // sform_code: scanner
  const float srow[3][4] = {{static_cast<float>(s.x), 0, 0, 0},
                            {0, static_cast<float>(s.y), 0, 0},
                            {0, 0, static_cast<float>(s.z), 0}};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) write_at<float>(h, 280 + 16 * r + 4 * c, srow[r][c]);
  std::memcpy(h + 344, "n+1", 4);
  if (nbytes > 0) std::memcpy(h + kNiftiVoxOffset, data, nbytes);
  write_all(path, buf, has_suffix(path, ".gz"));
}

RawContents read_raw(const fs::path& path) {
  const fs::path side = sidecar_of(path);
  std::ifstream sin(side);
  if (!sin) fail(ErrorCode::kNotFound, "missing raw sidecar " + side.string());
  json j;
  try {
    sin >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, "malformed sidecar " + side.string() + ": " + e.what());
  }
  RawContents c;
  try {
    const auto dims = j.at("dims").get<std::vector<std::int64_t>>();
    const auto sp = j.at("spacing").get<std::vector<double>>();
    if (dims.size() != 3 || sp.size() != 3) fail(ErrorCode::kFormat, "sidecar dims/spacing need 3 entries");
    c.dims = {dims[0], dims[1], dims[2]};
    c.spacing = {sp[0], sp[1], sp[2]};
    c.dtype = dtype_from_name(j.value("dtype", std::string("float32")));
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, "bad sidecar " + side.string() + ": " + e.what());
  }
  if (c.dims.x < 1 || c.dims.y < 1 || c.dims.z < 1) fail(ErrorCode::kFormat, "bad dims in sidecar");
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kNotFound, "no such file: " + path.string());
  c.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  const std::size_t expected = static_cast<std::size_t>(c.dims.product()) * dtype_size(c.dtype);
  if (c.bytes.size() != expected) {
    fail(ErrorCode::kFormat, "raw data size " + std::to_string(c.bytes.size()) +
                                 " does not match sidecar (" + std::to_string(expected) + ")");
  }
  return c;
}

void write_raw(const fs::path& path, const Dims& d, const Spacing& s, DType dtype, const void* data,
               std::size_t nbytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  write_all(path, std::vector<unsigned char>(p, p + nbytes), false);
  json j = {{"dims", {d.x, d.y, d.z}}, {"spacing", {s.x, s.y, s.z}}, {"dtype", dtype_name(dtype)}};
  std::ofstream out(sidecar_of(path), std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write sidecar for " + path.string());
  out << j.dump(2) << "\n";
}

RawContents read_any(const fs::path& path) {
  if (is_nifti(path)) return read_nifti(path);
  if (is_raw(path)) return read_raw(path);
  fail(ErrorCode::kFormat, "unrecognised volume extension: " + path.string());
}

std::vector<double> decode(const RawContents& c) {
  const std::size_t n = static_cast<std::size_t>(c.dims.product());
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (c.dtype) {
      case DType::kUint8: v[i] = c.bytes[i]; break;
      case DType::kInt16: {
        std::int16_t x;
        std::memcpy(&x, &c.bytes[2 * i], 2);
        v[i] = x;
        break;
      }
      case DType::kFloat32: {
        float x;
        std::memcpy(&x, &c.bytes[4 * i], 4);
        v[i] = x;
        break;
      }
    }
  }
  if (c.slope != 1.0 || c.inter != 0.0) {
    for (double& x : v) x = x * c.slope + c.inter;
  }
  return v;
}

}  // namespace

Volume3D load_volume(const fs::path& path) {
  const RawContents c = read_any(path);
  std::vector<float> data(static_cast<std::size_t>(c.dims.product()));
  if (c.dtype == DType::kFloat32 && c.slope == 1.0 && c.inter == 0.0) {
    std::memcpy(data.data(), c.bytes.data(), c.bytes.size());  // bit-exact path
  } else {
    const auto v = decode(c);
    for (std::size_t i = 0; i < v.size(); ++i) data[i] = static_cast<float>(v[i]);
  }
  for (float x : data) {
    if (!std::isfinite(x)) fail(ErrorCode::kFormat, "non-finite intensity in " + path.string());
  }
  return Volume3D(c.dims, c.spacing, std::move(data));
}

LabelMask load_mask(const fs::path& path) {
  const RawContents c = read_any(path);
  const auto v = decode(c);
  std::vector<std::uint8_t> data(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] != std::round(v[i]) || v[i] < 0.0 || v[i] > 255.0) {
      fail(ErrorCode::kFormat, "mask holds a non-label value in " + path.string());
    }
    data[i] = static_cast<std::uint8_t>(v[i]);
  }
  return LabelMask(c.dims, c.spacing, std::move(data));
}

void save_volume(const Volume3D& vol, const fs::path& path) {
  const auto d = vol.data();
  if (is_nifti(path)) {
    write_nifti(path, vol.dims(), vol.spacing(), DType::kFloat32, d.data(), d.size_bytes());
  } else if (is_raw(path)) {
    write_raw(path, vol.dims(), vol.spacing(), DType::kFloat32, d.data(), d.size_bytes());
  } else {
    fail(ErrorCode::kFormat, "unrecognised volume extension: " + path.string());
  }
}

void save_volume(const LabelMask& mask, const fs::path& path) {
  const auto d = mask.data();
  if (is_nifti(path)) {
    write_nifti(path, mask.dims(), mask.spacing(), DType::kUint8, d.data(), d.size_bytes());
  } else if (is_raw(path)) {
    write_raw(path, mask.dims(), mask.spacing(), DType::kUint8, d.data(), d.size_bytes());
  } else {
    fail(ErrorCode::kFormat, "unrecognised volume extension: " + path.string());
  }
}

}  // namespace protoseg
