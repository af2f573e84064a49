#include "protoseg/encoder.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>

namespace protoseg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

constexpr double kNormEps = 1e-5;
constexpr int kTaps = 27;

MatMap as_matrix(Tensor& t) {
  return {t.raw(), t.channels(), static_cast<Eigen::Index>(t.voxels())};
}
ConstMatMap as_matrix(const Tensor& t) {
  return {t.raw(), t.channels(), static_cast<Eigen::Index>(t.voxels())};
}

int channels_at(const EncoderConfig& cfg, int level) { return cfg.base_channels << level; }

// ---------------------------------------------------------------------------
// Parameter layout

struct ConvSlot {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int cin = 0;
  int cout = 0;
};

struct BlockSlot {
  ConvSlot conv;
  bool has_norm = false;
  std::size_t gamma = 0;
  std::size_t beta = 0;
  int stride = 1;
};

struct Layout {
  std::vector<BlockSlot> enc;   // enc[l], l = 0..L-1
  std::vector<BlockSlot> down;  // down[l], l = 1..L-1 (index 0 unused)
  std::vector<BlockSlot> dec;   // dec[l], l = 1..L-1 (index 0 unused)
  std::vector<ConvSlot> up;     // up[l],  l = 1..L-1 (index 0 unused)
  ConvSlot head;
};

class LayoutBuilder {
 public:
  explicit LayoutBuilder(std::vector<NamedTensor>* sink) : sink_(sink) {}

  std::size_t add(const std::string& name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    if (sink_ != nullptr) sink_->push_back({name, std::move(shape), std::vector<double>(n, 0.0)});
    return index_++;
  }

  BlockSlot block(const std::string& name, int cin, int cout, int stride, bool norm) {
    BlockSlot b;
    b.conv = {add(name + ".conv.weight", {cout, cin, 3, 3, 3}), add(name + ".conv.bias", {cout}), cin, cout};
    b.stride = stride;
    b.has_norm = norm;
    if (norm) {
      b.gamma = add(name + ".norm.gamma", {cout});
      b.beta = add(name + ".norm.beta", {cout});
    }
    return b;
  }

 private:
  std::vector<NamedTensor>* sink_;
  std::size_t index_ = 0;
};

Layout build_layout(const EncoderConfig& cfg, std::vector<NamedTensor>* sink) {
  LayoutBuilder lb(sink);
  Layout lay;
  const int L = cfg.levels;
  lay.enc.resize(static_cast<std::size_t>(L));
  lay.down.resize(static_cast<std::size_t>(L));
  lay.dec.resize(static_cast<std::size_t>(L));
  lay.up.resize(static_cast<std::size_t>(L));
  lay.enc[0] = lb.block("enc0", cfg.in_channels, channels_at(cfg, 0), 1, cfg.instance_norm);
  for (int l = 1; l < L; ++l) {
    const std::string s = std::to_string(l);
    lay.down[l] = lb.block("down" + s, channels_at(cfg, l - 1), channels_at(cfg, l), 2, cfg.instance_norm);
    lay.enc[l] = lb.block("enc" + s, channels_at(cfg, l), channels_at(cfg, l), 1, cfg.instance_norm);
  }
  for (int l = L - 1; l >= 1; --l) {
    const std::string s = std::to_string(l);
    const int cin = channels_at(cfg, l), cout = channels_at(cfg, l - 1);
    lay.up[l] = {lb.add("up" + s + ".tconv.weight", {cin, cout, 2, 2, 2}), lb.add("up" + s + ".tconv.bias", {cout}),
                 cin, cout};
    lay.dec[l] = lb.block("dec" + s, 2 * cout, cout, 1, cfg.instance_norm);
  }
  lay.head = {lb.add("head.weight", {cfg.feature_dim, channels_at(cfg, 0)}), lb.add("head.bias", {cfg.feature_dim}),
              channels_at(cfg, 0), cfg.feature_dim};
  return lay;
}

// ---------------------------------------------------------------------------
// 3x3x3 convolution (zero padding 1) via im2col

Dims conv_out_dims(const Dims& in, int stride) {
  return stride == 1 ? in : Dims{in.x / 2, in.y / 2, in.z / 2};
}

// cols: (cin*27) x out_voxels, row = ci*27 + kz*9 + ky*3 + kx.
RowMat im2col(const Tensor& x, int stride) {
  const Dims& d = x.dims();
  const Dims od = conv_out_dims(d, stride);
  const auto nout = static_cast<Eigen::Index>(od.product());
  RowMat cols(static_cast<Eigen::Index>(x.channels()) * kTaps, nout);
  for (int ci = 0; ci < x.channels(); ++ci) {
    const double* src = x.channel(ci).data();
    for (int kz = 0; kz < 3; ++kz)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          double* row = cols.row(ci * kTaps + kz * 9 + ky * 3 + kx).data();
          Eigen::Index col = 0;
          for (std::int64_t oz = 0; oz < od.z; ++oz) {
            const std::int64_t iz = oz * stride + kz - 1;
            const bool zin = iz >= 0 && iz < d.z;
            for (std::int64_t oy = 0; oy < od.y; ++oy) {
              const std::int64_t iy = oy * stride + ky - 1;
              const bool yin = zin && iy >= 0 && iy < d.y;
              const double* line = yin ? src + (iz * d.y + iy) * d.x : nullptr;
              for (std::int64_t ox = 0; ox < od.x; ++ox, ++col) {
                const std::int64_t ix = ox * stride + kx - 1;
                row[col] = (yin && ix >= 0 && ix < d.x) ? line[ix] : 0.0;
              }
            }
          }
        }
  }
  return cols;
}

Tensor col2im(const RowMat& dcols, int cin, const Dims& d, int stride) {
  const Dims od = conv_out_dims(d, stride);
  Tensor dx(cin, d);
  for (int ci = 0; ci < cin; ++ci) {
    double* dst = dx.channel(ci).data();
    for (int kz = 0; kz < 3; ++kz)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const double* row = dcols.row(ci * kTaps + kz * 9 + ky * 3 + kx).data();
          Eigen::Index col = 0;
          for (std::int64_t oz = 0; oz < od.z; ++oz) {
            const std::int64_t iz = oz * stride + kz - 1;
            const bool zin = iz >= 0 && iz < d.z;
            for (std::int64_t oy = 0; oy < od.y; ++oy) {
              const std::int64_t iy = oy * stride + ky - 1;
              const bool yin = zin && iy >= 0 && iy < d.y;
              double* line = yin ? dst + (iz * d.y + iy) * d.x : nullptr;
              for (std::int64_t ox = 0; ox < od.x; ++ox, ++col) {
                const std::int64_t ix = ox * stride + kx - 1;
                if (yin && ix >= 0 && ix < d.x) line[ix] += row[col];
              }
            }
          }
        }
  }
  return dx;
}

struct BlockTape {
  Dims in_dims;
  RowMat cols;
  Tensor xhat;                 // normalized conv output (norm only)
  std::vector<double> invstd;  // per channel (norm only)
  Tensor pre_activation;
};

const double* values(const Parameters& p, std::size_t i) { return p.tensors[i].values.data(); }
double* values(Parameters& p, std::size_t i) { return p.tensors[i].values.data(); }

Tensor block_forward(const Parameters& p, const BlockSlot& s, double slope, const Tensor& x, BlockTape& tape) {
  tape.in_dims = x.dims();
  tape.cols = im2col(x, s.stride);
  const ConstMatMap w(values(p, s.conv.weight), s.conv.cout, static_cast<Eigen::Index>(s.conv.cin) * kTaps);
  const Eigen::Map<const Eigen::VectorXd> b(values(p, s.conv.bias), s.conv.cout);
  Tensor z(s.conv.cout, conv_out_dims(x.dims(), s.stride));
  auto zm = as_matrix(z);
  zm.noalias() = w * tape.cols;
  zm.colwise() += b;
  if (s.has_norm) {
    const auto n = static_cast<double>(z.voxels());
    const double* gamma = values(p, s.gamma);
    const double* beta = values(p, s.beta);
    tape.xhat = Tensor(z.channels(), z.dims());
    tape.invstd.assign(static_cast<std::size_t>(z.channels()), 0.0);
    for (int c = 0; c < z.channels(); ++c) {
      auto zc = z.channel(c);
      double mean = 0.0;
      for (double v : zc) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : zc) var += (v - mean) * (v - mean);
      var /= n;
      const double is = 1.0 / std::sqrt(var + kNormEps);
      tape.invstd[static_cast<std::size_t>(c)] = is;
      auto xh = tape.xhat.channel(c);
      for (std::size_t i = 0; i < zc.size(); ++i) {
        xh[i] = (zc[i] - mean) * is;
        zc[i] = gamma[c] * xh[i] + beta[c];
      }
    }
  }
  tape.pre_activation = z;
  for (double& v : z.data()) v = v > 0.0 ? v : slope * v;
  return z;
}

// Accumulates parameter gradients into g; returns the input gradient.
Tensor block_backward(const Parameters& p, const BlockSlot& s, double slope, const BlockTape& tape,
                      Tensor dy, Parameters& g) {
  const auto& pre = tape.pre_activation.data();
  auto dyd = dy.data();
  for (std::size_t i = 0; i < dyd.size(); ++i) dyd[i] *= pre[i] > 0.0 ? 1.0 : slope;
  if (s.has_norm) {
    const auto n = static_cast<double>(dy.voxels());
    const double* gamma = values(p, s.gamma);
    double* dgamma = values(g, s.gamma);
    double* dbeta = values(g, s.beta);
    for (int c = 0; c < dy.channels(); ++c) {
      auto dc = dy.channel(c);
      const auto xh = tape.xhat.channel(c);
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (std::size_t i = 0; i < dc.size(); ++i) {
        sum_dy += dc[i];
        sum_dy_xh += dc[i] * xh[i];
      }
      dgamma[c] += sum_dy_xh;
      dbeta[c] += sum_dy;
      // dxhat = gamma * dy; dz = invstd/n * (n*dxhat - sum dxhat - xhat * sum(dxhat*xhat))
      const double k = gamma[c] * tape.invstd[static_cast<std::size_t>(c)] / n;
      for (std::size_t i = 0; i < dc.size(); ++i) {
        dc[i] = k * (n * dc[i] - sum_dy - xh[i] * sum_dy_xh);
      }
    }
  }
  const auto dz = as_matrix(std::as_const(dy));
  const auto k = static_cast<Eigen::Index>(s.conv.cin) * kTaps;
  MatMap dw(values(g, s.conv.weight), s.conv.cout, k);
  dw.noalias() += dz * tape.cols.transpose();
  Eigen::Map<Eigen::VectorXd> db(values(g, s.conv.bias), s.conv.cout);
  db += dz.rowwise().sum();
  const ConstMatMap w(values(p, s.conv.weight), s.conv.cout, k);
  const RowMat dcols = w.transpose() * dz;
  return col2im(dcols, s.conv.cin, tape.in_dims, s.stride);
}

// 2x2x2 stride-2 transposed convolution. Weight shape (cin, cout, 2, 2, 2).
Tensor up_forward(const Parameters& p, const ConvSlot& s, const Tensor& x) {
  const Dims& d = x.dims();
  const Dims od{2 * d.x, 2 * d.y, 2 * d.z};
  const ConstMatMap m(values(p, s.weight), s.cin, static_cast<Eigen::Index>(s.cout) * 8);
  const RowMat y = m.transpose() * as_matrix(x);  // (cout*8) x vin
  Tensor out(s.cout, od);
  const double* bias = values(p, s.bias);
  for (int co = 0; co < s.cout; ++co) {
    double* dst = out.channel(co).data();
    for (int k = 0; k < 8; ++k) {
      const int a = k >> 2, b = (k >> 1) & 1, c = k & 1;
      const double* row = y.row(co * 8 + k).data();
      std::size_t v = 0;
      for (std::int64_t z = 0; z < d.z; ++z)
        for (std::int64_t yy = 0; yy < d.y; ++yy)
          for (std::int64_t xx = 0; xx < d.x; ++xx, ++v) {
            dst[((2 * z + a) * od.y + (2 * yy + b)) * od.x + (2 * xx + c)] = row[v] + bias[co];
          }
    }
  }
  return out;
}

Tensor up_backward(const Parameters& p, const ConvSlot& s, const Tensor& x, const Tensor& dout, Parameters& g) {
  const Dims& d = x.dims();
  const Dims& od = dout.dims();
  RowMat dy(static_cast<Eigen::Index>(s.cout) * 8, static_cast<Eigen::Index>(x.voxels()));
  double* dbias = values(g, s.bias);
  for (int co = 0; co < s.cout; ++co) {
    const double* src = dout.channel(co).data();
    double acc = 0.0;
    for (std::size_t i = 0; i < dout.voxels(); ++i) acc += src[i];
    dbias[co] += acc;
    for (int k = 0; k < 8; ++k) {
      const int a = k >> 2, b = (k >> 1) & 1, c = k & 1;
      double* row = dy.row(co * 8 + k).data();
      std::size_t v = 0;
      for (std::int64_t z = 0; z < d.z; ++z)
        for (std::int64_t yy = 0; yy < d.y; ++yy)
          for (std::int64_t xx = 0; xx < d.x; ++xx, ++v) {
            row[v] = src[((2 * z + a) * od.y + (2 * yy + b)) * od.x + (2 * xx + c)];
          }
    }
  }
  const auto xm = as_matrix(x);
  MatMap dm(values(g, s.weight), s.cin, static_cast<Eigen::Index>(s.cout) * 8);
  dm.noalias() += xm * dy.transpose();
  const ConstMatMap m(values(p, s.weight), s.cin, static_cast<Eigen::Index>(s.cout) * 8);
  Tensor dx(s.cin, d);
  as_matrix(dx).noalias() = m * dy;
  return dx;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  Tensor out(a.channels() + b.channels(), a.dims());
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

std::pair<Tensor, Tensor> split(const Tensor& t, int first_channels) {
  Tensor a(first_channels, t.dims());
  Tensor b(t.channels() - first_channels, t.dims());
  std::copy(t.data().begin(), t.data().begin() + static_cast<std::ptrdiff_t>(a.size()), a.data().begin());
  std::copy(t.data().begin() + static_cast<std::ptrdiff_t>(a.size()), t.data().end(), b.data().begin());
  return {std::move(a), std::move(b)};
}

void add_into(Tensor& acc, const Tensor& t) {
  if (acc.size() == 0) {
    acc = t;
    return;
  }
  auto a = acc.data();
  const auto s = t.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += s[i];
}

}  // namespace

struct ForwardTape {
  EncoderConfig config;
  Tensor input;
  std::vector<BlockTape> enc, down, dec;
  std::vector<Tensor> up_input;
  std::vector<int> skip_channels;
  Tensor head_input;
};

namespace {

Layout layout_of(const Parameters& params) {
  validate(params.config);
  Layout lay = build_layout(params.config, nullptr);
  if (params.tensors.size() != lay.head.bias + 1) {
    fail(ErrorCode::kConfigMismatch, "parameter set does not match its encoder config");
  }
  return lay;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public API

void validate(const EncoderConfig& cfg) {
  if (cfg.levels < 1 || cfg.levels > 6) fail(ErrorCode::kInvalidArgument, "encoder levels must be in [1, 6]");
  if (cfg.base_channels < 1 || cfg.feature_dim < 1 || cfg.in_channels < 1) {
    fail(ErrorCode::kInvalidArgument, "encoder channel counts must be >= 1");
  }
  if (!(cfg.leaky_slope >= 0.0) || cfg.leaky_slope >= 1.0) {
    fail(ErrorCode::kInvalidArgument, "leaky slope must be in [0, 1)");
  }
}

void check_patch_dims(const EncoderConfig& cfg, const Dims& dims) {
  const std::int64_t f = std::int64_t{1} << (cfg.levels - 1);
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < f || dims[a] % f != 0) {
      fail(ErrorCode::kInvalidArgument, "patch dims " + to_string(dims) + " not divisible by " +
                                            std::to_string(f) + " for " + std::to_string(cfg.levels) +
                                            " levels");
    }
  }
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

const NamedTensor* Parameters::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

NamedTensor* Parameters::find(const std::string& name) {
  for (auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

Parameters Parameters::zeros_like() const {
  Parameters z = *this;
  for (auto& t : z.tensors) std::fill(t.values.begin(), t.values.end(), 0.0);
  return z;
}

bool Parameters::same_layout(const Parameters& o) const {
  if (tensors.size() != o.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name != o.tensors[i].name || tensors[i].shape != o.tensors[i].shape) return false;
  }
  return true;
}

void Parameters::add_scaled(const Parameters& o, double s) {
  if (!same_layout(o)) fail(ErrorCode::kInvalidArgument, "parameter layouts differ");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& a = tensors[i].values;
    const auto& b = o.tensors[i].values;
    for (std::size_t j = 0; j < a.size(); ++j) a[j] += s * b[j];
  }
}

void Parameters::scale(double s) {
  for (auto& t : tensors)
    for (double& v : t.values) v *= s;
}

double Parameters::dot(const Parameters& o) const {
  if (!same_layout(o)) fail(ErrorCode::kInvalidArgument, "parameter layouts differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& a = tensors[i].values;
    const auto& b = o.tensors[i].values;
    for (std::size_t j = 0; j < a.size(); ++j) acc += a[j] * b[j];
  }
  return acc;
}

double Parameters::squared_norm() const { return dot(*this); }

bool Parameters::all_finite() const {
  for (const auto& t : tensors)
    for (double v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

Parameters init_params(const EncoderConfig& cfg) {
  validate(cfg);
  Parameters p;
  p.config = cfg;
  build_layout(cfg, &p.tensors);
  std::mt19937_64 rng(cfg.seed);
  for (auto& t : p.tensors) {
    const bool is_weight = t.name.ends_with(".weight");
    const bool is_gamma = t.name.ends_with(".gamma");
    if (is_gamma) {
      std::fill(t.values.begin(), t.values.end(), 1.0);
    } else if (is_weight) {
      // Fan-in: cin * kernel volume. Transposed conv shape is (cin, cout, 2,2,2).
      const bool transposed = t.name.find(".tconv.") != std::string::npos;
      std::size_t fan_in = 1;
      if (transposed) {
        fan_in = static_cast<std::size_t>(t.shape[0]);
      } else {
        for (std::size_t i = 1; i < t.shape.size(); ++i) fan_in *= static_cast<std::size_t>(t.shape[i]);
      }
      const double gain = std::sqrt(2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope));
      std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
      for (double& v : t.values) v = dist(rng);
    }
  }
  return p;
}

std::size_t expected_parameter_count(const EncoderConfig& cfg) {
  validate(cfg);
  auto block = [&](std::size_t cin, std::size_t cout) {
    return cout * cin * 27 + cout + (cfg.instance_norm ? 2 * cout : 0);
  };
  const auto c = [&](int l) { return static_cast<std::size_t>(channels_at(cfg, l)); };
  std::size_t n = block(static_cast<std::size_t>(cfg.in_channels), c(0));
  for (int l = 1; l < cfg.levels; ++l) {
    n += block(c(l - 1), c(l)) + block(c(l), c(l));        // down + enc
    n += c(l) * c(l - 1) * 8 + c(l - 1);                   // up
    n += block(2 * c(l - 1), c(l - 1));                    // dec
  }
  n += static_cast<std::size_t>(cfg.feature_dim) * c(0) + static_cast<std::size_t>(cfg.feature_dim);
  return n;
}

TapedForward forward_taped(const Parameters& params, const Tensor& input) {
  const EncoderConfig& cfg = params.config;
  const Layout lay = layout_of(params);
  if (input.channels() != cfg.in_channels) {
    fail(ErrorCode::kInvalidArgument, "input has " + std::to_string(input.channels()) + " channels, encoder expects " +
                                          std::to_string(cfg.in_channels));
  }
  check_patch_dims(cfg, input.dims());
  for (double v : input.data()) {
    if (!std::isfinite(v)) fail(ErrorCode::kInvalidArgument, "non-finite input intensity");
  }
  const int L = cfg.levels;
  auto tape = std::make_shared<ForwardTape>();
  tape->config = cfg;
  tape->input = input;
  tape->enc.resize(static_cast<std::size_t>(L));
  tape->down.resize(static_cast<std::size_t>(L));
  tape->dec.resize(static_cast<std::size_t>(L));
  tape->up_input.resize(static_cast<std::size_t>(L));
  tape->skip_channels.resize(static_cast<std::size_t>(L));

  std::vector<Tensor> e(static_cast<std::size_t>(L));
  e[0] = block_forward(params, lay.enc[0], cfg.leaky_slope, input, tape->enc[0]);
  for (int l = 1; l < L; ++l) {
    const Tensor d = block_forward(params, lay.down[l], cfg.leaky_slope, e[l - 1], tape->down[l]);
    e[l] = block_forward(params, lay.enc[l], cfg.leaky_slope, d, tape->enc[l]);
  }
  Tensor h = e[L - 1];
  for (int l = L - 1; l >= 1; --l) {
    tape->up_input[l] = h;
    const Tensor u = up_forward(params, lay.up[l], h);
    tape->skip_channels[l] = u.channels();
    h = block_forward(params, lay.dec[l], cfg.leaky_slope, concat(u, e[l - 1]), tape->dec[l]);
  }
  tape->head_input = h;
  const ConstMatMap w(values(params, lay.head.weight), lay.head.cout, lay.head.cin);
  const Eigen::Map<const Eigen::VectorXd> b(values(params, lay.head.bias), lay.head.cout);
  FeatureMap out(cfg.feature_dim, input.dims());
  auto om = as_matrix(out);
  om.noalias() = w * as_matrix(h);
  om.colwise() += b;
  return {std::move(out), std::move(tape)};
}

FeatureMap forward(const Parameters& params, const Tensor& input) {
  return forward_taped(params, input).features;
}

FeatureMap forward(const Parameters& params, const Volume3D& patch) {
  return forward(params, Tensor::from_image(patch));
}

EncoderGradient backward(const Parameters& params, const ForwardTape& tape, const FeatureMap& cotangent) {
  const EncoderConfig& cfg = params.config;
  if (!(cfg == tape.config)) fail(ErrorCode::kConfigMismatch, "tape recorded with a different encoder config");
  const Layout lay = layout_of(params);
  if (cotangent.channels() != cfg.feature_dim || cotangent.dims() != tape.input.dims()) {
    fail(ErrorCode::kInvalidArgument, "cotangent shape does not match the feature map");
  }
  const int L = cfg.levels;
  Parameters g = params.zeros_like();

  // Head.
  const auto dyo = as_matrix(cotangent);
  MatMap dwh(values(g, lay.head.weight), lay.head.cout, lay.head.cin);
  dwh.noalias() += dyo * as_matrix(tape.head_input).transpose();
  Eigen::Map<Eigen::VectorXd> dbh(values(g, lay.head.bias), lay.head.cout);
  dbh += dyo.rowwise().sum();
  const ConstMatMap wh(values(params, lay.head.weight), lay.head.cout, lay.head.cin);
  Tensor dh(lay.head.cin, tape.head_input.dims());
  as_matrix(dh).noalias() = wh.transpose() * dyo;

  std::vector<Tensor> de(static_cast<std::size_t>(L));
  for (int l = 1; l < L; ++l) {
    const Tensor dcat = block_backward(params, lay.dec[l], cfg.leaky_slope, tape.dec[l], std::move(dh), g);
    auto [du, dskip] = split(dcat, tape.skip_channels[l]);
    add_into(de[l - 1], dskip);
    dh = up_backward(params, lay.up[l], tape.up_input[l], du, g);
  }
  add_into(de[L - 1], dh);
  for (int l = L - 1; l >= 1; --l) {
    const Tensor dd = block_backward(params, lay.enc[l], cfg.leaky_slope, tape.enc[l], std::move(de[l]), g);
    add_into(de[l - 1], block_backward(params, lay.down[l], cfg.leaky_slope, tape.down[l], dd, g));
  }
  Tensor dx = block_backward(params, lay.enc[0], cfg.leaky_slope, tape.enc[0], std::move(de[0]), g);
  return {std::move(g), std::move(dx)};
}

EncoderGradient backward(const Parameters& params, const Tensor& input, const FeatureMap& cotangent) {
  const auto fwd = forward_taped(params, input);
  return backward(params, *fwd.tape, cotangent);
}

EncoderGradient backward(const Parameters& params, const Volume3D& patch, const FeatureMap& cotangent) {
  return backward(params, Tensor::from_image(patch), cotangent);
}

}  // namespace protoseg
