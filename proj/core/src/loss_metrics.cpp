#include "protoseg/loss_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace protoseg {

namespace {

constexpr double kLogClamp = 1e-12;

void check_probs(const Tensor& probs, const LabelMask& gt) {
  if (probs.dims() != gt.dims()) {
    fail(ErrorCode::kInvalidArgument, "probabilities " + to_string(probs.dims()) + " vs gt " + to_string(gt.dims()));
  }
  if (probs.channels() < 2) fail(ErrorCode::kInvalidArgument, "loss needs at least two channels");
  for (std::uint8_t l : gt.data()) {
    if (l >= probs.channels()) fail(ErrorCode::kInvalidArgument, "gt label exceeds channel count");
  }
}

double ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return 1.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs) {
  Tensor g(probs.channels(), probs.dims());
  const int k = probs.channels();
  for (std::size_t v = 0; v < probs.voxels(); ++v) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += probs(j, v) * grad_probs(j, v);
    for (int j = 0; j < k; ++j) g(j, v) = probs(j, v) * (grad_probs(j, v) - s);
  }
  return g;
}

LossValue ce_loss(const Tensor& probs, const LabelMask& gt) {
  check_probs(probs, gt);
  const auto n = static_cast<double>(probs.voxels());
  LossValue out{0.0, Tensor(probs.channels(), probs.dims())};
  for (std::size_t v = 0; v < probs.voxels(); ++v) {
    const int c = gt[v];
    const double p = probs(c, v);
    out.value -= std::log(std::max(p, kLogClamp));
    // d(-log p_c)/dz_j = p_j - [j == c]; zero where the clamp is active.
    if (p >= kLogClamp) {
      for (int j = 0; j < probs.channels(); ++j) out.grad_logits(j, v) = (probs(j, v) - (j == c ? 1.0 : 0.0)) / n;
    }
  }
  out.value /= n;
  return out;
}

LossValue dice_loss(const Tensor& probs, const LabelMask& gt, double smooth) {
  check_probs(probs, gt);
  if (!(smooth > 0.0)) fail(ErrorCode::kInvalidArgument, "dice smoothing must be positive");
  double inter = 0.0, psum = 0.0, gsum = 0.0;
  for (std::size_t v = 0; v < probs.voxels(); ++v) {
    const double p = 1.0 - probs(0, v);
    const double g = gt[v] != 0 ? 1.0 : 0.0;
    inter += p * g;
    psum += p;
    gsum += g;
  }
  const double num = 2.0 * inter + smooth;
  const double den = psum + gsum + smooth;
  LossValue out{1.0 - num / den, Tensor(probs.channels(), probs.dims())};
  // dL/dp_fg(v) = -(2 g(v) den - num) / den^2 ; p_fg = 1 - p_0 so dL/dp_0 = -dL/dp_fg.
  Tensor grad_probs(probs.channels(), probs.dims());
  for (std::size_t v = 0; v < probs.voxels(); ++v) {
    const double g = gt[v] != 0 ? 1.0 : 0.0;
    const double dfg = -(2.0 * g * den - num) / (den * den);
    grad_probs(0, v) = -dfg;
  }
  out.grad_logits = softmax_backward(probs, grad_probs);
  return out;
}

LossValue hybrid_loss(const Tensor& probs, const LabelMask& gt, const LossConfig& cfg) {
  if (cfg.w_ce < 0.0 || cfg.w_dice < 0.0) fail(ErrorCode::kInvalidArgument, "loss weights must be >= 0");
  LossValue ce = ce_loss(probs, gt);
  LossValue dl = dice_loss(probs, gt, cfg.smooth);
  LossValue out{cfg.w_ce * ce.value + cfg.w_dice * dl.value, std::move(ce.grad_logits)};
  auto g = out.grad_logits.data();
  const auto gd = dl.grad_logits.data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = cfg.w_ce * g[i] + cfg.w_dice * gd[i];
  return out;
}

Confusion confusion(const LabelMask& pred, const LabelMask& gt) {
  if (pred.dims() != gt.dims()) {
    fail(ErrorCode::kInvalidArgument, "prediction " + to_string(pred.dims()) + " vs gt " + to_string(gt.dims()));
  }
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

CaseMetrics metrics_from_confusion(std::string id, const Confusion& c) {
  return {std::move(id), ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn), ratio(c.tp, c.tp + c.fn), ratio(c.tp, c.tp + c.fp),
          ratio(c.tp, c.tp + c.fp + c.fn)};
}

CaseMetrics evaluate_case(std::string id, const LabelMask& pred, const LabelMask& gt) {
  return metrics_from_confusion(std::move(id), confusion(pred, gt));
}

double dice_coefficient(const LabelMask& pred, const LabelMask& gt) { return evaluate_case({}, pred, gt).dice; }
double sensitivity(const LabelMask& pred, const LabelMask& gt) { return evaluate_case({}, pred, gt).sensitivity; }
double precision(const LabelMask& pred, const LabelMask& gt) { return evaluate_case({}, pred, gt).precision; }
double iou(const LabelMask& pred, const LabelMask& gt) { return evaluate_case({}, pred, gt).iou; }

MetricsReport aggregate(std::vector<CaseMetrics> cases, std::string label) {
  if (cases.empty()) fail(ErrorCode::kInvalidArgument, "cannot aggregate zero cases");
  auto stat = [&](double CaseMetrics::*field) {
    double mean = 0.0;
    for (const auto& c : cases) mean += c.*field;
    mean /= static_cast<double>(cases.size());
    double var = 0.0;
    for (const auto& c : cases) var += (c.*field - mean) * (c.*field - mean);
    return MeanSd{mean, std::sqrt(var / static_cast<double>(cases.size()))};
  };
  MetricsReport r;
  r.label = std::move(label);
  r.dice = stat(&CaseMetrics::dice);
  r.sensitivity = stat(&CaseMetrics::sensitivity);
  r.precision = stat(&CaseMetrics::precision);
  r.iou = stat(&CaseMetrics::iou);
  r.cases = std::move(cases);
  return r;
}

std::string format_paren(const MeanSd& m, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f (%.*f)", digits, m.mean, digits, m.sd);
  return buf;
}

std::string format_pm(const MeanSd& m, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f±%.*f", digits, m.mean, digits, m.sd);
  return buf;
}

std::string format_table(const std::vector<MetricsReport>& rows) {
  std::size_t w0 = 7;
  for (const auto& r : rows) w0 = std::max(w0, r.label.size());
  const char* headers[] = {"DC (SD)", "Sensitivity (SD)", "Precision (SD)", "IoU (SD)"};
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s | %-12s | %-16s | %-14s | %-12s\n", static_cast<int>(w0), "Method", headers[0],
                headers[1], headers[2], headers[3]);
  os << buf;
  os << std::string(w0, '-') << "-+-" << std::string(12, '-') << "-+-" << std::string(16, '-') << "-+-"
     << std::string(14, '-') << "-+-" << std::string(12, '-') << "\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s | %-12s | %-16s | %-14s | %-12s\n", static_cast<int>(w0), r.label.c_str(),
                  format_paren(r.dice).c_str(), format_paren(r.sensitivity).c_str(),
                  format_paren(r.precision).c_str(), format_paren(r.iou).c_str());
    os << buf;
  }
  return os.str();
}

namespace {

nlohmann::json mean_sd_json(const MeanSd& m) { return {{"mean", m.mean}, {"sd", m.sd}}; }
MeanSd mean_sd_from(const nlohmann::json& j) { return {j.at("mean").get<double>(), j.at("sd").get<double>()}; }

}  // namespace

std::string report_to_json(const MetricsReport& r) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : r.cases) {
    cases.push_back({{"id", c.id},
                     {"dice", c.dice},
                     {"sensitivity", c.sensitivity},
                     {"precision", c.precision},
                     {"iou", c.iou}});
  }
  nlohmann::json j = {{"label", r.label},
                      {"cases", cases},
                      {"aggregate",
                       {{"dice", mean_sd_json(r.dice)},
                        {"sensitivity", mean_sd_json(r.sensitivity)},
                        {"precision", mean_sd_json(r.precision)},
                        {"iou", mean_sd_json(r.iou)}}},
                      {"summary",
                       {{"dice", format_pm(r.dice)},
                        {"sensitivity", format_pm(r.sensitivity)},
                        {"precision", format_pm(r.precision)},
                        {"iou", format_pm(r.iou)}}},
                      {"conventions", "0/0 ratios evaluate to 1; SD is the population SD"}};
  return j.dump(2);
}

void save_report(const MetricsReport& r, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << report_to_json(r) << "\n";
}

MetricsReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    MetricsReport r;
    r.label = j.value("label", std::string());
    for (const auto& c : j.at("cases")) {
      r.cases.push_back({c.at("id").get<std::string>(), c.at("dice").get<double>(), c.at("sensitivity").get<double>(),
                         c.at("precision").get<double>(), c.at("iou").get<double>()});
    }
    const auto& a = j.at("aggregate");
    r.dice = mean_sd_from(a.at("dice"));
    r.sensitivity = mean_sd_from(a.at("sensitivity"));
    r.precision = mean_sd_from(a.at("precision"));
    r.iou = mean_sd_from(a.at("iou"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, "bad metrics report: " + std::string(e.what()));
  }
}

}  // namespace protoseg
