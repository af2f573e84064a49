#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "protoseg/tensor.hpp"
#include "protoseg/volume.hpp"

namespace protoseg {

struct LossConfig {
  double w_ce = 0.6;
  double w_dice = 0.7;
  double smooth = 1e-5;
};

/// Scalar loss plus its gradient with respect to the logits whose softmax produced `probs`.
struct LossValue {
  double value = 0.0;
  Tensor grad_logits;
};

/// Mean over voxels of -log p(gt). Channel k of `probs` is class k; gt labels index channels.
LossValue ce_loss(const Tensor& probs, const LabelMask& gt);

/// Soft Dice on the foreground probability 1 - p(background) against gt > 0:
/// 1 - (2 sum p*g + eps) / (sum p + sum g + eps).
LossValue dice_loss(const Tensor& probs, const LabelMask& gt, double smooth = 1e-5);

LossValue hybrid_loss(const Tensor& probs, const LabelMask& gt, const LossConfig& cfg = {});

/// Pull a gradient with respect to probabilities back through the channel softmax.
Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs);

// ---------------------------------------------------------------------------
// Hard-mask metrics. Masks are binarised (label > 0 is foreground). A ratio whose
// numerator and denominator are both zero evaluates to 1.

struct Confusion {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
};

Confusion confusion(const LabelMask& pred, const LabelMask& gt);

double dice_coefficient(const LabelMask& pred, const LabelMask& gt);
double sensitivity(const LabelMask& pred, const LabelMask& gt);
double precision(const LabelMask& pred, const LabelMask& gt);
double iou(const LabelMask& pred, const LabelMask& gt);

struct CaseMetrics {
  std::string id;
  double dice = 0.0;
  double sensitivity = 0.0;
  double precision = 0.0;
  double iou = 0.0;
};

CaseMetrics evaluate_case(std::string id, const LabelMask& pred, const LabelMask& gt);
CaseMetrics metrics_from_confusion(std::string id, const Confusion& c);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // population standard deviation
};

struct MetricsReport {
  std::string label;
  std::vector<CaseMetrics> cases;
  MeanSd dice, sensitivity, precision, iou;
};

/// Arithmetic mean and population SD per metric. Throws on empty input.
MetricsReport aggregate(std::vector<CaseMetrics> cases, std::string label = {});

/// "0.66 (0.02)"
std::string format_paren(const MeanSd& m, int digits = 2);
/// "0.62±0.03"
std::string format_pm(const MeanSd& m, int digits = 2);

/// Aligned text table with one row per report: Method | DC | Sensitivity | Precision | IoU.
std::string format_table(const std::vector<MetricsReport>& rows);

std::string report_to_json(const MetricsReport& r);
void save_report(const MetricsReport& r, const std::filesystem::path& path);
MetricsReport load_report(const std::filesystem::path& path);

}  // namespace protoseg
