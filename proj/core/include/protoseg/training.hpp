#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "protoseg/augment.hpp"
#include "protoseg/checkpoint.hpp"
#include "protoseg/dataset.hpp"
#include "protoseg/encoder.hpp"
#include "protoseg/episodes.hpp"
#include "protoseg/loss_metrics.hpp"
#include "protoseg/patching.hpp"
#include "protoseg/prototype_head.hpp"

namespace protoseg {

// ---------------------------------------------------------------------------
// Learning-rate schedules

/// lr0 * (1 - t / max_iter)^exponent, clamped to 0 for t >= max_iter.
double poly_lr(double lr0, std::int64_t t, std::int64_t max_iter, double exponent = 0.9);

/// Closed-form cosine annealing at scheduler step t (periodic with period 2 * t_max).
double cosine_annealing_lr(double lr0, std::int64_t t, std::int64_t t_max, double eta_min);

// ---------------------------------------------------------------------------
// Episode objective

struct LabeledPatch {
  Volume3D image;
  LabelMask mask;
};

/// Concrete episode. support[c] are the K shots of class c with binary masks;
/// query masks carry labels in {0, c+1}.
struct EpisodeBatch {
  std::vector<std::vector<LabeledPatch>> support;
  std::vector<LabeledPatch> query;
};

struct HeadConfig {
  double cosine_scale = kDefaultCosineScale;
  LossConfig loss;
  /// Treat prototypes as constants when differentiating.
  bool stop_gradient_prototypes = false;
};

struct EpisodeLoss {
  double loss = 0.0;
  Parameters grad;
};

/// Prototypes ordered [background, class 1, ..., class C]. The background prototype
/// pools label-0 voxels across every support patch.
std::vector<Prototype> compute_prototypes(const Parameters& params,
                                          const std::vector<std::vector<LabeledPatch>>& support);

/// Mean hybrid loss over the queries of one episode.
double episode_loss(const Parameters& params, const EpisodeBatch& batch, const HeadConfig& head = {});
/// Loss and its gradient with respect to every encoder parameter.
EpisodeLoss episode_loss_and_gradient(const Parameters& params, const EpisodeBatch& batch,
                                      const HeadConfig& head = {});

/// Materialise pool indices into patches, augmenting every patch with `rng` when `augment_cfg`
/// is given. Support masks are binarised; query masks become {0, label}.
EpisodeBatch materialize(const PatchPool& pool, const Episode& ep, const AugmentConfig* augment_cfg,
                         std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Inference

/// Annotated support patches used at inference, one inner vector per class.
struct SupportSet {
  std::vector<std::vector<LabeledPatch>> classes;
  std::vector<PatchId> ids;
  std::uint64_t seed = 0;
};

/// Draw `ways` x `shots` support patches from a pool without augmentation. Under the
/// subject framing each class is one subject; otherwise a single class is drawn from
/// all patches.
SupportSet make_support(const PatchPool& pool, int ways, int shots, ClassFraming framing, std::uint64_t seed);

/// Hard labels for one patch given precomputed prototypes.
Prediction segment_patch(const Parameters& params, const std::vector<Prototype>& prototypes,
                         const Volume3D& image, double cosine_scale = kDefaultCosineScale);

/// Tile, segment each tile with prototypes computed once from `support`, and reassemble.
LabelMask segment_volume(const Parameters& params, const SupportSet& support, const Volume3D& vol,
                         Dims patch_size, TilingMode tiling = TilingMode::kClamped,
                         double cosine_scale = kDefaultCosineScale);

/// Supervised counterpart: the encoder output is read directly as class logits.
LabelMask segment_volume_supervised(const Parameters& params, const Volume3D& vol, Dims patch_size,
                                    TilingMode tiling = TilingMode::kClamped);

/// Mean DC of binarised predictions over pool patches.
double patch_level_dc(const Parameters& params, const SupportSet& support, const PatchPool& patches,
                      double cosine_scale = kDefaultCosineScale);
double patch_level_dc_supervised(const Parameters& params, const PatchPool& patches);

/// Volume-level metrics with binarised predictions, one case per subject.
MetricsReport evaluate_volumes(const Parameters& params, const SupportSet& support,
                               const std::vector<Subject>& subjects, Dims patch_size, TilingMode tiling,
                               double cosine_scale, std::string label = {});
MetricsReport evaluate_volumes_supervised(const Parameters& params, const std::vector<Subject>& subjects,
                                          Dims patch_size, TilingMode tiling, std::string label = {});

// ---------------------------------------------------------------------------
// Training loops

enum class ValidationLevel { kPatch, kVolume };
const char* to_string(ValidationLevel v);
ValidationLevel validation_level_from_string(const std::string& s);

struct TrainConfig {
  EncoderConfig encoder;
  EpisodeConfig episode;
  HeadConfig head;
  AugmentConfig augment;
  PatchSpec patch;
  std::int64_t max_iterations = 20000;
  double initial_lr = 0.01;
  double momentum = 0.99;
  double poly_exponent = 0.9;
  std::int64_t val_interval = 250;
  std::int64_t early_stop_patience = 1000;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip_norm = 12.0;
  ValidationLevel validation = ValidationLevel::kPatch;
  TilingMode tiling = TilingMode::kClamped;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

/// Supervised encoder-decoder baseline trained per patch with Dice loss and Adam.
struct BaselineConfig {
  EncoderConfig encoder{4, 8, 2, 1, 0.01, true, 0};
  AugmentConfig augment;
  PatchSpec patch;
  std::int64_t max_iterations = 20000;
  int batch_size = 2;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t cosine_t_max = 5;
  double eta_min = 1e-6;
  /// Iterations per scheduler step; 0 means one pass over the training pool.
  std::int64_t scheduler_step_every = 0;
  double dice_smooth = 1e-5;
  std::int64_t val_interval = 250;
  std::int64_t early_stop_patience = 1000;
  TilingMode tiling = TilingMode::kClamped;
  std::uint64_t seed = 0;
};

void validate(const BaselineConfig& cfg);

struct TrainingData {
  PatchPool train;
  /// Patch-level validation pool.
  PatchPool val;
  /// Volumes for volume-level validation.
  std::vector<Subject> val_subjects;
};

/// Training data from subject lists: patch pools sampled with `spec` and `seed`.
TrainingData make_training_data(const std::vector<Subject>& train, const std::vector<Subject>& val,
                                const PatchSpec& spec, std::uint64_t seed);

struct HistoryEntry {
  std::int64_t iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_dc;
};

struct TrainResult {
  /// Parameters with the best validation DC (the final ones when nothing was validated).
  Checkpoint checkpoint;
  std::vector<HistoryEntry> history;
  bool early_stopped = false;
  std::int64_t iterations_run = 0;
};

struct TrainOptions {
  /// Append one JSON line {iter, loss, lr, val_dc} per iteration when set.
  std::filesystem::path log_path;
  /// Called after every iteration.
  std::function<void(const HistoryEntry&)> on_iteration;
};

/// Episodic training: episode -> forward support and query -> prototypes -> similarity
/// -> softmax -> hybrid loss -> SGD with momentum under the polynomial schedule.
/// Throws ErrorCode::kDiverged on a non-finite loss.
TrainResult train_fewshot(const TrainingData& data, const TrainConfig& cfg, const TrainOptions& opts = {});

TrainResult train_supervised_baseline(const TrainingData& data, const BaselineConfig& cfg,
                                      const TrainOptions& opts = {});

/// Support used for validation and evaluation of a few-shot model.
SupportSet default_support(const PatchPool& train_pool, const TrainConfig& cfg);

/// JSON object stored in few-shot checkpoints' meta field: cosine scale, episode shape,
/// framing, support seed, patch spec and pool seed, enough to rebuild default_support.
std::string fewshot_meta(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Cross-validation

struct CrossValResult {
  std::vector<MetricsReport> folds;
  /// One case per fold (its mean metrics); mean and SD across folds.
  MetricsReport aggregate;
};

/// Per fold: the last `val_subjects` subjects of the fold's training set are held out for
/// validation, the rest train the model; every test subject is segmented once.
CrossValResult cross_validate(const std::vector<Subject>& subjects, const std::vector<Fold>& folds,
                              const TrainConfig& cfg, int val_subjects = 1);

}  // namespace protoseg
