#include "protoseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json_config.hpp"

namespace protoseg {

double poly_lr(double lr0, std::int64_t t, std::int64_t max_iter, double exponent) {
  if (max_iter <= 0) fail(ErrorCode::kInvalidArgument, "poly_lr: max_iter must be positive");
  if (t <= 0) return lr0;
  if (t >= max_iter) return 0.0;
  return lr0 * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(max_iter), exponent);
}

double cosine_annealing_lr(double lr0, std::int64_t t, std::int64_t t_max, double eta_min) {
  if (t_max <= 0) fail(ErrorCode::kInvalidArgument, "cosine_annealing_lr: t_max must be positive");
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(t_max);
  return eta_min + (lr0 - eta_min) * (1.0 + std::cos(phase)) / 2.0;
}

namespace {

void add_params(Parameters& acc, const Parameters& g) { acc.add_scaled(g, 1.0); }

// Flattened view of the support set shared by the forward and backward passes.
struct SupportForward {
  std::vector<std::vector<TapedForward>> taped;  // empty when differentiation is off
  std::vector<std::vector<FeatureMap>> features;
  std::vector<std::vector<LabelMask>> masks;
};

SupportForward forward_support(const Parameters& params, const std::vector<std::vector<LabeledPatch>>& support,
                               bool taped) {
  if (support.empty()) fail(ErrorCode::kInvalidArgument, "support set has no classes");
  SupportForward s;
  s.features.resize(support.size());
  s.masks.resize(support.size());
  if (taped) s.taped.resize(support.size());
  for (std::size_t c = 0; c < support.size(); ++c) {
    if (support[c].empty()) fail(ErrorCode::kInvalidArgument, "support class without shots");
    for (const auto& p : support[c]) {
      const Tensor in = Tensor::from_image(p.image);
      if (taped) {
        s.taped[c].push_back(forward_taped(params, in));
        s.features[c].push_back(s.taped[c].back().features);
      } else {
        s.features[c].push_back(forward(params, in));
      }
      s.masks[c].push_back(binarize(p.mask));
    }
  }
  return s;
}

std::vector<Prototype> prototypes_from(const SupportForward& s) {
  std::vector<FeatureMap> all_f;
  std::vector<LabelMask> all_m;
  for (std::size_t c = 0; c < s.features.size(); ++c) {
    all_f.insert(all_f.end(), s.features[c].begin(), s.features[c].end());
    all_m.insert(all_m.end(), s.masks[c].begin(), s.masks[c].end());
  }
  std::vector<Prototype> protos;
  protos.push_back(background_prototype(all_f, all_m, 1));
  for (std::size_t c = 0; c < s.features.size(); ++c) {
    Prototype p = masked_average_pool(s.features[c], s.masks[c], 1);
    p.class_id = static_cast<int>(c) + 1;
    protos.push_back(std::move(p));
  }
  return protos;
}

void check_query(const LabeledPatch& q, int ways) {
  for (std::uint8_t l : q.mask.data()) {
    if (l > ways) fail(ErrorCode::kInvalidArgument, "query label exceeds the number of support classes");
  }
}

// Hard labels from class logits; ties go to the lower channel.
LabelMask argmax_labels(const Tensor& scores) {
  LabelMask out(scores.dims());
  for (std::size_t v = 0; v < scores.voxels(); ++v) {
    int best = 0;
    for (int k = 1; k < scores.channels(); ++k) {
      if (scores(k, v) > scores(best, v)) best = k;
    }
    out[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace

std::vector<Prototype> compute_prototypes(const Parameters& params,
                                          const std::vector<std::vector<LabeledPatch>>& support) {
  return prototypes_from(forward_support(params, support, false));
}

double episode_loss(const Parameters& params, const EpisodeBatch& batch, const HeadConfig& head) {
  if (batch.query.empty()) fail(ErrorCode::kInvalidArgument, "episode has no queries");
  const auto protos = compute_prototypes(params, batch.support);
  double total = 0.0;
  for (const auto& q : batch.query) {
    check_query(q, static_cast<int>(batch.support.size()));
    const SimilarityMap sim = similarity(forward(params, q.image), protos, head.cosine_scale);
    total += hybrid_loss(softmax_channels(sim.scores), q.mask, head.loss).value;
  }
  return total / static_cast<double>(batch.query.size());
}

EpisodeLoss episode_loss_and_gradient(const Parameters& params, const EpisodeBatch& batch, const HeadConfig& head) {
  if (batch.query.empty()) fail(ErrorCode::kInvalidArgument, "episode has no queries");
  const bool through_support = !head.stop_gradient_prototypes;
  const SupportForward sup = forward_support(params, batch.support, through_support);
  const auto protos = prototypes_from(sup);
  const auto n_q = static_cast<double>(batch.query.size());
  const std::size_t dim = protos.front().vector.size();

  EpisodeLoss out{0.0, params.zeros_like()};
  std::vector<std::vector<double>> dproto(protos.size(), std::vector<double>(dim, 0.0));
  for (const auto& q : batch.query) {
    check_query(q, static_cast<int>(batch.support.size()));
    const TapedForward fq = forward_taped(params, Tensor::from_image(q.image));
    const SimilarityMap sim = similarity(fq.features, protos, head.cosine_scale);
    LossValue lv = hybrid_loss(softmax_channels(sim.scores), q.mask, head.loss);
    out.loss += lv.value / n_q;
    for (double& g : lv.grad_logits.data()) g /= n_q;
    const SimilarityGradient sg = similarity_backward(fq.features, protos, head.cosine_scale, lv.grad_logits);
    add_params(out.grad, backward(params, *fq.tape, sg.query).params);
    for (std::size_t k = 0; k < protos.size(); ++k)
      for (std::size_t d = 0; d < dim; ++d) dproto[k][d] += sg.prototypes[k][d];
  }
  if (!through_support) return out;

  // Background pools over every support patch; class c pools over its own shots.
  std::vector<LabelMask> all_m;
  std::vector<FeatureMap> all_df;
  for (std::size_t c = 0; c < sup.features.size(); ++c) {
    for (std::size_t k = 0; k < sup.features[c].size(); ++k) {
      all_m.push_back(sup.masks[c][k]);
      all_df.emplace_back(sup.features[c][k].channels(), sup.features[c][k].dims());
    }
  }
  pool_backward(all_m, 1, true, dproto[0], all_df);
  std::size_t flat = 0;
  for (std::size_t c = 0; c < sup.features.size(); ++c) {
    std::span<FeatureMap> df_c(all_df.data() + flat, sup.features[c].size());
    pool_backward(sup.masks[c], 1, false, dproto[c + 1], df_c);
    for (std::size_t k = 0; k < sup.features[c].size(); ++k) {
      add_params(out.grad, backward(params, *sup.taped[c][k].tape, df_c[k]).params);
    }
    flat += sup.features[c].size();
  }
  return out;
}

EpisodeBatch materialize(const PatchPool& pool, const Episode& ep, const AugmentConfig* augment_cfg,
                         std::mt19937_64& rng) {
  auto take = [&](std::size_t idx) {
    if (idx >= pool.size()) fail(ErrorCode::kInvalidArgument, "episode index outside the pool");
    const PoolPatch& p = pool[idx];
    if (augment_cfg == nullptr) return LabeledPatch{p.image, binarize(p.mask)};
    ImageMaskPair a = augment(p.image, p.mask, *augment_cfg, rng);
    return LabeledPatch{std::move(a.image), binarize(a.mask)};
  };
  EpisodeBatch b;
  for (const auto& cls : ep.support) {
    auto& shots = b.support.emplace_back();
    for (std::size_t idx : cls) shots.push_back(take(idx));
  }
  for (const auto& q : ep.query) {
    LabeledPatch lp = take(q.index);
    for (std::uint8_t& l : lp.mask.data()) l = static_cast<std::uint8_t>(l != 0 ? q.label : 0);
    b.query.push_back(std::move(lp));
  }
  return b;
}

SupportSet make_support(const PatchPool& pool, int ways, int shots, ClassFraming framing, std::uint64_t seed) {
  if (ways < 1 || shots < 1) fail(ErrorCode::kInvalidArgument, "support needs ways >= 1 and shots >= 1");
  std::mt19937_64 rng(seed);
  auto pick_k = [&](std::vector<std::size_t> v, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> d(i, v.size() - 1);
      std::swap(v[i], v[d(rng)]);
    }
    v.resize(k);
    return v;
  };
  std::vector<std::vector<std::size_t>> classes;
  if (framing == ClassFraming::kVesselAsClass) {
    if (ways != 1) fail(ErrorCode::kInvalidArgument, "vessel-as-class support has exactly one way");
    if (pool.size() < static_cast<std::size_t>(shots)) {
      fail(ErrorCode::kInsufficientData, "pool has fewer patches than requested shots");
    }
    std::vector<std::size_t> all(pool.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    classes.push_back(pick_k(std::move(all), static_cast<std::size_t>(shots)));
  } else {
    std::vector<std::vector<std::size_t>> eligible;
    for (auto& [subject, idx] : group_by_subject(pool)) {
      if (idx.size() >= static_cast<std::size_t>(shots)) eligible.push_back(idx);
    }
    if (eligible.size() < static_cast<std::size_t>(ways)) {
      fail(ErrorCode::kInsufficientData, "not enough subjects with " + std::to_string(shots) + " patches");
    }
    std::vector<std::size_t> order(eligible.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t s : pick_k(order, static_cast<std::size_t>(ways))) {
      classes.push_back(pick_k(eligible[s], static_cast<std::size_t>(shots)));
    }
  }
  SupportSet out;
  out.seed = seed;
  for (const auto& cls : classes) {
    auto& shots_out = out.classes.emplace_back();
    for (std::size_t i : cls) {
      shots_out.push_back({pool[i].image, binarize(pool[i].mask)});
      out.ids.push_back(pool[i].id);
    }
  }
  return out;
}

Prediction segment_patch(const Parameters& params, const std::vector<Prototype>& prototypes, const Volume3D& image,
                         double cosine_scale) {
  return predict(similarity(forward(params, image), prototypes, cosine_scale));
}

LabelMask segment_volume(const Parameters& params, const SupportSet& support, const Volume3D& vol, Dims patch_size,
                         TilingMode tiling, double cosine_scale) {
  check_patch_dims(params.config, patch_size);
  const auto protos = compute_prototypes(params, support.classes);
  const TilingPlan plan = tile_non_overlapping(vol.dims(), patch_size, tiling);
  std::vector<LabelMask> masks;
  masks.reserve(plan.size());
  for (const auto& tile : extract_tiles(plan, vol)) {
    masks.push_back(segment_patch(params, protos, tile.image, cosine_scale).hard_mask);
  }
  return reconstruct(plan, masks, vol.spacing());
}

LabelMask segment_volume_supervised(const Parameters& params, const Volume3D& vol, Dims patch_size,
                                    TilingMode tiling) {
  check_patch_dims(params.config, patch_size);
  const TilingPlan plan = tile_non_overlapping(vol.dims(), patch_size, tiling);
  std::vector<LabelMask> masks;
  masks.reserve(plan.size());
  for (const auto& tile : extract_tiles(plan, vol)) masks.push_back(argmax_labels(forward(params, tile.image)));
  return reconstruct(plan, masks, vol.spacing());
}

double patch_level_dc(const Parameters& params, const SupportSet& support, const PatchPool& patches,
                      double cosine_scale) {
  if (patches.empty()) fail(ErrorCode::kInsufficientData, "no validation patches");
  const auto protos = compute_prototypes(params, support.classes);
  double sum = 0.0;
  for (const auto& p : patches) {
    sum += dice_coefficient(binarize(segment_patch(params, protos, p.image, cosine_scale).hard_mask), p.mask);
  }
  return sum / static_cast<double>(patches.size());
}

double patch_level_dc_supervised(const Parameters& params, const PatchPool& patches) {
  if (patches.empty()) fail(ErrorCode::kInsufficientData, "no validation patches");
  double sum = 0.0;
  for (const auto& p : patches) sum += dice_coefficient(argmax_labels(forward(params, p.image)), p.mask);
  return sum / static_cast<double>(patches.size());
}

MetricsReport evaluate_volumes(const Parameters& params, const SupportSet& support, const std::vector<Subject>& subjects,
                               Dims patch_size, TilingMode tiling, double cosine_scale, std::string label) {
  std::vector<CaseMetrics> cases;
  for (const auto& s : subjects) {
    const LabelMask pred = segment_volume(params, support, s.image, patch_size, tiling, cosine_scale);
    cases.push_back(evaluate_case(s.id, binarize(pred), binarize(s.mask)));
  }
  return aggregate(std::move(cases), std::move(label));
}

MetricsReport evaluate_volumes_supervised(const Parameters& params, const std::vector<Subject>& subjects,
                                          Dims patch_size, TilingMode tiling, std::string label) {
  std::vector<CaseMetrics> cases;
  for (const auto& s : subjects) {
    const LabelMask pred = segment_volume_supervised(params, s.image, patch_size, tiling);
    cases.push_back(evaluate_case(s.id, binarize(pred), binarize(s.mask)));
  }
  return aggregate(std::move(cases), std::move(label));
}

const char* to_string(ValidationLevel v) { return v == ValidationLevel::kPatch ? "patch" : "volume"; }

ValidationLevel validation_level_from_string(const std::string& s) {
  if (s == "patch") return ValidationLevel::kPatch;
  if (s == "volume") return ValidationLevel::kVolume;
  fail(ErrorCode::kInvalidArgument, "unknown validation level '" + s + "' (expected patch or volume)");
}

void validate(const TrainConfig& c) {
  validate(c.encoder);
  validate(c.augment);
  check_patch_dims(c.encoder, c.patch.size);
  if (c.max_iterations < 1) fail(ErrorCode::kInvalidArgument, "max_iterations must be >= 1");
  if (!(c.initial_lr > 0.0)) fail(ErrorCode::kInvalidArgument, "initial_lr must be positive");
  if (c.momentum < 0.0 || c.momentum >= 1.0) fail(ErrorCode::kInvalidArgument, "momentum must lie in [0, 1)");
  if (c.poly_exponent < 0.0) fail(ErrorCode::kInvalidArgument, "poly exponent must be >= 0");
  if (c.val_interval < 1) fail(ErrorCode::kInvalidArgument, "val_interval must be >= 1");
  if (c.early_stop_patience < 1) fail(ErrorCode::kInvalidArgument, "early_stop_patience must be >= 1");
  if (c.grad_clip_norm < 0.0) fail(ErrorCode::kInvalidArgument, "grad_clip_norm must be >= 0");
  if (!(c.head.cosine_scale > 0.0)) fail(ErrorCode::kInvalidArgument, "cosine scale must be positive");
  if (c.head.loss.w_ce < 0.0 || c.head.loss.w_dice < 0.0 || !(c.head.loss.smooth > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "loss weights must be >= 0 and smoothing positive");
  }
  if (c.episode.ways < 1 || c.episode.shots < 1 || c.episode.queries < 1) {
    fail(ErrorCode::kInvalidArgument, "episode ways, shots and queries must be >= 1");
  }
  if (c.episode.ways > 254) fail(ErrorCode::kInvalidArgument, "at most 254 ways are supported");
}

void validate(const BaselineConfig& c) {
  validate(c.encoder);
  validate(c.augment);
  check_patch_dims(c.encoder, c.patch.size);
  if (c.encoder.feature_dim != 2) fail(ErrorCode::kInvalidArgument, "baseline encoder must emit 2 logit channels");
  if (c.max_iterations < 1 || c.batch_size < 1) fail(ErrorCode::kInvalidArgument, "iterations and batch size >= 1");
  if (!(c.lr > 0.0) || c.eta_min < 0.0 || c.cosine_t_max < 1) {
    fail(ErrorCode::kInvalidArgument, "baseline lr, eta_min or t_max out of range");
  }
  if (c.beta1 < 0.0 || c.beta1 >= 1.0 || c.beta2 < 0.0 || c.beta2 >= 1.0 || !(c.adam_eps > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "Adam betas must lie in [0, 1) and eps be positive");
  }
  if (c.val_interval < 1 || c.early_stop_patience < 1 || c.scheduler_step_every < 0) {
    fail(ErrorCode::kInvalidArgument, "baseline intervals out of range");
  }
}

TrainingData make_training_data(const std::vector<Subject>& train, const std::vector<Subject>& val,
                                const PatchSpec& spec, std::uint64_t seed) {
  TrainingData d;
  d.train = build_patch_pool(train, spec, seed);
  d.val = build_patch_pool(val, spec, subject_seed(seed, 0xFFFF));
  d.val_subjects = val;
  return d;
}

SupportSet default_support(const PatchPool& train_pool, const TrainConfig& cfg) {
  return make_support(train_pool, cfg.episode.ways, cfg.episode.shots, cfg.episode.framing,
                      subject_seed(cfg.seed, 0x5EED));
}

std::string fewshot_meta(const TrainConfig& cfg) {
  nlohmann::json j = {{"cosine_scale", cfg.head.cosine_scale},
                      {"ways", cfg.episode.ways},
                      {"shots", cfg.episode.shots},
                      {"framing", to_string(cfg.episode.framing)},
                      {"support_seed", subject_seed(cfg.seed, 0x5EED)},
                      {"pool_seed", cfg.seed},
                      {"patch", cfg.patch},
                      {"tiling", to_string(cfg.tiling)}};
  return j.dump();
}

namespace {

class Logger {
 public:
  explicit Logger(const std::filesystem::path& path) {
    if (path.empty()) return;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::trunc);
    if (!out_) fail(ErrorCode::kIo, "cannot write training log " + path.string());
  }

  void write(const HistoryEntry& e) {
    if (!out_.is_open()) return;
    nlohmann::json j = {{"iter", e.iteration}, {"loss", e.loss}, {"lr", e.lr}, {"val_dc", nullptr}};
    if (e.val_dc) j["val_dc"] = *e.val_dc;
    out_ << j.dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

// Tracks the best validation score and the early-stopping condition.
struct EarlyStopper {
  std::int64_t patience;
  double best_dc = -1.0;
  std::int64_t best_iter = 0;
  std::optional<Parameters> best;

  // Returns true when training should stop.
  bool update(double dc, std::int64_t iter, const Parameters& params) {
    if (dc > best_dc) {
      best_dc = dc;
      best_iter = iter;
      best = params;
      return false;
    }
    return iter - best_iter >= patience;
  }
};

}  // namespace

TrainResult train_fewshot(const TrainingData& data, const TrainConfig& cfg, const TrainOptions& opts) {
  validate(cfg);
  if (data.train.empty()) fail(ErrorCode::kInsufficientData, "training pool is empty");
  const bool patch_val = cfg.validation == ValidationLevel::kPatch;
  const bool have_val = patch_val ? !data.val.empty() : !data.val_subjects.empty();

  Parameters params = init_params(cfg.encoder);
  Parameters velocity = params.zeros_like();
  std::mt19937_64 rng(cfg.seed);
  const SupportSet val_support = default_support(data.train, cfg);
  Logger log(opts.log_path);

  auto validate_now = [&]() {
    if (patch_val) return patch_level_dc(params, val_support, data.val, cfg.head.cosine_scale);
    return evaluate_volumes(params, val_support, data.val_subjects, cfg.patch.size, cfg.tiling, cfg.head.cosine_scale)
        .dice.mean;
  };

  TrainResult result;
  EarlyStopper stopper{cfg.early_stop_patience, -1.0, 0, std::nullopt};
  for (std::int64_t t = 0; t < cfg.max_iterations; ++t) {
    const double lr = poly_lr(cfg.initial_lr, t, cfg.max_iterations, cfg.poly_exponent);
    const Episode ep = build_episode(data.train, cfg.episode, rng);
    const EpisodeBatch batch = materialize(data.train, ep, &cfg.augment, rng);
    EpisodeLoss el = episode_loss_and_gradient(params, batch, cfg.head);
    if (!std::isfinite(el.loss) || !el.grad.all_finite()) {
      fail(ErrorCode::kDiverged, "non-finite loss or gradient at iteration " + std::to_string(t + 1));
    }
    if (cfg.grad_clip_norm > 0.0) {
      const double norm = std::sqrt(el.grad.squared_norm());
      if (norm > cfg.grad_clip_norm) el.grad.scale(cfg.grad_clip_norm / norm);
    }
    velocity.scale(cfg.momentum);
    velocity.add_scaled(el.grad, 1.0);
    params.add_scaled(velocity, -lr);

    const std::int64_t iter = t + 1;
    HistoryEntry entry{iter, el.loss, lr, std::nullopt};
    bool stop = false;
    if (have_val && (iter % cfg.val_interval == 0 || iter == cfg.max_iterations)) {
      entry.val_dc = validate_now();
      stop = stopper.update(*entry.val_dc, iter, params);
    }
    log.write(entry);
    if (opts.on_iteration) opts.on_iteration(entry);
    result.history.push_back(entry);
    result.iterations_run = iter;
    if (stop) {
      result.early_stopped = true;
      break;
    }
  }

  Checkpoint& ck = result.checkpoint;
  ck.kind = "fewshot";
  ck.params = stopper.best ? *stopper.best : params;
  ck.iteration = stopper.best ? stopper.best_iter : result.iterations_run;
  ck.best_val_dc = stopper.best_dc;
  ck.rng_state = rng_state(rng);
  ck.meta = fewshot_meta(cfg);
  return result;
}

TrainResult train_supervised_baseline(const TrainingData& data, const BaselineConfig& cfg, const TrainOptions& opts) {
  validate(cfg);
  if (data.train.empty()) fail(ErrorCode::kInsufficientData, "training pool is empty");
  const bool have_val = !data.val.empty();

  Parameters params = init_params(cfg.encoder);
  Parameters m = params.zeros_like();
  Parameters v = params.zeros_like();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.train.size() - 1);
  const std::int64_t step_every =
      cfg.scheduler_step_every > 0
          ? cfg.scheduler_step_every
          : std::max<std::int64_t>(1, static_cast<std::int64_t>(
                                          (data.train.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                          static_cast<std::size_t>(cfg.batch_size)));
  Logger log(opts.log_path);

  TrainResult result;
  EarlyStopper stopper{cfg.early_stop_patience, -1.0, 0, std::nullopt};
  for (std::int64_t t = 0; t < cfg.max_iterations; ++t) {
    const double lr = cosine_annealing_lr(cfg.lr, t / step_every, cfg.cosine_t_max, cfg.eta_min);
    Parameters grad = params.zeros_like();
    double loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const PoolPatch& p = data.train[pick(rng)];
      const ImageMaskPair a = augment(p.image, p.mask, cfg.augment, rng);
      const TapedForward f = forward_taped(params, Tensor::from_image(a.image));
      LossValue lv = dice_loss(softmax_channels(f.features), binarize(a.mask), cfg.dice_smooth);
      loss += lv.value / cfg.batch_size;
      for (double& g : lv.grad_logits.data()) g /= cfg.batch_size;
      grad.add_scaled(backward(params, *f.tape, lv.grad_logits).params, 1.0);
    }
    if (!std::isfinite(loss) || !grad.all_finite()) {
      fail(ErrorCode::kDiverged, "non-finite loss or gradient at iteration " + std::to_string(t + 1));
    }

    const double step = static_cast<double>(t + 1);
    const double c1 = 1.0 - std::pow(cfg.beta1, step);
    const double c2 = 1.0 - std::pow(cfg.beta2, step);
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      auto& pv = params.tensors[i].values;
      auto& mv = m.tensors[i].values;
      auto& vv = v.tensors[i].values;
      const auto& gv = grad.tensors[i].values;
      for (std::size_t j = 0; j < pv.size(); ++j) {
        mv[j] = cfg.beta1 * mv[j] + (1.0 - cfg.beta1) * gv[j];
        vv[j] = cfg.beta2 * vv[j] + (1.0 - cfg.beta2) * gv[j] * gv[j];
        pv[j] -= lr * (mv[j] / c1) / (std::sqrt(vv[j] / c2) + cfg.adam_eps);
      }
    }

    const std::int64_t iter = t + 1;
    HistoryEntry entry{iter, loss, lr, std::nullopt};
    bool stop = false;
    if (have_val && (iter % cfg.val_interval == 0 || iter == cfg.max_iterations)) {
      entry.val_dc = patch_level_dc_supervised(params, data.val);
      stop = stopper.update(*entry.val_dc, iter, params);
    }
    log.write(entry);
    if (opts.on_iteration) opts.on_iteration(entry);
    result.history.push_back(entry);
    result.iterations_run = iter;
    if (stop) {
      result.early_stopped = true;
      break;
    }
  }

  Checkpoint& ck = result.checkpoint;
  ck.kind = "supervised";
  ck.params = stopper.best ? *stopper.best : params;
  ck.iteration = stopper.best ? stopper.best_iter : result.iterations_run;
  ck.best_val_dc = stopper.best_dc;
  ck.rng_state = rng_state(rng);
  nlohmann::json meta = {{"patch", cfg.patch}, {"tiling", to_string(cfg.tiling)}};
  ck.meta = meta.dump();
  return result;
}

CrossValResult cross_validate(const std::vector<Subject>& subjects, const std::vector<Fold>& folds,
                              const TrainConfig& cfg, int val_subjects) {
  if (folds.empty()) fail(ErrorCode::kInvalidArgument, "no folds given");
  if (val_subjects < 0) fail(ErrorCode::kInvalidArgument, "val_subjects must be >= 0");
  CrossValResult out;
  std::vector<CaseMetrics> fold_cases;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    const Fold& f = folds[i];
    const std::size_t n_val =
        std::min<std::size_t>(static_cast<std::size_t>(val_subjects), f.train.empty() ? 0 : f.train.size() - 1);
    const std::vector<std::string> tr(f.train.begin(), f.train.end() - static_cast<std::ptrdiff_t>(n_val));
    const std::vector<std::string> va(f.train.end() - static_cast<std::ptrdiff_t>(n_val), f.train.end());

    TrainConfig c = cfg;
    c.seed = subject_seed(cfg.seed, i);
    const TrainingData data =
        make_training_data(select_subjects(subjects, tr), select_subjects(subjects, va), cfg.patch, c.seed);
    const TrainResult res = train_fewshot(data, c);
    const SupportSet support = default_support(data.train, c);
    MetricsReport rep = evaluate_volumes(res.checkpoint.params, support, select_subjects(subjects, f.test),
                                         cfg.patch.size, cfg.tiling, cfg.head.cosine_scale,
                                         "fold " + std::to_string(i));
    fold_cases.push_back({"fold " + std::to_string(i), rep.dice.mean, rep.sensitivity.mean, rep.precision.mean,
                          rep.iou.mean});
    out.folds.push_back(std::move(rep));
  }
  out.aggregate = aggregate(std::move(fold_cases), "cross-validation");
  return out;
}

}  // namespace protoseg
