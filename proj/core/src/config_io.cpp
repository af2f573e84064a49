#include "protoseg/config_io.hpp"

#include "json_config.hpp"

namespace protoseg {

using nlohmann::json;

namespace {

template <typename Fn>
void each_key(const json& j, const char* what, Fn&& fn) {
  if (!j.is_object()) fail(ErrorCode::kFormat, std::string(what) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!fn(it.key(), it.value())) fail(ErrorCode::kFormat, "unknown key '" + it.key() + "' in " + what);
  }
}

void read_range(const json& v, double& lo, double& hi) {
  if (!v.is_array() || v.size() != 2) fail(ErrorCode::kFormat, "range must be a two-element array");
  lo = v[0].get<double>();
  hi = v[1].get<double>();
}

template <typename T>
json dump_range(T lo, T hi) {
  return json::array({lo, hi});
}

}  // namespace

#define PROTOSEG_FIELD(name)  \
  if (k == #name) {           \
    v.get_to(c.name);         \
    return true;              \
  }

void to_json(json& j, const Vec3i& v) { j = json::array({v.x, v.y, v.z}); }

void from_json(const json& j, Vec3i& v) {
  if (!j.is_array() || j.size() != 3) fail(ErrorCode::kFormat, "expected a three-element integer array");
  v = {j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
}

void to_json(json& j, const EncoderConfig& c) {
  j = {{"levels", c.levels},           {"base_channels", c.base_channels}, {"feature_dim", c.feature_dim},
       {"in_channels", c.in_channels}, {"leaky_slope", c.leaky_slope},     {"instance_norm", c.instance_norm},
       {"seed", c.seed}};
}

void from_json(const json& j, EncoderConfig& c) {
  each_key(j, "encoder", [&](const std::string& k, const json& v) {
    PROTOSEG_FIELD(levels)
    PROTOSEG_FIELD(base_channels)
    PROTOSEG_FIELD(feature_dim)
    PROTOSEG_FIELD(in_channels)
    PROTOSEG_FIELD(leaky_slope)
    PROTOSEG_FIELD(instance_norm)
    PROTOSEG_FIELD(seed)
    return false;
  });
}

void to_json(json& j, const PatchSpec& c) {
  j = {{"size", c.size},
       {"per_volume_count", c.per_volume_count},
       {"min_foreground_voxels", c.min_foreground_voxels},
       {"max_retries", c.max_retries}};
}

void from_json(const json& j, PatchSpec& c) {
  each_key(j, "patch", [&](const std::string& k, const json& v) {
    PROTOSEG_FIELD(size)
    PROTOSEG_FIELD(per_volume_count)
    PROTOSEG_FIELD(min_foreground_voxels)
    PROTOSEG_FIELD(max_retries)
    return false;
  });
}

void to_json(json& j, const EpisodeConfig& c) {
  j = {{"ways", c.ways},
       {"shots", c.shots},
       {"queries", c.queries},
       {"framing", to_string(c.framing)},
       {"seed", c.seed}};
}

void from_json(const json& j, EpisodeConfig& c) {
  each_key(j, "episode", [&](const std::string& k, const json& v) {
    PROTOSEG_FIELD(ways)
    PROTOSEG_FIELD(shots)
    PROTOSEG_FIELD(queries)
    PROTOSEG_FIELD(seed)
    if (k == "framing") {
      c.framing = class_framing_from_string(v.get<std::string>());
      return true;
    }
    return false;
  });
}

void to_json(json& j, const LossConfig& c) { j = {{"w_ce", c.w_ce}, {"w_dice", c.w_dice}, {"smooth", c.smooth}}; }

void from_json(const json& j, LossConfig& c) {
  each_key(j, "loss", [&](const std::string& k, const json& v) {
    PROTOSEG_FIELD(w_ce)
    PROTOSEG_FIELD(w_dice)
    PROTOSEG_FIELD(smooth)
    return false;
  });
}

void to_json(json& j, const HeadConfig& c) {
  j = {{"cosine_scale", c.cosine_scale}, {"loss", c.loss}, {"stop_gradient_prototypes", c.stop_gradient_prototypes}};
}

void from_json(const json& j, HeadConfig& c) {
  each_key(j, "head", [&](const std::string& k, const json& v) {
    PROTOSEG_FIELD(cosine_scale)
    PROTOSEG_FIELD(loss)
    PROTOSEG_FIELD(stop_gradient_prototypes)
    return false;
  });
}

void to_json(json& j, const AugmentConfig& c) {
  j = {{"flip_prob", c.flip_prob},
       {"blur_prob", c.blur_prob},
       {"blur_sigma", dump_range(c.blur_sigma_min, c.blur_sigma_max)},
       {"noise_prob", c.noise_prob},
       {"noise_sigma_max", c.noise_sigma_max},
       {"contrast_prob", c.contrast_prob},
       {"contrast_range", dump_range(c.contrast_min, c.contrast_max)}};
}

void from_json(const json& j, AugmentConfig& c) {
  each_key(j, "augment", [&](const std::string& k, const json& v) {
    PROTOSEG_FIELD(flip_prob)
    PROTOSEG_FIELD(blur_prob)
    PROTOSEG_FIELD(noise_prob)
    PROTOSEG_FIELD(noise_sigma_max)
    PROTOSEG_FIELD(contrast_prob)
    if (k == "blur_sigma") {
      read_range(v, c.blur_sigma_min, c.blur_sigma_max);
      return true;
    }
    if (k == "contrast_range") {
      read_range(v, c.contrast_min, c.contrast_max);
      return true;
    }
    return false;
  });
}

void to_json(json& j, const PhantomConfig& c) {
  j = {{"dims", c.dims},
       {"n_tubes", c.n_tubes},
       {"radius", dump_range(c.radius_min, c.radius_max)},
       {"background", c.background},
       {"contrast", c.contrast},
       {"noise_sigma", c.noise_sigma},
       {"smoothing_sigma", c.smoothing_sigma},
       {"curvature", c.curvature},
       {"tube_length", c.tube_length},
       {"n_distractors", c.n_distractors},
       {"distractor_radius", c.distractor_radius},
       {"seed", c.seed}};
}

void from_json(const json& j, PhantomConfig& c) {
  each_key(j, "phantom", [&](const std::string& k, const json& v) {
    PROTOSEG_FIELD(dims)
    PROTOSEG_FIELD(n_tubes)
    PROTOSEG_FIELD(background)
    PROTOSEG_FIELD(contrast)
    PROTOSEG_FIELD(noise_sigma)
    PROTOSEG_FIELD(smoothing_sigma)
    PROTOSEG_FIELD(curvature)
    PROTOSEG_FIELD(tube_length)
    PROTOSEG_FIELD(n_distractors)
    PROTOSEG_FIELD(distractor_radius)
    PROTOSEG_FIELD(seed)
    if (k == "radius") {
      read_range(v, c.radius_min, c.radius_max);
      return true;
    }
    return false;
  });
}

void to_json(json& j, const SplitFractions& c) { j = {{"train", c.train}, {"val", c.val}, {"test", c.test}}; }

void from_json(const json& j, SplitFractions& c) {
  each_key(j, "split", [&](const std::string& k, const json& v) {
    PROTOSEG_FIELD(train)
    PROTOSEG_FIELD(val)
    PROTOSEG_FIELD(test)
    return false;
  });
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"encoder", c.encoder},
       {"episode", c.episode},
       {"head", c.head},
       {"augment", c.augment},
       {"patch", c.patch},
       {"max_iterations", c.max_iterations},
       {"initial_lr", c.initial_lr},
       {"momentum", c.momentum},
       {"poly_exponent", c.poly_exponent},
       {"val_interval", c.val_interval},
       {"early_stop_patience", c.early_stop_patience},
       {"grad_clip_norm", c.grad_clip_norm},
       {"validation", to_string(c.validation)},
       {"tiling", to_string(c.tiling)},
       {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  each_key(j, "train", [&](const std::string& k, const json& v) {
    PROTOSEG_FIELD(encoder)
    PROTOSEG_FIELD(episode)
    PROTOSEG_FIELD(head)
    PROTOSEG_FIELD(augment)
    PROTOSEG_FIELD(patch)
    PROTOSEG_FIELD(max_iterations)
    PROTOSEG_FIELD(initial_lr)
    PROTOSEG_FIELD(momentum)
    PROTOSEG_FIELD(poly_exponent)
    PROTOSEG_FIELD(val_interval)
    PROTOSEG_FIELD(early_stop_patience)
    PROTOSEG_FIELD(grad_clip_norm)
    PROTOSEG_FIELD(seed)
    if (k == "validation") {
      c.validation = validation_level_from_string(v.get<std::string>());
      return true;
    }
    if (k == "tiling") {
      c.tiling = tiling_mode_from_string(v.get<std::string>());
      return true;
    }
    return false;
  });
}

void to_json(json& j, const BaselineConfig& c) {
  j = {{"encoder", c.encoder},
       {"augment", c.augment},
       {"patch", c.patch},
       {"max_iterations", c.max_iterations},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"cosine_t_max", c.cosine_t_max},
       {"eta_min", c.eta_min},
       {"scheduler_step_every", c.scheduler_step_every},
       {"dice_smooth", c.dice_smooth},
       {"val_interval", c.val_interval},
       {"early_stop_patience", c.early_stop_patience},
       {"tiling", to_string(c.tiling)},
       {"seed", c.seed}};
}

void from_json(const json& j, BaselineConfig& c) {
  each_key(j, "baseline", [&](const std::string& k, const json& v) {
    PROTOSEG_FIELD(encoder)
    PROTOSEG_FIELD(augment)
    PROTOSEG_FIELD(patch)
    PROTOSEG_FIELD(max_iterations)
    PROTOSEG_FIELD(batch_size)
    PROTOSEG_FIELD(lr)
    PROTOSEG_FIELD(beta1)
    PROTOSEG_FIELD(beta2)
    PROTOSEG_FIELD(adam_eps)
    PROTOSEG_FIELD(cosine_t_max)
    PROTOSEG_FIELD(eta_min)
    PROTOSEG_FIELD(scheduler_step_every)
    PROTOSEG_FIELD(dice_smooth)
    PROTOSEG_FIELD(val_interval)
    PROTOSEG_FIELD(early_stop_patience)
    PROTOSEG_FIELD(seed)
    if (k == "tiling") {
      c.tiling = tiling_mode_from_string(v.get<std::string>());
      return true;
    }
    return false;
  });
}

#undef PROTOSEG_FIELD

namespace {

template <typename T>
std::string dump(const T& cfg) {
  json j = cfg;
  return j.dump(2);
}

template <typename T>
void merge(const std::string& text, T& cfg, const char* what) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string(what) + ": " + e.what());
  }
  merge_json(j, cfg, what);
}

}  // namespace

std::string config_to_json(const PhantomConfig& cfg) { return dump(cfg); }
std::string config_to_json(const PatchSpec& cfg) { return dump(cfg); }
std::string config_to_json(const TrainConfig& cfg) { return dump(cfg); }
std::string config_to_json(const BaselineConfig& cfg) { return dump(cfg); }
std::string config_to_json(const SplitFractions& cfg) { return dump(cfg); }

void merge_config(const std::string& text, PhantomConfig& cfg) { merge(text, cfg, "phantom config"); }
void merge_config(const std::string& text, PatchSpec& cfg) { merge(text, cfg, "patch config"); }
void merge_config(const std::string& text, TrainConfig& cfg) { merge(text, cfg, "train config"); }
void merge_config(const std::string& text, BaselineConfig& cfg) { merge(text, cfg, "baseline config"); }
void merge_config(const std::string& text, SplitFractions& cfg) { merge(text, cfg, "split config"); }

}  // namespace protoseg
