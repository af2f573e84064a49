#pragma once

// nlohmann mappings for the configuration structs. Readers merge: keys present in the
// JSON overwrite fields, absent keys keep the current value, unknown keys are rejected.

#include "json.hpp"
#include "protoseg/augment.hpp"
#include "protoseg/encoder.hpp"
#include "protoseg/episodes.hpp"
#include "protoseg/loss_metrics.hpp"
#include "protoseg/patching.hpp"
#include "protoseg/phantom.hpp"
#include "protoseg/training.hpp"

namespace protoseg {

void to_json(nlohmann::json& j, const Vec3i& v);
void from_json(const nlohmann::json& j, Vec3i& v);

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const PatchSpec& c);
void from_json(const nlohmann::json& j, PatchSpec& c);
void to_json(nlohmann::json& j, const EpisodeConfig& c);
void from_json(const nlohmann::json& j, EpisodeConfig& c);
void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);
void to_json(nlohmann::json& j, const HeadConfig& c);
void from_json(const nlohmann::json& j, HeadConfig& c);
void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);
void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);
void to_json(nlohmann::json& j, const SplitFractions& c);
void from_json(const nlohmann::json& j, SplitFractions& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const BaselineConfig& c);
void from_json(const nlohmann::json& j, BaselineConfig& c);

/// Parse and merge with ErrorCode::kFormat on failure.
template <typename T>
void merge_json(const nlohmann::json& j, T& value, const char* what) {
  try {
    from_json(j, value);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string(what) + ": " + e.what());
  }
}

}  // namespace protoseg
