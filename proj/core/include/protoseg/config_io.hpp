#pragma once

#include <string>

#include "protoseg/episodes.hpp"
#include "protoseg/patching.hpp"
#include "protoseg/phantom.hpp"
#include "protoseg/training.hpp"

namespace protoseg {

// JSON text for configuration structs. The readers merge: keys present in the text
// overwrite fields of `cfg`, absent keys keep their value, unknown keys raise
// ErrorCode::kFormat.

std::string config_to_json(const PhantomConfig& cfg);
std::string config_to_json(const PatchSpec& cfg);
std::string config_to_json(const TrainConfig& cfg);
std::string config_to_json(const BaselineConfig& cfg);
std::string config_to_json(const SplitFractions& cfg);

void merge_config(const std::string& json, PhantomConfig& cfg);
void merge_config(const std::string& json, PatchSpec& cfg);
void merge_config(const std::string& json, TrainConfig& cfg);
void merge_config(const std::string& json, BaselineConfig& cfg);
void merge_config(const std::string& json, SplitFractions& cfg);

}  // namespace protoseg
