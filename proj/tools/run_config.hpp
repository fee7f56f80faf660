#pragma once

// Declarative run configuration: one structured-text (JSON) file with a
// section per command. Every key must exist in the defaults; values are
// type-checked against them.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "thermaco/eval.hpp"
#include "thermaco/interpret.hpp"
#include "thermaco/stream.hpp"
#include "thermaco/synthgen.hpp"
#include "thermaco/training.hpp"

namespace thermaco::cli {

using Json = nlohmann::ordered_json;

/// Full configuration tree with every key at its default.
Json default_config();

/// Overlays `patch` onto `base`, rejecting unknown keys and mismatched types.
/// `where` prefixes error messages (e.g. the file name).
void merge_strict(Json& base, const Json& patch, const std::string& where);

/// Applies "section.key=value" (value parsed as JSON, else taken as a string).
void apply_override(Json& config, const std::string& assignment);

/// Defaults, then the file (if any), then overrides.
Json load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

synth::SynthConfig synth_config(const Json& config);
prep::WindowingSpec windowing_spec(const Json& config);
train::TrainConfig train_config(const Json& config);
eval::ExperimentConfig experiment_config(const Json& config);
train::SearchSpace search_space(const Json& config);
interpret::LandscapeSpec landscape_spec(const Json& config);
stream::StreamOptions stream_options(const Json& config);
ModelConfig model_preset(const std::string& name, int frames, int height, int width);

/// Output directory: relative paths resolve against $THERMACO_RUN_ROOT when set.
std::filesystem::path resolve_run_dir(const std::filesystem::path& out);

/// Writes <dir>/effective_config.json.
void echo_config(const std::filesystem::path& dir, const Json& config);

}  // namespace thermaco::cli
