#include "run_config.hpp"

#include <cstdlib>
#include <fstream>

namespace thermaco::cli {

namespace {

const char* type_name(const Json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

bool compatible(const Json& def, const Json& value) {
  if (def.is_boolean()) return value.is_boolean();
  if (def.is_number_integer()) return value.is_number_integer();
  if (def.is_number()) return value.is_number();
  if (def.is_string()) return value.is_string();
  if (def.is_array()) return value.is_array();
  if (def.is_object()) return value.is_object();
  return false;
}

std::vector<TrainerKind> kinds_from(const Json& list) {
  std::vector<TrainerKind> out;
  for (const auto& k : list) {
    if (!k.is_string()) throw ValidationError("trainer kinds must be strings");
    out.push_back(trainer_kind_from_name(k.get<std::string>()));
  }
  return out;
}

}  // namespace

Json default_config() {
  return Json{
      {"synth",
       {{"n_participants", 24},
        {"master_seed", 20240601},
        {"height", 24},
        {"width", 32},
        {"thermal_fps", 5.0},
        {"eda_rate_hz", 4.0},
        {"distances_feet", {5.0, 7.0, 9.0}},
        {"distance_jitter_feet", 2.0},
        {"coupling_gain", 0.3},
        {"stress_delta", -0.6},
        {"noise_sigma_base", 0.2},
        {"noise_distance_coeff", 0.3},
        {"scr_rate_stress", 0.1},
        {"scr_rate_nonstress", 0.01}}},
      {"preprocess", {{"window_seconds", 5.0}, {"overlap_seconds", 2.0}, {"k", 4}, {"val_sessions_per_fold", 0},
                      {"inner_val_participants", 3}, {"seed", 11}}},
      {"train",
       {{"trainer", "coteach"},
        {"model", "desk"},
        {"fold", 0},
        {"epochs", 20},
        {"batch_size", 32},
        {"learning_rate", 1e-3},
        {"alpha", 1.0},
        {"beta", 1.0},
        {"similarity", "mse"},
        {"cmd_order", 5},
        {"seed", 1},
        {"augment", false},
        {"patience", 6},
        {"windows_per_epoch", 512}}},
      {"eval", {{"protocol", "kfold"}, {"kinds", {"coteach", "thermal", "eda", "multimodal"}}, {"masked_regions", true}}},
      {"search",
       {{"n_trials", 10},
        {"seed", 7},
        {"lr_min", 1e-4},
        {"lr_max", 1e-2},
        {"alpha_min", 0.0},
        {"alpha_max", 2.0},
        {"beta_min", 0.0},
        {"beta_max", 2.0}}},
      {"interpret",
       {{"grid_rows", 8},
        {"grid_cols", 8},
        {"n_samples", 2048},
        {"seed", 0},
        {"window_index", 0},
        {"landscape_steps", 41},
        {"landscape_extent", 1.0},
        {"landscape_seed", 0},
        {"landscape_batch", 64}}},
      {"stream", {{"realtime", false}, {"queue_capacity", 256}}},
      {"jobs", 1}};
}

void merge_strict(Json& base, const Json& patch, const std::string& where) {
  if (!patch.is_object()) throw ValidationError(where + ": expected an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where + "." + it.key();
    if (!base.contains(it.key())) throw ValidationError("unknown config key '" + path + "'");
    Json& slot = base[it.key()];
    if (!compatible(slot, it.value())) {
      throw ValidationError("config key '" + path + "' expects " + type_name(slot) + ", got " + type_name(it.value()));
    }
    if (slot.is_object()) {
      merge_strict(slot, it.value(), path);
    } else {
      slot = it.value();
    }
  }
}

void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::exception&) {
    value = text;
  }
  // Build the nested patch {"a": {"b": value}} from "a.b".
  Json patch = value;
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t dot = key.find('.'); dot != std::string::npos; dot = key.find('.', start)) {
    parts.push_back(key.substr(start, dot - start));
    start = dot + 1;
  }
  parts.push_back(key.substr(start));
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
  merge_strict(config, patch, "override");
}

Json load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  Json config = default_config();
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw IoError("cannot read config '" + file.string() + "'");
    Json patch;
    try {
      patch = Json::parse(is);
    } catch (const Json::exception& e) {
      throw ValidationError("config '" + file.string() + "' is not valid JSON: " + e.what());
    }
    merge_strict(config, patch, file.filename().string());
  }
  for (const auto& o : overrides) apply_override(config, o);
  return config;
}

synth::SynthConfig synth_config(const Json& config) {
  const auto& s = config.at("synth");
  synth::SynthConfig c;
  c.n_participants = s.at("n_participants");
  c.master_seed = s.at("master_seed");
  c.height = s.at("height");
  c.width = s.at("width");
  c.thermal_fps = s.at("thermal_fps");
  c.eda_rate_hz = s.at("eda_rate_hz");
  c.distances_feet = s.at("distances_feet").get<std::vector<double>>();
  c.distance_jitter_feet = s.at("distance_jitter_feet");
  c.coupling_gain = s.at("coupling_gain");
  c.stress_delta = s.at("stress_delta");
  c.noise_sigma_base = s.at("noise_sigma_base");
  c.noise_distance_coeff = s.at("noise_distance_coeff");
  c.scr_rate_stress = s.at("scr_rate_stress");
  c.scr_rate_nonstress = s.at("scr_rate_nonstress");
  c.validate();
  return c;
}

prep::WindowingSpec windowing_spec(const Json& config) {
  const auto& p = config.at("preprocess");
  prep::WindowingSpec w{p.at("window_seconds"), p.at("overlap_seconds")};
  w.validate();
  return w;
}

ModelConfig model_preset(const std::string& name, int frames, int height, int width) {
  if (name == "desk") return ModelConfig::desk(frames, height, width);
  if (name == "full") return ModelConfig::full(frames, height, width);
  if (name == "reduced") return ModelConfig::reduced();
  throw ValidationError("unknown model preset '" + name + "' (expected desk, full or reduced)");
}

train::TrainConfig train_config(const Json& config) {
  const auto& t = config.at("train");
  const auto& s = config.at("synth");
  const auto w = windowing_spec(config);
  train::TrainConfig c;
  c.kind = trainer_kind_from_name(t.at("trainer"));
  c.model = model_preset(t.at("model"), static_cast<int>(samples_for(w.window_seconds, s.at("thermal_fps"))),
                         s.at("height"), s.at("width"));
  c.epochs = t.at("epochs");
  c.batch_size = t.at("batch_size");
  c.learning_rate = t.at("learning_rate");
  c.weights = {t.at("alpha"), t.at("beta")};
  const std::string sim = t.at("similarity");
  if (sim == "mse") {
    c.similarity = train::Similarity::kMse;
  } else if (sim == "cmd") {
    c.similarity = train::Similarity::kCmd;
  } else {
    throw ValidationError("train.similarity must be 'mse' or 'cmd'");
  }
  c.cmd_order = t.at("cmd_order");
  c.seed = t.at("seed");
  c.augment = t.at("augment");
  c.patience = t.at("patience");
  c.windows_per_epoch = t.at("windows_per_epoch");
  c.validate();
  return c;
}

eval::ExperimentConfig experiment_config(const Json& config) {
  const auto& p = config.at("preprocess");
  eval::ExperimentConfig c;
  c.kinds = kinds_from(config.at("eval").at("kinds"));
  c.k = p.at("k");
  c.val_sessions_per_fold = p.at("val_sessions_per_fold");
  c.inner_val_participants = p.at("inner_val_participants");
  c.seed = p.at("seed");
  c.train = train_config(config);
  c.jobs = config.at("jobs");
  c.validate();
  return c;
}

train::SearchSpace search_space(const Json& config) {
  const auto& s = config.at("search");
  train::SearchSpace c;
  c.n_trials = s.at("n_trials");
  c.seed = s.at("seed");
  c.lr_min = s.at("lr_min");
  c.lr_max = s.at("lr_max");
  c.alpha_min = s.at("alpha_min");
  c.alpha_max = s.at("alpha_max");
  c.beta_min = s.at("beta_min");
  c.beta_max = s.at("beta_max");
  c.validate();
  return c;
}

interpret::LandscapeSpec landscape_spec(const Json& config) {
  const auto& i = config.at("interpret");
  interpret::LandscapeSpec c{i.at("landscape_steps"), i.at("landscape_extent"), i.at("landscape_seed")};
  c.validate();
  return c;
}

stream::StreamOptions stream_options(const Json& config) {
  const auto& s = config.at("stream");
  stream::StreamOptions o;
  o.realtime = s.at("realtime");
  const int cap = s.at("queue_capacity");
  if (cap < 1) throw ValidationError("stream.queue_capacity must be >= 1");
  o.queue_capacity = static_cast<std::size_t>(cap);
  return o;
}

std::filesystem::path resolve_run_dir(const std::filesystem::path& out) {
  if (out.is_absolute()) return out;
  if (const char* root = std::getenv("THERMACO_RUN_ROOT"); root && *root) return std::filesystem::path(root) / out;
  return out;
}

void echo_config(const std::filesystem::path& dir, const Json& config) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "'");
  std::ofstream os(dir / "effective_config.json", std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + (dir / "effective_config.json").string() + "'");
  os << config.dump(2) << '\n';
}

}  // namespace thermaco::cli
