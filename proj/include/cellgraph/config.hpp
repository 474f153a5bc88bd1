#pragma once

// Configuration structs shared by the library and the CLI, with strict JSON
// conversion (unknown keys and wrong types are rejected).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cellgraph/errors.hpp"
#include "cellgraph/model.hpp"
#include "cellgraph/training.hpp"

namespace cellgraph {

/// Parameters of the synthetic video generator.
struct SynthConfig {
  std::size_t videos = 122;
  std::size_t t = 15;
  std::size_t max_cells = 3;
  std::size_t f = 16;
  double death_onset_prob = 0.01;  // per frame, for a living cell
  double marker_base = 1.0;
  double marker_jump = 10.0;
  double marker_noise = 0.5;
  double feature_sep = 3.0;  // cluster-mean distance, in units of the unit feature noise
  std::optional<double> threshold;  // required; there is no implicit default
  std::size_t k_consecutive = 3;
  std::vector<double> cell_count_weights;  // P(1..max_cells cells); empty = calibrated default
  std::uint64_t seed = 0;

  /// Weights over 1..max_cells cells. The empty default gives
  /// {0.29, 0.21, 0.50} for three slots, which puts the expected death counts
  /// per node near 14/10/7 out of 122 videos, and uniform weights otherwise.
  std::vector<double> resolved_cell_weights() const {
    if (!cell_count_weights.empty()) return cell_count_weights;
    if (max_cells == 3) return {0.29, 0.21, 0.50};
    return std::vector<double>(max_cells, 1.0);
  }

  void validate() const {
    if (t == 0) throw ValidationError("synth config: t must be at least 1");
    if (max_cells == 0) throw ValidationError("synth config: max_cells must be at least 1");
    if (f == 0) throw ValidationError("synth config: f must be at least 1");
    if (!(death_onset_prob >= 0.0 && death_onset_prob <= 1.0)) {
      throw ValidationError("synth config: death_onset_prob must lie in [0, 1]");
    }
    if (!(feature_sep >= 0.0) || !std::isfinite(feature_sep)) throw ValidationError("synth config: feature_sep must be >= 0");
    if (!(marker_noise >= 0.0) || !std::isfinite(marker_noise)) {
      throw ValidationError("synth config: marker_noise must be >= 0");
    }
    if (!std::isfinite(marker_base) || !std::isfinite(marker_jump)) {
      throw ValidationError("synth config: marker levels must be finite");
    }
    if (k_consecutive == 0) throw ValidationError("synth config: k_consecutive must be at least 1");
    if (k_consecutive > t) throw ValidationError("synth config: k_consecutive exceeds the frame count");
    if (!threshold) throw ValidationError("synth config: threshold must be given explicitly");
    if (!std::isfinite(*threshold)) throw ValidationError("synth config: threshold must be finite");
    const auto w = resolved_cell_weights();
    if (w.size() != max_cells) {
      throw ValidationError("synth config: cell_count_weights needs " + std::to_string(max_cells) + " entries");
    }
    double total = 0.0;
    for (double x : w) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw ValidationError("synth config: cell_count_weights must be >= 0");
      total += x;
    }
    if (!(total > 0.0)) throw ValidationError("synth config: cell_count_weights sum to zero");
  }

  bool operator==(const SynthConfig&) const = default;
};

namespace detail {

template <class T>
T json_as(const nlohmann::json& j, const std::string& key) {
  auto fail = [&](const char* what) { return ValidationError("config key '" + key + "' must be " + what); };
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw fail("true or false");
    return j.get<bool>();
  } else if constexpr (std::is_same_v<T, int>) {
    if (!j.is_number_integer()) throw fail("an integer");
    return j.get<int>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_unsigned()) throw fail("a nonnegative integer");
    return j.get<T>();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!j.is_number()) throw fail("a number");
    return j.get<double>();
  } else if constexpr (std::is_same_v<T, std::optional<double>>) {
    if (j.is_null()) return std::nullopt;
    if (!j.is_number()) throw fail("a number or null");
    return j.get<double>();
  } else if constexpr (std::is_same_v<T, std::vector<double>>) {
    if (!j.is_array()) throw fail("an array of numbers");
    std::vector<double> out;
    for (const auto& x : j) {
      if (!x.is_number()) throw fail("an array of numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }
}

template <class T>
nlohmann::json to_json_value(const T& v) {
  if constexpr (std::is_same_v<T, std::optional<double>>) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  } else {
    return nlohmann::json(v);
  }
}

}  // namespace detail

/// One configuration key: its name, the CLI flag that overrides it (empty if
/// none), and typed access into the owning struct.
template <class Config>
struct ConfigField {
  std::string key;
  std::string flag;
  std::string help;
  std::function<nlohmann::json(const Config&)> get;
  std::function<void(Config&, const nlohmann::json&)> set;
};

template <class Config, class T>
ConfigField<Config> field(std::string key, std::string flag, std::string help, T Config::*member) {
  const std::string k = key;
  return ConfigField<Config>{
      std::move(key), std::move(flag), std::move(help),
      [member](const Config& c) { return detail::to_json_value(c.*member); },
      [member, k](Config& c, const nlohmann::json& j) { c.*member = detail::json_as<T>(j, k); }};
}

inline const std::vector<ConfigField<ModelConfig>>& model_fields() {
  static const std::vector<ConfigField<ModelConfig>> fields = {
      field("f", "", "input feature dimension (defaults to the dataset's)", &ModelConfig::f),
      field("g", "graph-dim", "graph-convolution output dimension", &ModelConfig::g),
      field("h", "hidden", "hidden-state dimension", &ModelConfig::h),
      field("d_a", "attn-dim", "attention scorer hidden dimension", &ModelConfig::d_a),
      field("n", "", "node slots (defaults to the dataset's)", &ModelConfig::n),
      field("t", "", "sequence length (defaults to the dataset's)", &ModelConfig::t),
      field("gc_layers", "gc-layers", "graph-convolution layers, 1 or 2", &ModelConfig::gc_layers),
      field("isolate_padded", "isolate-padded", "drop edges to padded node slots", &ModelConfig::isolate_padded),
      field("attention_tanh", "attention-tanh", "tanh between the attention scorer layers",
            &ModelConfig::attention_tanh),
  };
  return fields;
}

inline const std::vector<ConfigField<TrainConfig>>& train_fields() {
  static const std::vector<ConfigField<TrainConfig>> fields = {
      field("epochs", "epochs", "training epochs", &TrainConfig::epochs),
      field("learning_rate", "lr", "Adam learning rate", &TrainConfig::learning_rate),
      field("adam_beta1", "beta1", "Adam first-moment decay", &TrainConfig::adam_beta1),
      field("adam_beta2", "beta2", "Adam second-moment decay", &TrainConfig::adam_beta2),
      field("adam_eps", "adam-eps", "Adam denominator epsilon", &TrainConfig::adam_eps),
      field("batch", "batch", "sequences per gradient step", &TrainConfig::batch),
      field("seed", "seed", "initialization and shuffling seed", &TrainConfig::seed),
      field("include_padded_in_loss", "include-padded", "score padded node slots in the loss",
            &TrainConfig::include_padded_in_loss),
      field("death_class_weight", "death-weight", "loss weight of the dead class", &TrainConfig::death_class_weight),
      field("shuffle", "shuffle", "shuffle sequences every epoch", &TrainConfig::shuffle),
  };
  return fields;
}

inline const std::vector<ConfigField<SynthConfig>>& synth_fields() {
  static const std::vector<ConfigField<SynthConfig>> fields = {
      field("videos", "videos", "number of videos", &SynthConfig::videos),
      field("t", "frames", "frames per video", &SynthConfig::t),
      field("max_cells", "max-cells", "node slots per video", &SynthConfig::max_cells),
      field("f", "features", "feature dimension", &SynthConfig::f),
      field("death_onset_prob", "death-onset-prob", "per-frame probability a living cell starts dying",
            &SynthConfig::death_onset_prob),
      field("marker_base", "marker-base", "death-marker level of a living cell", &SynthConfig::marker_base),
      field("marker_jump", "marker-jump", "marker increase after death onset", &SynthConfig::marker_jump),
      field("marker_noise", "marker-noise", "marker noise standard deviation", &SynthConfig::marker_noise),
      field("feature_sep", "feature-sep", "alive/dead feature cluster distance", &SynthConfig::feature_sep),
      field("threshold", "threshold", "death-marker threshold", &SynthConfig::threshold),
      field("k_consecutive", "k-consecutive", "consecutive frames above threshold for a dead label",
            &SynthConfig::k_consecutive),
      field("cell_count_weights", "cell-count-weights", "JSON array of weights over 1..max_cells cells",
            &SynthConfig::cell_count_weights),
      field("seed", "seed", "generator seed", &SynthConfig::seed),
  };
  return fields;
}

template <class Config>
nlohmann::ordered_json section_to_json(const Config& c, const std::vector<ConfigField<Config>>& fields) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& f : fields) j[f.key] = f.get(c);
  return j;
}

/// Applies the keys present in `j` onto `c`; returns the keys it set.
template <class Config>
std::set<std::string> section_from_json(Config& c, const nlohmann::json& j, const std::vector<ConfigField<Config>>& fields,
                                        const std::string& section) {
  if (!j.is_object()) throw ValidationError("config section '" + section + "' must be an object");
  std::set<std::string> seen;
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto match = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.key == it.key(); });
    if (match == fields.end()) throw ValidationError("unknown config key '" + section + "." + it.key() + "'");
    match->set(c, it.value());
    seen.insert(it.key());
  }
  return seen;
}

inline nlohmann::ordered_json to_json(const ModelConfig& c) { return section_to_json(c, model_fields()); }

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto seen = section_from_json(c, j, model_fields(), "model_config");
  for (const auto& f : model_fields()) {
    if (!seen.count(f.key)) throw ValidationError("model_config is missing key '" + f.key + "'");
  }
  c.validate();
  return c;
}

/// Merged model, training and generator settings for one CLI invocation.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  std::set<std::string> explicit_keys;  // "section.key" set by a file or a flag

  bool is_explicit(const std::string& section, const std::string& key) const {
    return explicit_keys.count(section + "." + key) > 0;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["model"] = section_to_json(model, model_fields());
    j["train"] = section_to_json(train, train_fields());
    j["synth"] = section_to_json(synth, synth_fields());
    return j;
  }

  /// Overlays a config document of the form {"model": {...}, "train": {...}, "synth": {...}}.
  void apply_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("config file must hold a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      std::set<std::string> keys;
      if (it.key() == "model") {
        keys = section_from_json(model, it.value(), model_fields(), "model");
      } else if (it.key() == "train") {
        keys = section_from_json(train, it.value(), train_fields(), "train");
      } else if (it.key() == "synth") {
        keys = section_from_json(synth, it.value(), synth_fields(), "synth");
      } else {
        throw ValidationError("unknown config section '" + it.key() + "'");
      }
      for (const auto& k : keys) explicit_keys.insert(it.key() + "." + k);
    }
  }

  /// Sets "section.key" from a command-line string, parsed as a JSON value;
  /// bare words that are not JSON are taken as strings and then type-checked.
  void apply_flag(const std::string& section, const std::string& key, const std::string& text) {
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    apply_json(nlohmann::json{{section, {{key, value}}}});
  }
};

}  // namespace cellgraph
