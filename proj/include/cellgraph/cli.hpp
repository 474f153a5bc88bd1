#pragma once

// Command-line front end: generate, train, eval, gradcheck, predict.
// Exit codes: 0 success, 1 usage error, 2 validation error, 3 numeric failure.
// Every failure prints one line "<kind>: <reason>" to the error stream.

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cellgraph/config.hpp"
#include "cellgraph/data.hpp"
#include "cellgraph/metrics.hpp"
#include "cellgraph/model.hpp"
#include "cellgraph/training.hpp"

namespace cellgraph {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitValidation = 2, kExitNumeric = 3 };

/// Raised for bad flags, bad flag values and bad config files.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace cli_detail {

inline std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

/// Registers one string-valued flag per config key that has a flag name and
/// remembers what was given, so values can be applied after the file.
struct FlagSet {
  std::map<std::string, std::pair<std::string, std::string>> targets;  // flag -> (section, key)
  std::map<std::string, std::string> values;                           // flag -> raw text

  template <class Config>
  void add_section(CLI::App& app, const std::string& section, const std::vector<ConfigField<Config>>& fields,
                   const std::vector<std::string>& only = {}) {
    for (const auto& f : fields) {
      if (f.flag.empty()) continue;
      if (!only.empty() && std::find(only.begin(), only.end(), f.flag) == only.end()) continue;
      targets[f.flag] = {section, f.key};
      app.add_option("--" + f.flag, values[f.flag], f.help);
    }
  }

  void apply(CLI::App& app, RunConfig& cfg) const {
    for (const auto& [flag, target] : targets) {
      if (app.get_option("--" + flag)->count() == 0) continue;
      cfg.apply_flag(target.first, target.second, values.at(flag));
    }
  }
};

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw UsageError("config file '" + path + "' is not valid JSON");
  return j;
}

/// Defaults, then the config file, then flags. Any problem is a usage error.
inline RunConfig build_config(CLI::App& app, const FlagSet& flags, const std::string& config_path) {
  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg.apply_json(read_json_file(config_path));
    flags.apply(app, cfg);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw ValidationError("failed writing '" + path + "'");
}

/// Fills the model's t, n and f from the dataset unless they were set explicitly.
inline void infer_dims(RunConfig& cfg, const Dataset& data) {
  if (data.empty()) return;
  const auto& s = data.front();
  if (!cfg.is_explicit("model", "t")) cfg.model.t = s.frames();
  if (!cfg.is_explicit("model", "n")) cfg.model.n = s.nodes();
  if (!cfg.is_explicit("model", "f")) cfg.model.f = s.feature_dim();
}

inline void validate_or_usage(const RunConfig& cfg, bool synth, bool model_train) {
  try {
    if (synth) cfg.synth.validate();
    if (model_train) {
      cfg.model.validate();
      cfg.train.validate();
    }
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
}

/// SynthConfig requires a threshold; the CLI supplies 5.0 when neither the
/// config file nor --threshold gives one, and says so on the error stream.
inline constexpr double kCliDefaultThreshold = 5.0;

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  using namespace cli_detail;

  CLI::App app{"Per-cell death classification with an attention temporal graph convolutional network"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  FlagSet gen_flags;
  std::string gen_out, gen_config;
  std::size_t gen_workers = 1;
  bool gen_print = false;
  gen->add_option("--out,-o", gen_out, "Dataset file to write");
  gen->add_option("--config", gen_config, "JSON config file");
  gen->add_option("--workers", gen_workers, "Generation threads")->check(CLI::PositiveNumber);
  gen->add_flag("--print-config", gen_print, "Print the merged config and exit");
  gen_flags.add_section(*gen, "synth", synth_fields());

  // train
  auto* tr = app.add_subcommand("train", "Train a model on a dataset");
  FlagSet tr_flags;
  std::string tr_data, tr_val, tr_model, tr_log, tr_config;
  bool tr_print = false;
  tr->add_option("--data", tr_data, "Training dataset");
  tr->add_option("--val", tr_val, "Validation dataset (accuracy logged per epoch)");
  tr->add_option("--model-out,-o", tr_model, "Model archive to write");
  tr->add_option("--log", tr_log, "Epoch log file (default: standard error)");
  tr->add_option("--config", tr_config, "JSON config file");
  tr->add_flag("--print-config", tr_print, "Print the merged config and exit");
  tr_flags.add_section(*tr, "model", model_fields());
  tr_flags.add_section(*tr, "train", train_fields());

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a model and write a metrics report");
  FlagSet ev_flags;
  std::string ev_model, ev_data, ev_report, ev_config;
  std::size_t ev_workers = 1;
  ev->add_option("--model", ev_model, "Model archive")->required();
  ev->add_option("--data", ev_data, "Dataset")->required();
  ev->add_option("--report", ev_report, "Metrics report file to write");
  ev->add_option("--config", ev_config, "JSON config file (loss settings)");
  ev->add_option("--workers", ev_workers, "Evaluation threads")->check(CLI::PositiveNumber);
  ev_flags.add_section(*ev, "train", train_fields(), {"include-padded", "death-weight"});

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Compare reverse-mode and finite-difference gradients");
  ModelConfig gc_cfg;
  gc_cfg.t = 4;
  gc_cfg.n = 3;
  gc_cfg.f = 5;
  gc_cfg.g = 6;
  gc_cfg.h = 6;
  gc_cfg.d_a = 4;
  std::uint64_t gc_seed = 0;
  std::size_t gc_seeds = 1;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  bool gc_head_only = false;
  gc->add_option("--frames", gc_cfg.t, "Sequence length")->check(CLI::PositiveNumber);
  gc->add_option("--nodes", gc_cfg.n, "Node slots")->check(CLI::PositiveNumber);
  gc->add_option("--features", gc_cfg.f, "Feature dimension")->check(CLI::PositiveNumber);
  gc->add_option("--graph-dim", gc_cfg.g, "Graph-conv output dimension")->check(CLI::PositiveNumber);
  gc->add_option("--hidden", gc_cfg.h, "Hidden dimension")->check(CLI::PositiveNumber);
  gc->add_option("--attn-dim", gc_cfg.d_a, "Attention scorer dimension")->check(CLI::PositiveNumber);
  gc->add_option("--gc-layers", gc_cfg.gc_layers, "Graph-conv layers (1 or 2)")->check(CLI::IsMember({1, 2}));
  gc->add_flag("--attention-tanh", gc_cfg.attention_tanh, "tanh between the attention scorer layers");
  gc->add_option("--seed", gc_seed, "First seed");
  gc->add_option("--seeds", gc_seeds, "Number of consecutive seeds to check")->check(CLI::PositiveNumber);
  gc->add_option("--eps", gc_eps, "Finite-difference step");
  gc->add_option("--tol", gc_tol, "Maximum allowed relative error");
  gc->add_flag("--head-only", gc_head_only, "Check only the classifier head parameters");

  // predict
  auto* pr = app.add_subcommand("predict", "Write per-node death probabilities and attention weights");
  std::string pr_model, pr_data, pr_out;
  std::size_t pr_workers = 1;
  pr->add_option("--model", pr_model, "Model archive")->required();
  pr->add_option("--data", pr_data, "Dataset")->required();
  pr->add_option("--out,-o", pr_out, "Predictions file (default: standard output)");
  pr->add_option("--workers", pr_workers, "Evaluation threads")->check(CLI::PositiveNumber);

  auto fail = [&](const char* kind, const std::string& what, int code) {
    err << kind << ": " << one_line(what) << '\n';
    return code;
  };

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      return fail("usage_error", e.what(), kExitUsage);
    }

    if (gen->parsed()) {
      RunConfig cfg = build_config(*gen, gen_flags, gen_config);
      if (!cfg.synth.threshold) {
        cfg.synth.threshold = kCliDefaultThreshold;
        err << "note: no threshold given, using " << kCliDefaultThreshold << '\n';
      }
      validate_or_usage(cfg, true, false);
      if (gen_print) {
        out << cfg.to_json().dump(2) << '\n';
        return kExitOk;
      }
      if (gen_out.empty()) throw UsageError("generate: --out is required");
      const Dataset data = generate_synthetic(cfg.synth, gen_workers);
      write_dataset(gen_out, data);
      std::vector<std::size_t> dead(cfg.synth.max_cells, 0), alive(cfg.synth.max_cells, 0), padded(cfg.synth.max_cells, 0);
      for (const auto& s : data) {
        for (std::size_t v = 0; v < s.nodes(); ++v) {
          if (s.mask[v] == 0) {
            ++padded[v];
          } else {
            ++(s.labels[v] == CellState::dead ? dead[v] : alive[v]);
          }
        }
      }
      out << "videos\t" << data.size() << '\n';
      out << "node\tdead\talive\tpadded\n";
      for (std::size_t v = 0; v < dead.size(); ++v) {
        out << v + 1 << '\t' << dead[v] << '\t' << alive[v] << '\t' << padded[v] << '\n';
      }
      return kExitOk;
    }

    if (tr->parsed()) {
      RunConfig cfg = build_config(*tr, tr_flags, tr_config);
      if (tr_print) {
        validate_or_usage(cfg, false, true);
        out << cfg.to_json().dump(2) << '\n';
        return kExitOk;
      }
      if (tr_data.empty()) throw UsageError("train: --data is required");
      if (tr_model.empty()) throw UsageError("train: --model-out is required");
      const Dataset data = read_dataset(tr_data);
      Dataset val;
      if (!tr_val.empty()) val = read_dataset(tr_val);
      infer_dims(cfg, data);
      validate_or_usage(cfg, false, true);
      if (data.empty()) throw ValidationError("train: empty dataset");
      check_dataset(data, cfg.model);
      check_dataset(val, cfg.model);

      std::ofstream log_file;
      if (!tr_log.empty()) {
        log_file.open(tr_log, std::ios::binary);
        if (!log_file) throw ValidationError("cannot open '" + tr_log + "' for writing");
      }
      std::ostream& log = tr_log.empty() ? err : log_file;
      log << "epoch\tmean_loss\tval_accuracy\n";
      const auto result = train(data, cfg.model, cfg.train, val.empty() ? nullptr : &val,
                                [&](std::size_t epoch, const TrainHistory& h) {
                                  log << epoch_log_line(epoch, h) << '\n';
                                  log.flush();
                                });
      save_model(tr_model, ModelArchive{cfg.model, result.params, kArchiveVersion});
      return kExitOk;
    }

    if (ev->parsed()) {
      RunConfig cfg = build_config(*ev, ev_flags, ev_config);
      validate_or_usage(cfg, false, true);
      const ModelArchive archive = load_model(ev_model);
      const Dataset data = read_dataset(ev_data);
      if (data.empty()) throw DomainError("eval: empty dataset");
      check_dataset(data, archive.config);
      const MetricsReport report = evaluate(data, archive.params, archive.config, cfg.train, ev_workers);
      if (!ev_report.empty()) write_text(ev_report, to_json(report).dump(2) + "\n");
      out << "average_accuracy\tmean_loss\taverage_precision\taverage_recall\n";
      out << summary_row(report) << '\n';
      return kExitOk;
    }

    if (gc->parsed()) {
      if (!(gc_eps > 0.0)) throw UsageError("gradcheck: --eps must be positive");
      try {
        gc_cfg.validate();
      } catch (const ValidationError& e) {
        throw UsageError(e.what());
      }
      bool all_pass = true;
      out << "seed\tmax_rel_err\tworst_parameter\tcoordinates\tresult\n";
      for (std::size_t k = 0; k < gc_seeds; ++k) {
        const auto r = grad_check_model(gc_cfg, gc_seed + k, gc_eps, gc_tol,
                                        gc_head_only ? GradScope::head_only : GradScope::all);
        all_pass = all_pass && r.pass;
        out << gc_seed + k << '\t' << nlohmann::json(r.max_rel_err).dump() << '\t' << r.worst_parameter << '\t'
            << r.coordinates << '\t' << (r.pass ? "pass" : "fail") << '\n';
      }
      if (!all_pass) {
        return fail("numeric_error", "gradient check exceeded tolerance " + nlohmann::json(gc_tol).dump(),
                    kExitNumeric);
      }
      return kExitOk;
    }

    if (pr->parsed()) {
      const ModelArchive archive = load_model(pr_model);
      const Dataset data = read_dataset(pr_data);
      check_dataset(data, archive.config);
      const auto preds = predict_all(data, archive.params, archive.config, pr_workers);
      std::ostringstream text;
      for (std::size_t i = 0; i < data.size(); ++i) {
        nlohmann::ordered_json nodes = nlohmann::ordered_json::array();
        for (std::size_t v = 0; v < data[i].nodes(); ++v) {
          const auto w = preds[i].attention_weights.row(v);
          nodes.push_back({{"node", v + 1},
                           {"p_dead", preds[i].probs(v, 1)},
                           {"decision", to_int(hard_decision(preds[i].probs.row(v)))},
                           {"attention", std::vector<double>(w.begin(), w.end())}});
        }
        nlohmann::ordered_json line;
        line["id"] = data[i].id;
        line["nodes"] = std::move(nodes);
        text << line.dump() << '\n';
      }
      if (pr_out.empty()) {
        out << text.str();
      } else {
        write_text(pr_out, text.str());
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    return fail("usage_error", e.what(), kExitUsage);
  } catch (const NumericError& e) {
    return fail(to_string(e.kind()), e.what(), kExitNumeric);
  } catch (const Error& e) {
    return fail(to_string(e.kind()), e.what(), kExitValidation);
  } catch (const std::exception& e) {
    return fail("validation_error", e.what(), kExitValidation);
  }
  return kExitUsage;
}

}  // namespace cellgraph
