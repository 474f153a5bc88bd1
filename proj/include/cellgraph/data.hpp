#pragma once

// Death-marker labeling, the synthetic video generator, the JSON-lines
// dataset format and the model archive.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cellgraph/config.hpp"
#include "cellgraph/diffmath.hpp"
#include "cellgraph/graph.hpp"
#include "cellgraph/model.hpp"
#include "cellgraph/training.hpp"

namespace cellgraph {

/// Dead iff some run of k consecutive frames has marker strictly above
/// `threshold`. A run anywhere in the trace counts.
inline CellState label_from_markers(std::span<const double> markers, double threshold, std::size_t k) {
  if (k == 0) throw DomainError("label_from_markers: k must be at least 1");
  if (markers.empty()) throw DomainError("label_from_markers: empty marker trace");
  if (k > markers.size()) {
    throw DomainError("label_from_markers: k = " + std::to_string(k) + " exceeds trace length " +
                      std::to_string(markers.size()));
  }
  std::size_t run = 0;
  for (double m : markers) {
    run = m > threshold ? run + 1 : 0;
    if (run >= k) return CellState::dead;
  }
  return CellState::alive;
}

// ---------------------------------------------------------------------------
// Synthetic generator

inline std::string video_id(std::size_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 6) digits.insert(0, 6 - digits.size(), '0');
  return "video-" + digits;
}

/// Generator for one video, derived from (master seed, video index) only.
inline std::mt19937_64 video_rng(std::uint64_t seed, std::size_t index) {
  const auto idx = static_cast<std::uint64_t>(index);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(idx), static_cast<std::uint32_t>(idx >> 32)};
  return std::mt19937_64(seq);
}

/// One synthetic video. Each real cell may start dying at a random frame;
/// its marker trace steps from marker_base to marker_base + marker_jump at
/// onset (plus noise, floored at 0), it is labeled by the k-consecutive rule,
/// and its features come from the dead cluster exactly on frames whose marker
/// exceeds the threshold.
inline STGraphSequence generate_video(const SynthConfig& cfg, std::size_t index) {
  std::mt19937_64 rng = video_rng(cfg.seed, index);
  const auto weights = cfg.resolved_cell_weights();
  std::discrete_distribution<std::size_t> cell_count(weights.begin(), weights.end());
  std::bernoulli_distribution onset(cfg.death_onset_prob);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double threshold = *cfg.threshold;
  const double dead_offset = cfg.feature_sep / std::sqrt(static_cast<double>(cfg.f));

  const std::size_t k = cell_count(rng) + 1;
  std::vector<std::vector<double>> markers(cfg.max_cells, std::vector<double>(cfg.t, 0.0));
  std::vector<CellState> labels;
  std::vector<Matrix> raw(cfg.t, Matrix(k, cfg.f));
  for (std::size_t v = 0; v < k; ++v) {
    std::size_t onset_frame = cfg.t;
    for (std::size_t t = 0; t < cfg.t; ++t) {
      if (onset(rng)) {
        onset_frame = t;
        break;
      }
    }
    for (std::size_t t = 0; t < cfg.t; ++t) {
      const double level = cfg.marker_base + (t >= onset_frame ? cfg.marker_jump : 0.0);
      markers[v][t] = std::max(0.0, level + cfg.marker_noise * noise(rng));
    }
    labels.push_back(label_from_markers(markers[v], threshold, cfg.k_consecutive));
    for (std::size_t t = 0; t < cfg.t; ++t) {
      const double mean = markers[v][t] > threshold ? dead_offset : 0.0;
      for (double& x : raw[t].row(v)) x = mean + noise(rng);
    }
  }
  STGraphSequence seq = pad_sequence(video_id(index), raw, labels, cfg.max_cells);
  seq.markers = std::move(markers);
  return seq;
}

/// The whole dataset. Videos are independent, so `workers` only changes
/// wall time, never the output.
inline Dataset generate_synthetic(const SynthConfig& cfg, std::size_t workers = 1) {
  cfg.validate();
  Dataset out(cfg.videos);
  parallel_for(cfg.videos, workers, [&](std::size_t i) { out[i] = generate_video(cfg, i); });
  return out;
}

// ---------------------------------------------------------------------------
// Dataset file: one JSON object per line

inline nlohmann::ordered_json sequence_to_json(const STGraphSequence& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["t"] = s.frames();
  j["n"] = s.nodes();
  j["f"] = s.feature_dim();
  nlohmann::ordered_json frames = nlohmann::ordered_json::array();
  for (const Matrix& x : s.features) {
    nlohmann::ordered_json nodes = nlohmann::ordered_json::array();
    for (std::size_t v = 0; v < x.rows(); ++v) nodes.push_back(std::vector<double>(x.row(v).begin(), x.row(v).end()));
    frames.push_back(std::move(nodes));
  }
  j["features"] = std::move(frames);
  std::vector<int> labels;
  for (auto l : s.labels) labels.push_back(to_int(l));
  j["labels"] = labels;
  j["mask"] = std::vector<int>(s.mask.begin(), s.mask.end());
  if (s.nodes() == 0 || !bitwise_equal(s.adjacency, build_fully_connected(s.nodes()))) {
    nlohmann::ordered_json adj = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < s.adjacency.rows(); ++i) {
      adj.push_back(std::vector<double>(s.adjacency.row(i).begin(), s.adjacency.row(i).end()));
    }
    j["adjacency"] = std::move(adj);
  }
  if (s.markers) j["markers"] = *s.markers;
  return j;
}

namespace detail {

class LineReader {
 public:
  LineReader(const nlohmann::json& j, std::size_t line) : j_(j), line_(line) {}

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw ParseError("line " + std::to_string(line_) + ": field '" + field + "': " + what);
  }
  [[noreturn]] void invalid(const std::string& what) const {
    throw ValidationError("line " + std::to_string(line_) + ": " + what);
  }

  const nlohmann::json& require(const std::string& field) const {
    auto it = j_.find(field);
    if (it == j_.end()) fail(field, "missing");
    return *it;
  }

  std::size_t count(const std::string& field) const {
    const auto& v = require(field);
    if (!v.is_number_unsigned()) fail(field, "expected a nonnegative integer");
    return v.get<std::size_t>();
  }

  double number(const nlohmann::json& v, const std::string& field) const {
    if (!v.is_number()) fail(field, "expected a number");
    return v.get<double>();
  }

  const nlohmann::json& array(const nlohmann::json& v, const std::string& field, std::size_t expected) const {
    if (!v.is_array()) fail(field, "expected an array");
    if (v.size() != expected) {
      invalid("field '" + field + "' has length " + std::to_string(v.size()) + ", expected " +
              std::to_string(expected));
    }
    return v;
  }

  std::vector<std::uint8_t> flags(const std::string& field, std::size_t n) const {
    const auto& v = array(require(field), field, n);
    std::vector<std::uint8_t> out;
    for (const auto& x : v) {
      if (!x.is_number_unsigned() || x.get<std::uint64_t>() > 1) fail(field, "entries must be 0 or 1");
      out.push_back(static_cast<std::uint8_t>(x.get<std::uint64_t>()));
    }
    return out;
  }

 private:
  const nlohmann::json& j_;
  std::size_t line_;
};

}  // namespace detail

/// Parses and validates one dataset line (1-based `line` for messages).
inline STGraphSequence sequence_from_json(const nlohmann::json& j, std::size_t line) {
  detail::LineReader r(j, line);
  if (!j.is_object()) r.fail("<record>", "expected a JSON object");
  static const std::set<std::string> known = {"id", "t", "n", "f", "features", "labels", "mask", "adjacency", "markers"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) r.fail(it.key(), "unknown field");
  }

  STGraphSequence s;
  const auto& id = r.require("id");
  if (!id.is_string()) r.fail("id", "expected a string");
  s.id = id.get<std::string>();
  const std::size_t t = r.count("t"), n = r.count("n"), f = r.count("f");
  if (t == 0 || n == 0 || f == 0) r.invalid("t, n and f must all be at least 1");

  const auto& frames = r.array(r.require("features"), "features", t);
  for (const auto& frame : frames) {
    const auto& nodes = r.array(frame, "features", n);
    Matrix x(n, f);
    for (std::size_t v = 0; v < n; ++v) {
      const auto& vec = r.array(nodes[v], "features", f);
      for (std::size_t k = 0; k < f; ++k) x(v, k) = r.number(vec[k], "features");
    }
    s.features.push_back(std::move(x));
  }

  for (auto label : r.flags("labels", n)) s.labels.push_back(static_cast<CellState>(label));
  s.mask = r.flags("mask", n);

  if (j.contains("adjacency")) {
    const auto& rows = r.array(j["adjacency"], "adjacency", n);
    s.adjacency = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& row = r.array(rows[i], "adjacency", n);
      for (std::size_t k = 0; k < n; ++k) s.adjacency(i, k) = r.number(row[k], "adjacency");
    }
  } else {
    s.adjacency = build_fully_connected(n);
  }

  if (j.contains("markers")) {
    const auto& rows = r.array(j["markers"], "markers", n);
    std::vector<std::vector<double>> markers;
    for (const auto& row : rows) {
      const auto& vals = r.array(row, "markers", t);
      std::vector<double> m;
      for (const auto& x : vals) m.push_back(r.number(x, "markers"));
      markers.push_back(std::move(m));
    }
    s.markers = std::move(markers);
  }

  const auto problems = validate_sequence(s);
  if (!problems.empty()) r.invalid(problems.front());
  return s;
}

inline void write_dataset(std::ostream& out, const Dataset& data) {
  for (const auto& s : data) out << sequence_to_json(s).dump() << '\n';
  if (!out) throw ValidationError("write_dataset: stream error");
}

inline void write_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  write_dataset(out, data);
}

/// Blank lines are skipped; the first malformed line aborts with its number.
inline Dataset read_dataset(std::istream& in) {
  Dataset data;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("line " + std::to_string(line) + ": malformed JSON: " + e.what());
    }
    data.push_back(sequence_from_json(j, line));
  }
  return data;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "' for reading");
  return read_dataset(in);
}

// ---------------------------------------------------------------------------
// Model archive

inline constexpr int kArchiveVersion = 1;

struct ModelArchive {
  ModelConfig config;
  ModelParams params;
  int version = kArchiveVersion;
};

inline std::string archive_to_string(const ModelArchive& a) {
  nlohmann::ordered_json j;
  j["version"] = a.version;
  j["model_config"] = to_json(a.config);
  for_each_param(a.params, [&](std::string_view name, const Matrix& m) {
    nlohmann::ordered_json t;
    t["shape"] = {m.rows(), m.cols()};
    t["data"] = std::vector<double>(m.values().begin(), m.values().end());
    j[std::string(name)] = std::move(t);
  });
  return j.dump() + "\n";
}

/// Parses an archive. Truncated or malformed text is a ParseError, a version
/// other than the current one or a tensor whose shape disagrees with the
/// config is a ValidationError. Nothing is returned on failure.
inline ModelArchive archive_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("model archive: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("model archive: expected a JSON object");
  if (!j.contains("version") || !j["version"].is_number_integer()) throw ParseError("model archive: missing version");
  const int version = j["version"].get<int>();
  if (version != kArchiveVersion) {
    throw ValidationError("model archive: incompatible version " + std::to_string(version) + " (expected " +
                          std::to_string(kArchiveVersion) + ")");
  }
  if (!j.contains("model_config")) throw ParseError("model archive: missing model_config");

  ModelArchive a;
  a.version = version;
  a.config = model_config_from_json(j["model_config"]);
  a.params = zero_params(a.config);
  std::set<std::string> seen = {"version", "model_config"};
  for_each_param(a.params, [&](std::string_view name_view, Matrix& m) {
    const std::string name(name_view);
    seen.insert(name);
    if (!j.contains(name)) throw ParseError("model archive: missing tensor '" + name + "'");
    const auto& t = j[name];
    if (!t.is_object() || !t.contains("shape") || !t.contains("data") || !t["shape"].is_array() ||
        !t["data"].is_array()) {
      throw ParseError("model archive: tensor '" + name + "' needs 'shape' and 'data' arrays");
    }
    const auto& shape = t["shape"];
    if (shape.size() != 2 || !shape[0].is_number_unsigned() || !shape[1].is_number_unsigned()) {
      throw ValidationError("model archive: tensor '" + name + "' has a malformed shape");
    }
    const std::size_t rows = shape[0].get<std::size_t>(), cols = shape[1].get<std::size_t>();
    if (rows != m.rows() || cols != m.cols()) {
      throw ValidationError("model archive: tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", config requires " + m.shape_string());
    }
    const auto& data = t["data"];
    if (data.size() != m.size()) {
      throw ValidationError("model archive: tensor '" + name + "' holds " + std::to_string(data.size()) +
                            " values for shape " + m.shape_string());
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!data[i].is_number()) throw ParseError("model archive: tensor '" + name + "' has a non-numeric entry");
      m.values()[i] = data[i].get<double>();
    }
  });
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!seen.count(it.key())) throw ValidationError("model archive: unexpected entry '" + it.key() + "'");
  }
  return a;
}

inline void save_model(const std::string& path, const ModelArchive& a) {
  check_param_shapes(a.params, a.config);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << archive_to_string(a);
  if (!out) throw ValidationError("failed writing '" + path + "'");
}

inline ModelArchive load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "' for reading");
  std::stringstream buf;
  buf << in.rdbuf();
  return archive_from_string(buf.str());
}

}  // namespace cellgraph
