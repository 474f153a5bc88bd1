#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cellgraph/cli.hpp"

using namespace cellgraph;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "cellgraph");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, sep)) out.push_back(part);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("cellgraph_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  /// A small dataset plus the flags that keep training fast.
  std::string small_data(const std::string& name = "data.jsonl", const std::string& seed = "3") {
    const auto r = run({"generate", "--out", path(name), "--videos", "12", "--frames", "5", "--features", "4",
                        "--threshold", "5", "--death-onset-prob", "0.1", "--seed", seed});
    EXPECT_EQ(r.code, 0) << r.err;
    return path(name);
  }
  std::vector<std::string> small_model_flags() const {
    return {"--graph-dim", "4", "--hidden", "4", "--attn-dim", "3"};
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenerateWritesOneLinePerVideo) {
  const auto r = run({"generate", "--videos", "122", "--frames", "15", "--max-cells", "3", "--seed", "7",
                      "--threshold", "5", "--out", path("d.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(slurp(path("d.jsonl"))), 122u);
  EXPECT_EQ(r.out.rfind("videos\t122\nnode\tdead\talive\tpadded\n", 0), 0u);
  EXPECT_EQ(line_count(r.out), 5u);
}

TEST_F(Cli, GenerateZeroVideos) {
  const auto r = run({"generate", "--videos", "0", "--threshold", "5", "--out", path("empty.jsonl")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("empty.jsonl")));
  EXPECT_EQ(fs::file_size(path("empty.jsonl")), 0u);
}

TEST_F(Cli, GenerateZeroFramesIsUsageError) {
  const auto r = run({"generate", "--frames", "0", "--threshold", "5", "--out", path("x.jsonl")});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("usage_error: ", 0), 0u) << r.err;
  EXPECT_EQ(line_count(r.err), 1u);
}

TEST_F(Cli, GenerateDefaultsThresholdWithNote) {
  const auto r = run({"generate", "--videos", "2", "--out", path("d.jsonl")});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("no threshold given"), std::string::npos);
}

TEST_F(Cli, BadFlagsAreUsageErrors) {
  EXPECT_EQ(run({"generate", "--no-such-flag"}).code, 1);
  EXPECT_EQ(run({"generate", "--videos", "many", "--out", path("d")}).code, 1);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"train", "--epochs", "2"}).code, 1);
}

TEST_F(Cli, ConfigFileAndFlagPrecedence) {
  std::ofstream(path("cfg.json")) << R"({"synth": {"videos": 4, "threshold": 6.5, "seed": 11}})";
  const auto r = run({"generate", "--config", path("cfg.json"), "--seed", "12", "--print-config"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["synth"]["videos"], 4);
  EXPECT_EQ(j["synth"]["threshold"], 6.5);
  EXPECT_EQ(j["synth"]["seed"], 12);

  std::ofstream(path("bad.json")) << R"({"synth": {"vidoes": 4}})";
  const auto bad = run({"generate", "--config", path("bad.json"), "--out", path("d.jsonl")});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("vidoes"), std::string::npos);
}

TEST_F(Cli, TrainIsDeterministicAndZeroEpochsIsInit) {
  const auto data = small_data();
  auto train_args = [&](const std::string& out, const std::string& epochs) {
    std::vector<std::string> a = {"train", "--data", data, "--model-out", path(out), "--epochs", epochs,
                                  "--seed", "5", "--log", path(out + ".log")};
    for (const auto& f : small_model_flags()) a.push_back(f);
    return a;
  };
  ASSERT_EQ(run(train_args("a.json", "2")).code, 0);
  ASSERT_EQ(run(train_args("b.json", "2")).code, 0);
  EXPECT_EQ(slurp(path("a.json")), slurp(path("b.json")));
  const auto log = split(slurp(path("a.json.log")), '\n');
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[0], "epoch\tmean_loss\tval_accuracy");
  EXPECT_EQ(split(log[2], '\t').size(), 3u);

  ASSERT_EQ(run(train_args("init.json", "0")).code, 0);
  const ModelArchive archive = load_model(path("init.json"));
  EXPECT_EQ(archive.config.t, 5u);
  EXPECT_EQ(archive.config.f, 4u);
  EXPECT_EQ(slurp(path("init.json")), archive_to_string(ModelArchive{archive.config, init_params(archive.config, 5)}));
}

TEST_F(Cli, TrainDimensionMismatchFailsBeforeTraining) {
  const auto data = small_data();
  std::ofstream(path("c.json")) << R"({"model": {"f": 9}})";
  const auto r = run({"train", "--data", data, "--model-out", path("m.json"), "--epochs", "1", "--config", path("c.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("validation_error: ", 0), 0u) << r.err;
  EXPECT_FALSE(fs::exists(path("m.json")));
}

TEST_F(Cli, EvalSummaryMatchesReport) {
  const auto data = small_data();
  std::vector<std::string> a = {"train", "--data", data, "--model-out", path("m.json"), "--epochs", "1", "--log", path("log")};
  for (const auto& f : small_model_flags()) a.push_back(f);
  ASSERT_EQ(run(a).code, 0);
  const auto r = run({"eval", "--model", path("m.json"), "--data", data, "--report", path("report.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = split(r.out, '\n');
  ASSERT_EQ(lines.size(), 2u);
  const auto fields = split(lines[1], '\t');
  ASSERT_EQ(fields.size(), 4u);
  const auto report = nlohmann::json::parse(slurp(path("report.json")));
  auto text = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  EXPECT_EQ(fields[0], text(report["average_accuracy"]));
  EXPECT_EQ(fields[1], text(report["mean_loss"]));
  EXPECT_EQ(fields[2], text(report["average_precision"]));
  EXPECT_EQ(fields[3], text(report["average_recall"]));
  EXPECT_EQ(report["sequences"], 12);

  EXPECT_EQ(run({"eval", "--model", path("m.json"), "--data", data, "--workers", "3"}).out, r.out);
}

TEST_F(Cli, EvalEmptyDatasetIsDomainError) {
  const auto data = small_data();
  std::vector<std::string> a = {"train", "--data", data, "--model-out", path("m.json"), "--epochs", "0", "--log", path("log")};
  ASSERT_EQ(run(a).code, 0);
  std::ofstream(path("empty.jsonl")).close();
  const auto r = run({"eval", "--model", path("m.json"), "--data", path("empty.jsonl")});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("domain_error: ", 0), 0u) << r.err;
}

TEST_F(Cli, EvalIncompatibleModel) {
  const auto data = small_data();
  ModelConfig c;
  c.f = 7;
  c.t = 5;
  c.g = c.h = c.d_a = 2;
  save_model(path("m.json"), ModelArchive{c, init_params(c, 1)});
  EXPECT_EQ(run({"eval", "--model", path("m.json"), "--data", data}).code, 2);
  EXPECT_EQ(run({"predict", "--model", path("m.json"), "--data", data}).code, 2);
  EXPECT_EQ(run({"eval", "--model", path("missing.json"), "--data", data}).code, 2);
}

TEST_F(Cli, GradcheckDefaultsPassAndTinyTolFails) {
  const auto ok = run({"gradcheck", "--seeds", "5", "--seed", "1"});
  EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
  EXPECT_EQ(line_count(ok.out), 6u);
  const auto bad = run({"gradcheck", "--tol", "1e-12"});
  EXPECT_EQ(bad.code, 3);
  EXPECT_EQ(bad.err.rfind("numeric_error: ", 0), 0u);
  EXPECT_NE(bad.out.find("fail"), std::string::npos);
  EXPECT_EQ(run({"gradcheck", "--eps", "0"}).code, 1);
  EXPECT_EQ(run({"gradcheck", "--eps", "-1e-5"}).code, 1);
}

TEST_F(Cli, PredictZeroModelAndTallyMatchesEval) {
  const auto data = small_data();
  ModelConfig c;
  c.t = 5;
  c.f = 4;
  c.g = c.h = c.d_a = 3;
  save_model(path("zero.json"), ModelArchive{c, zero_params(c)});
  const auto zero = run({"predict", "--model", path("zero.json"), "--data", data});
  ASSERT_EQ(zero.code, 0) << zero.err;
  for (const auto& line : split(zero.out, '\n')) {
    for (const auto& node : nlohmann::json::parse(line)["nodes"]) EXPECT_EQ(node["p_dead"], 0.5);
  }

  save_model(path("m.json"), ModelArchive{c, init_params(c, 8)});
  ASSERT_EQ(run({"predict", "--model", path("m.json"), "--data", data, "--out", path("p.jsonl")}).code, 0);
  ASSERT_EQ(run({"eval", "--model", path("m.json"), "--data", data, "--report", path("r.json")}).code, 0);
  const Dataset ds = read_dataset(data);
  std::vector<NodeConfusion> tally(3);
  const auto lines = split(slurp(path("p.jsonl")), '\n');
  ASSERT_EQ(lines.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto j = nlohmann::json::parse(lines[i]);
    EXPECT_EQ(j["id"], ds[i].id);
    for (std::size_t v = 0; v < 3; ++v) {
      const auto& node = j["nodes"][v];
      double total = 0.0;
      for (double w : node["attention"]) total += w;
      EXPECT_NEAR(total, 1.0, 1e-9);
      accumulate(tally, v, cell_state_from_int(node["decision"].get<int>()), ds[i].labels[v]);
    }
  }
  const auto report = nlohmann::json::parse(slurp(path("r.json")));
  for (std::size_t v = 0; v < 3; ++v) {
    EXPECT_EQ(report["nodes"][v]["tp"], tally[v].tp);
    EXPECT_EQ(report["nodes"][v]["fp"], tally[v].fp);
    EXPECT_EQ(report["nodes"][v]["tn"], tally[v].tn);
    EXPECT_EQ(report["nodes"][v]["fn"], tally[v].fn);
  }
}

TEST_F(Cli, GenerateIsIndependentOfWorkers) {
  ASSERT_EQ(run({"generate", "--videos", "30", "--threshold", "5", "--seed", "4", "--out", path("a"), "--workers", "1"}).code, 0);
  ASSERT_EQ(run({"generate", "--videos", "30", "--threshold", "5", "--seed", "4", "--out", path("b"), "--workers", "4"}).code, 0);
  EXPECT_EQ(slurp(path("a")), slurp(path("b")));
}
