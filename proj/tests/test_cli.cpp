#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "mgvq/cli.hpp"
#include "mgvq/config.hpp"
#include "mgvq/features.hpp"
#include "mgvq/wav.hpp"
#include "test_util.hpp"

using namespace mgvq;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Index count_lines(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<Index>(std::count(s.begin(), s.end(), '\n'));
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    static int counter = 0;
    root_ = fs::temp_directory_path() / ("mgvq_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(root_);
    fs::create_directories(root_);
    ProjectConfig cfg = ProjectConfig::desk();
    cfg.model = tk::tiny_config(2);
    cfg.train = TrainConfig::desk(2);
    cfg.train.total_steps = 2;
    cfg.train.batch_size = 2;
    cfg.train.segment_seconds = 0.05;
    cfg.train.checkpoint_interval = 1;
    cfg.data.num_pairs = 3;
    cfg.data.min_duration = 0.08;
    cfg.data.max_duration = 0.1;
    std::ofstream(path("tiny.json")) << to_json(cfg).dump(2);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string path(const std::string& name) const { return (root_ / name).string(); }

  std::string train_into(const std::string& name, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"train", "--config", path("tiny.json"), "--output-dir", path(name)};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = cli(args);
    EXPECT_EQ(r.code, kExitOk) << r.err;
    return (root_ / name / "checkpoints" / "latest.ckpt").string();
  }

  fs::path root_;
};

}  // namespace

TEST_F(CliTest, PrintConfigShowsResolvedOverrides) {
  const auto r = cli({"print-config", "--set", "train.lr_max=0.25", "--seed", "9"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const Json doc = Json::parse(r.out);
  EXPECT_DOUBLE_EQ(doc["train"]["lr_max"].get<double>(), 0.25);
  EXPECT_EQ(doc["train"]["seed"], 9);
  EXPECT_EQ(doc["data"]["seed"], 9);
  Json expect = to_json(ProjectConfig::desk());
  expect["train"]["lr_max"] = 0.25;
  expect["train"]["seed"] = 9;
  expect["data"]["seed"] = 9;
  EXPECT_EQ(doc, expect);
}

TEST_F(CliTest, ConfigErrorsExitWithTwo) {
  EXPECT_EQ(cli({"print-config", "--set", "train.bogus=1"}).code, kExitConfigError);
  EXPECT_EQ(cli({"print-config", "--set", "train.batch_size=\"x\""}).code, kExitConfigError);
  EXPECT_EQ(cli({"print-config", "--config", path("missing.json")}).code, kExitConfigError);
  EXPECT_EQ(cli({}).code, kExitConfigError);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitConfigError);
  EXPECT_EQ(cli({"train", "--config", path("tiny.json")}).code, kExitConfigError);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST_F(CliTest, RuntimeErrorsExitWithThreeAndLeaveNoOutput) {
  const auto r = cli({"eval", "--checkpoint", path("nothing.ckpt"), "--output-dir", path("out")});
  EXPECT_EQ(r.code, kExitRuntimeError);
  EXPECT_FALSE(r.err.empty());
  EXPECT_FALSE(fs::exists(path("out")));
  EXPECT_EQ(cli({"enhance", "--checkpoint", path("nothing.ckpt"), "--input", path("x.wav"), "--output-dir", path("out")}).code,
            kExitRuntimeError);
  EXPECT_FALSE(fs::exists(path("out")));
}

TEST_F(CliTest, SynthCorpusWritesPairsAndFingerprint) {
  const auto r = cli({"synth-corpus", "--config", path("tiny.json"), "--output-dir", path("corpus")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(count_lines(root_ / "corpus" / "manifest.txt"), 6);
  EXPECT_TRUE(fs::exists(root_ / "corpus" / "clean"));
  const Json doc = Json::parse(slurp(root_ / "corpus" / "config.json"));
  EXPECT_EQ(slurp(root_ / "corpus" / "fingerprint.txt"), config_fingerprint(doc) + "\n");
}

TEST_F(CliTest, TrainIsDeterministicAndResumable) {
  train_into("a");
  train_into("b");
  EXPECT_EQ(count_lines(root_ / "a" / "train_log.jsonl"), 2);
  EXPECT_EQ(slurp(root_ / "a" / "train_log.jsonl"), slurp(root_ / "b" / "train_log.jsonl"));
  EXPECT_TRUE(fs::exists(root_ / "a" / "checkpoints" / "step_1.ckpt"));
  EXPECT_EQ(slurp(root_ / "a" / "fingerprint.txt"), slurp(root_ / "b" / "fingerprint.txt"));

  // Resuming a four-step run from its step-2 checkpoint replays steps 3 and 4.
  const auto c = cli({"train", "--config", path("tiny.json"), "--set", "train.total_steps=4", "--output-dir", path("c")});
  ASSERT_EQ(c.code, kExitOk) << c.err;
  const auto d = cli({"train", "--config", path("tiny.json"), "--set", "train.total_steps=4", "--checkpoint",
                      path("c/checkpoints/step_2.ckpt"), "--output-dir", path("d")});
  ASSERT_EQ(d.code, kExitOk) << d.err;
  std::istringstream full(slurp(root_ / "c" / "train_log.jsonl"));
  std::string line, tail;
  for (int i = 0; std::getline(full, line); ++i)
    if (i >= 2) tail += line + "\n";
  EXPECT_EQ(slurp(root_ / "d" / "train_log.jsonl"), tail);
}

TEST_F(CliTest, EnhanceEvalAndInspectConsumeACheckpoint) {
  const std::string ckpt = train_into("run");
  Rng rng(3);
  write_wav(path("in.wav"), Waveform(tk::random_signal(1234, rng, 0.1)));
  auto r = cli({"enhance", "--checkpoint", ckpt, "--input", path("in.wav"), "--output-dir", path("enh")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(read_wav(root_ / "enh" / "in.wav").size(), 1234);

  r = cli({"eval", "--checkpoint", ckpt, "--output-dir", path("ev")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const Json report = Json::parse(slurp(root_ / "ev" / "eval_report.json"));
  EXPECT_EQ(report["files"].size(), 3u);
  EXPECT_EQ(report["config_fingerprint"].get<std::string>() + "\n", slurp(root_ / "run" / "fingerprint.txt"));

  r = cli({"inspect-codebooks", "--checkpoint", ckpt, "--output-dir", path("cb")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  for (int i = 0; i <= 2; ++i) {
    EXPECT_TRUE(fs::exists(root_ / "cb" / ("vq" + std::to_string(i) + "_codewords.csv")));
    EXPECT_TRUE(fs::exists(root_ / "cb" / ("vq" + std::to_string(i) + "_projection.svg")));
  }
  EXPECT_EQ(Json::parse(slurp(root_ / "cb" / "codebooks.json")).size(), 3u);
}

TEST_F(CliTest, AblateWritesOneRowPerMask) {
  std::ofstream(path("grid.json")) << R"({"masks": "single"})";
  auto r = cli({"ablate", "--config", path("tiny.json"), "--set", "train.checkpoint_interval=0", "--grid",
                path("grid.json"), "--output-dir", path("abl")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const Json report = Json::parse(slurp(root_ / "abl" / "ablation_report.json"));
  ASSERT_EQ(report["rows"].size(), 4u);
  EXPECT_TRUE(report["rows"][1]["perplexity"][0].is_null());
  EXPECT_EQ(count_lines(root_ / "abl" / "ablation_report.csv"), 5);

  std::ofstream(path("bad_grid.json")) << R"({"masks": [[true, false]]})";
  r = cli({"ablate", "--config", path("tiny.json"), "--grid", path("bad_grid.json"), "--output-dir", path("abl2")});
  EXPECT_EQ(r.code, kExitConfigError);
}

TEST_F(CliTest, PrecomputedFeaturesAreReadPerPair) {
  ASSERT_EQ(cli({"synth-corpus", "--config", path("tiny.json"), "--output-dir", path("corpus")}).code, kExitOk);
  fs::create_directories(path("feats"));
  for (const auto& e : fs::directory_iterator(root_ / "corpus" / "noisy")) {
    save_precomputed(root_ / "feats" / (e.path().stem().string() + ".feat"), stub_features(read_wav(e.path()), 6, 1));
  }
  const auto r = cli({"train", "--config", path("tiny.json"), "--corpus", path("corpus"), "--set",
                      "features.provider=precomputed", "--set", "features.precomputed_dir=" + path("feats"), "--set",
                      "train.segment_seconds=0", "--output-dir", path("pre")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  fs::remove(root_ / "feats" / fs::directory_iterator(root_ / "feats")->path().filename());
  const auto missing = cli({"train", "--config", path("tiny.json"), "--corpus", path("corpus"), "--set",
                            "features.provider=precomputed", "--set", "features.precomputed_dir=" + path("feats"),
                            "--set", "train.segment_seconds=0", "--output-dir", path("pre2")});
  EXPECT_EQ(missing.code, kExitRuntimeError);
}
