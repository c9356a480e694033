#include "cslid/cli.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cslid/corpus.hpp"

namespace cslid {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

std::string tree_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.filename().string() + "\n" + read_file(f);
  return all;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("cslid_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    const auto r = run({"gen-corpus", "--out", (dir_ / "corpus").string(), "--utts", "30", "--vocab-a", "4",
                        "--vocab-b", "4", "--words-min", "2", "--words-max", "4", "--layers", "3", "--dim", "6",
                        "--seed", "9"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = run({"train", "--corpus", corpus(), "--out", model(), "--strategy", "separate-ft", "--epochs",
                        "2", "--ft-epochs", "1", "--hidden", "6", "--depth", "1", "--batch", "4"});
    ASSERT_EQ(t.code, 0) << t.err;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string corpus() { return (dir_ / "corpus").string(); }
  static std::string model() { return (dir_ / "model.json").string(); }
  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static fs::path dir_;
};

fs::path CliTest::dir_;

TEST_F(CliTest, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("gen-corpus"), std::string::npos);
  EXPECT_EQ(run({"train", "--help"}).code, 0);
}

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"eval", "--model", model(), "--corpus", corpus(), "--bogus-flag"}).code, 1);
  EXPECT_EQ(run({"eval", "--corpus", corpus()}).code, 1);
  EXPECT_EQ(run({"eval", "--model", model(), "--corpus", corpus(), "--split", "dev"}).code, 1);
  EXPECT_EQ(run({"train", "--corpus", corpus(), "--out", path("x.json"), "--strategy", "nope"}).code, 1);
  EXPECT_EQ(run({"train", "--corpus", corpus(), "--out", path("x.json"), "--lambda", "2"}).code, 1);
  EXPECT_EQ(run({"probe-lid", "--corpus", corpus(), "--head", "cnn"}).code, 1);
  EXPECT_EQ(run({"layer-weights", "--model", model(), "--corpus", corpus(), "--branch", "both"}).code, 1);
}

TEST_F(CliTest, MissingOrCorruptInputsExitOne) {
  const auto r = run({"eval", "--model", path("absent.json"), "--corpus", corpus()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  std::ofstream(path("garbage.json")) << "{not json";
  EXPECT_EQ(run({"eval", "--model", path("garbage.json"), "--corpus", corpus()}).code, 1);
  EXPECT_EQ(run({"eval", "--model", model(), "--corpus", path("nowhere")}).code, 1);
}

TEST_F(CliTest, RuntimeFailuresExitTwo) {
  std::ofstream(path("blocker")) << "file";
  const auto r = run({"gen-corpus", "--out", path("blocker") + "/sub", "--utts", "3"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST_F(CliTest, EvalPrintsTable) {
  const auto r = run({"eval", "--model", model(), "--corpus", corpus(), "--json", path("report.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("All"), std::string::npos);
  EXPECT_NE(r.out.find("Man"), std::string::npos);
  EXPECT_NE(r.out.find("Eng"), std::string::npos);
  EXPECT_NE(r.out.find("test"), std::string::npos);
  EXPECT_NE(r.out.find("lid frame accuracy"), std::string::npos);
  EXPECT_NE(read_file(path("report.json")).find("\"strategy\""), std::string::npos);
}

TEST_F(CliTest, TrainWritesLogNextToCheckpoint) {
  const std::string log = read_file(path("model.log.jsonl"));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 5);
}

TEST_F(CliTest, RepeatRunsAreByteIdentical) {
  const std::string before = tree_digest(corpus());
  for (const char* name : {"a", "b"}) {
    const auto r = run({"train", "--corpus", corpus(), "--out", path(std::string(name) + ".json"), "--strategy",
                        "joint", "--epochs", "1", "--ft-epochs", "1", "--hidden", "4", "--depth", "1", "--seed",
                        "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    ASSERT_EQ(run({"eval", "--model", path(std::string(name) + ".json"), "--corpus", corpus(), "--json",
                   path(std::string(name) + ".report.json")})
                  .code,
              0);
  }
  EXPECT_EQ(read_file(path("a.json")), read_file(path("b.json")));
  EXPECT_EQ(read_file(path("a.log.jsonl")), read_file(path("b.log.jsonl")));
  EXPECT_EQ(read_file(path("a.report.json")), read_file(path("b.report.json")));
  EXPECT_EQ(tree_digest(corpus()), before);
}

TEST_F(CliTest, ProbeReportsOneRowPerSplit) {
  const auto r = run({"probe-lid", "--corpus", corpus(), "--epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("head,split,accuracy\n", 0), 0u);
  EXPECT_NE(r.out.find("fc,train,"), std::string::npos);
  EXPECT_NE(r.out.find("fc,val,"), std::string::npos);
  EXPECT_NE(r.out.find("fc,test,"), std::string::npos);
}

TEST_F(CliTest, ExportPosteriorsWritesCsv) {
  const Corpus c = load_corpus(corpus());
  const std::string id = c.splits.test.front();
  const auto r = run({"export-posteriors", "--model", model(), "--corpus", corpus(), "--utt", id, "--top-k", "2",
                      "--out", path("post.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = read_file(path("post.csv"));
  EXPECT_EQ(csv.rfind("frame,top1_token,top1_prob,top2_token,top2_prob,lid_silence,lid_lang_a,lid_lang_b\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), c.find(id)->frames() + 1);
  EXPECT_EQ(run({"export-posteriors", "--model", model(), "--corpus", corpus(), "--utt", "missing"}).code, 1);
}

TEST_F(CliTest, LayerWeightsSumToOne) {
  const auto r = run({"layer-weights", "--model", model(), "--corpus", corpus()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("rescaled"), std::string::npos);
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "layer,score");
  double sum = 0.0;
  int rows = 0;
  while (std::getline(lines, line)) {
    sum += std::stod(line.substr(line.find(',') + 1));
    ++rows;
  }
  EXPECT_EQ(rows, 3);
  EXPECT_NEAR(sum, 1.0, 1e-5);
}

TEST_F(CliTest, LayerWeightsRejectSingleLayerModel) {
  ASSERT_EQ(run({"train", "--corpus", corpus(), "--out", path("base.json"), "--strategy", "baseline", "--epochs",
                 "1", "--hidden", "4", "--depth", "1"})
                .code,
            0);
  EXPECT_EQ(run({"layer-weights", "--model", path("base.json"), "--corpus", corpus()}).code, 1);
}

}  // namespace
}  // namespace cslid
