#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

/// Runs the CLI with `args` (already shell-quoted), capturing stdout.
Run run(const std::string& args) {
  const std::string cmd = std::string("'") + SERVICEMONITOR_CLI + "' " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string sample(const std::string& name) { return std::string(SERVICEMONITOR_SOURCE_DIR) + "/samples/" + name; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("servicemonitor-cli-") + info->name() + "-" +
                                        std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  /// Small labeled corpus -> features.jsonl; returns its path.
  std::string small_features(std::size_t per_profile = 20) {
    EXPECT_EQ(run("gen --per-profile " + std::to_string(per_profile) + " --out " + path("corpus")).code, 0);
    EXPECT_EQ(run("featurize " + path("corpus") + " --labels " + path("corpus/labels.tsv") + " --out " +
                  path("features.jsonl"))
                  .code,
              0);
    return path("features.jsonl");
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, ParseListsResolvedFunctions) {
  const auto r = run("--catalog " + sample("example_catalog.tsv") + " parse " + sample("example_trace.jsonl"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out,
            "example_trace\t0\tcom.android.internal.telephony.IPhoneSubInfo\tgetSubscriberId\n"
            "example_trace\t1\tandroid.location.ILocationManager\trequestLocationUpdates\n"
            "example_trace\t2\tcom.android.internal.telephony.ISms\tsendText\n"
            "example_trace\t3\tandroid.location.ILocationManager\trequestLocationUpdates\n"
            "example_trace\t4\tcom.android.internal.telephony.ISms\tsendText\n");
}

TEST_F(CliTest, ParseSkipsNoiseByDefault) {
  const auto r = run("--catalog " + sample("example_catalog.tsv") + " parse " + sample("noisy_trace.jsonl"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out,
            "noisy_trace\t0\tcom.android.internal.telephony.ISms\tsendText\n"
            "noisy_trace\t1\tcom.android.internal.telephony.IPhoneSubInfo\tgetSubscriberId\n");
}

TEST_F(CliTest, UnknownPolicyErrorExitsWithDataError) {
  const auto r = run("--catalog " + sample("example_catalog.tsv") + " --unknown-policy error parse " +
                     sample("noisy_trace.jsonl"));
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, MissingFileIsDataError) { EXPECT_EQ(run("parse " + path("does-not-exist.smtr")).code, 2); }

TEST_F(CliTest, MarkovJsonDump) {
  const auto r = run("--catalog " + sample("example_catalog.tsv") + " parse --markov-json " +
                     sample("example_trace.jsonl"));
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["state_count"], 3);
  EXPECT_NEAR(j["fv"][0][1].get<double>(), 4.0 / 3.0, 1e-12);
  EXPECT_NEAR(j["probabilities"][0][2].get<double>(), 0.36, 1e-12);
}

TEST_F(CliTest, FeaturizeWorkedExample) {
  const auto r = run("--catalog " + sample("example_catalog.tsv") + " featurize " + sample("example_trace.jsonl"));
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["app_id"], "example_trace");
  const auto values = j["values"].get<std::vector<double>>();
  const std::vector<double> expected = {0, 0.64, 0.36, 0, 0, 1, 0, 1, 0};
  ASSERT_EQ(values.size(), expected.size());
  for (std::size_t i = 0; i < values.size(); ++i) EXPECT_NEAR(values[i], expected[i], 1e-9) << i;
}

TEST_F(CliTest, FeaturizeEmptyTraceIsZeroVector) {
  {
    std::ofstream(path("empty.smtr"), std::ios::binary).write("SMTR\x01\x00\x00\x00\x00\x00", 10);
  }
  const auto r = run("--catalog " + sample("example_catalog.tsv") + " featurize " + path("empty.smtr"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(nlohmann::json::parse(r.out)["values"].get<std::vector<double>>(), std::vector<double>(9, 0.0));
}

TEST_F(CliTest, FeaturizeBinaryNeedsOutFile) {
  EXPECT_EQ(run("featurize --format binary " + sample("example_trace.jsonl")).code, 1);
  EXPECT_EQ(run("featurize --format binary " + sample("example_trace.jsonl") + " --out " + path("f.smft")).code, 0);
  EXPECT_EQ(slurp(path("f.smft")).substr(0, 4), "SMFT");
}

TEST_F(CliTest, GenIsDeterministic) {
  ASSERT_EQ(run("--seed 5 gen --per-profile 3 --out " + path("a")).code, 0);
  ASSERT_EQ(run("--seed 5 gen --per-profile 3 --out " + path("b")).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(path("a"))) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(fs::path(path("b")) / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 7u);  // 6 traces + labels.tsv
  EXPECT_NE(slurp(path("a/labels.tsv")).find("telephony-malware-000002\tmalicious"), std::string::npos);
}

TEST_F(CliTest, GenDumpProfilesMatchesShippedFile) {
  ASSERT_EQ(run("gen --dump-profiles " + path("profiles.json")).code, 0);
  EXPECT_EQ(slurp(path("profiles.json")), slurp(std::string(SERVICEMONITOR_SOURCE_DIR) + "/data/default_profiles.json"));
}

TEST_F(CliTest, EvaluateReportSchema) {
  const auto features = small_features();
  const auto r = run("evaluate --folds 5 --trees 30 --pca-dims 10 --roc-csv " + path("roc.csv") + " " + features);
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  for (const char* key : {"accuracy", "fpr", "fnr", "auc", "roc_points", "confusion", "fold_count", "seed"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["fold_count"], 5);
  EXPECT_EQ(j["seed"], 42);
  EXPECT_EQ(slurp(path("roc.csv")).rfind("fpr,tpr\n", 0), 0u);
  const auto table = run("evaluate --table --folds 5 --trees 30 --pca-dims 10 " + features);
  EXPECT_EQ(table.code, 0);
  EXPECT_NE(table.out.find("accuracy"), std::string::npos);
}

TEST_F(CliTest, TrainThenPredict) {
  const auto features = small_features();
  ASSERT_EQ(run("train --trees 30 --pca-dims 10 --timestamp 0 --out " + path("m1.smdl") + " " + features).code, 0);
  ASSERT_EQ(run("train --trees 30 --pca-dims 10 --timestamp 0 --out " + path("m2.smdl") + " " + features).code, 0);
  EXPECT_EQ(slurp(path("m1.smdl")), slurp(path("m2.smdl")));

  const auto r = run("predict --model " + path("m1.smdl") + " " + path("corpus"));
  ASSERT_EQ(r.code, 0);
  std::istringstream lines(r.out);
  std::string line;
  std::size_t n = 0, correct = 0;
  while (std::getline(lines, line)) {
    ++n;
    const bool mal_truth = line.rfind("telephony-malware", 0) == 0;
    const bool mal_called = line.size() >= 9 && line.substr(line.size() - 9) == "malicious";
    correct += mal_truth == mal_called;
  }
  EXPECT_EQ(n, 40u);
  EXPECT_GE(correct, 36u);  // training-set predictions
}

TEST_F(CliTest, PredictCatalogMismatchIsDataError) {
  const auto features = small_features();
  ASSERT_EQ(run("train --trees 10 --pca-dims 5 --out " + path("m.smdl") + " " + features).code, 0);
  EXPECT_EQ(run("--catalog " + sample("example_catalog.tsv") + " predict --model " + path("m.smdl") + " " +
                sample("example_trace.jsonl"))
                .code,
            2);
}

TEST_F(CliTest, SingleClassTrainingExitsThree) {
  ASSERT_EQ(run("gen --per-profile 4 --out " + path("corpus")).code, 0);
  {
    std::ofstream labels(path("all-benign.tsv"));
    for (const auto& e : fs::directory_iterator(path("corpus"))) {
      if (e.path().extension() == ".smtr") labels << e.path().stem().string() << "\tbenign\n";
    }
  }
  ASSERT_EQ(run("featurize " + path("corpus") + " --labels " + path("all-benign.tsv") + " --out " +
                path("f.jsonl"))
                .code,
            0);
  EXPECT_EQ(run("train --trees 5 --pca-dims 3 --out " + path("m.smdl") + " " + path("f.jsonl")).code, 3);
}

TEST_F(CliTest, HelpExitsZeroForEverySubcommand) {
  EXPECT_EQ(run("--help").code, 0);
  for (const char* sub : {"parse", "featurize", "gen", "train", "evaluate", "predict"}) {
    const auto r = run(std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("Usage"), std::string::npos) << sub;
  }
}

TEST_F(CliTest, BadUsageExitsOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("gen --out " + path("x")).code, 1);  // neither --count nor --per-profile
}

TEST_F(CliTest, PrintConfigShowsPrecedence) {
  {
    std::ofstream(path("cfg.json")) << R"({"seed": 7, "trees": 99, "threshold": 0.7})";
  }
  const auto r = run("--config " + path("cfg.json") + " --seed 9 --print-config evaluate --trees 11 x");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["seed"], 9);        // flag beats config
  EXPECT_EQ(j["trees"], 11);
  EXPECT_EQ(j["threshold"], 0.7);  // config beats default
  EXPECT_EQ(j["pca_dims"], 200);   // default
}
