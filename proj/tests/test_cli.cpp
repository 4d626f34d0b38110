#include "doctest.h"
#include "cli.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using muvi::cli::run;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("muvi_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t lines(const fs::path& p) {
  std::ifstream in(p);
  std::string l;
  std::size_t n = 0;
  while (std::getline(in, l)) ++n;
  return n;
}

std::size_t columns(const fs::path& p) {
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  return static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

const std::vector<std::string> kSmall = {"--n-samples", "40", "--n-features", "25", "--n-views", "2", "--n-factors", "3"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("git blob hashes match git hash-object") {
  const fs::path dir = scratch("hash");
  fs::create_directories(dir);
  std::ofstream(dir / "hello.txt") << "hello\n";
  CHECK(muvi::cli::git_blob_sha1(dir / "hello.txt") == "ce013625030ba8dba906f756967f9e9ca394464a");
  std::ofstream(dir / "empty.txt");
  CHECK(muvi::cli::git_blob_sha1(dir / "empty.txt") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  fs::remove_all(dir);
}

TEST_CASE("generate with defaults writes the paper-scale layout") {
  const fs::path dir = scratch("gen_default");
  REQUIRE(run({"generate", "--out", dir.string()}) == muvi::cli::ok);
  for (const char* v : {"v0", "v1", "v2", "v3"}) {
    const fs::path f = dir / "data" / (std::string(v) + ".csv");
    CHECK(lines(f) == 201);
    CHECK(columns(f) == 401);
  }
  CHECK(lines(dir / "truth" / "activity.csv") == 5);
  CHECK(columns(dir / "truth" / "activity.csv") == 16);
  CHECK_FALSE(fs::exists(dir / "feature_sets.tsv"));
  const auto manifest = read_json(dir / "manifest.json");
  CHECK(manifest.at("command") == "generate");
  CHECK(manifest.at("outputs").contains("data/v0.csv"));
  CHECK(manifest.at("outputs").at("data/v0.csv") == muvi::cli::git_blob_sha1(dir / "data" / "v0.csv"));
  fs::remove_all(dir);
}

TEST_CASE("generate is byte-for-byte reproducible and writes perturbed sets for informed views") {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  const std::vector<std::string> args = with(kSmall, {"--seed", "7", "--noise", "0.5", "--informed-views", "v0"});
  REQUIRE(run(with({"generate", "--out", a.string()}, args)) == 0);
  REQUIRE(run(with({"generate", "--out", b.string()}, args)) == 0);
  for (const char* f : {"data/v0.csv", "data/v1.csv", "truth/x.csv", "truth/w_v1.csv", "truth/activity.csv", "feature_sets.tsv"}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(read_json(a / "manifest.json").at("outputs") == read_json(b / "manifest.json").at("outputs"));
  CHECK(lines(a / "feature_sets.tsv") == 3);
  // Only v0 features are listed.
  const std::string sets = slurp(a / "feature_sets.tsv");
  CHECK(sets.find("v1_f") == std::string::npos);
  CHECK(sets.find("v0_f") != std::string::npos);

  const fs::path c = scratch("gen_c");
  REQUIRE(run(with(with({"generate", "--out", c.string()}, kSmall), {"--seed", "8"})) == 0);
  CHECK(slurp(a / "data/v0.csv") != slurp(c / "data/v0.csv"));
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("configuration errors exit with code 2") {
  const fs::path dir = scratch("errors");
  CHECK(run({}) == muvi::cli::config_error);
  CHECK(run({"generate"}) == muvi::cli::config_error);
  CHECK(run({"frobnicate"}) == muvi::cli::config_error);
  CHECK(run({"train", "--out", dir.string()}) == muvi::cli::config_error);
  CHECK(run({"train", "--out", dir.string(), "--view", "v0"}) == muvi::cli::config_error);
  CHECK(run({"train", "--out", dir.string(), "--view", "v0=/does/not/exist.csv"}) == muvi::cli::config_error);
  CHECK(run(with({"train", "--synthetic", "--out", dir.string(), "--informed-views", "nope"}, kSmall)) ==
        muvi::cli::config_error);
  CHECK(run({"evaluate", "--run", (dir / "missing").string()}) == muvi::cli::config_error);
  CHECK(run({"benchmark", "--out", dir.string(), "--grid-noise", "0.1,x"}) == muvi::cli::config_error);
  CHECK(run({"train", "--config", (dir / "none.json").string(), "--out", dir.string()}) == muvi::cli::config_error);
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{not json";
  CHECK(run({"generate", "--config", (dir / "bad.json").string()}) == muvi::cli::config_error);
  fs::remove_all(dir);
}

TEST_CASE("numerical failures exit with code 3") {
  const fs::path dir = scratch("numerical");
  fs::create_directories(dir);
  std::ofstream(dir / "flat.csv") << "sample_id,a,b\ns0,1,1\ns1,1,1\ns2,1,1\n";
  CHECK(run({"train", "--out", (dir / "run").string(), "--view", "flat=" + (dir / "flat.csv").string(), "--factors",
             "1"}) == muvi::cli::numerical_error);
  fs::remove_all(dir);
}

TEST_CASE("config file supplies options and the command line overrides it") {
  const fs::path dir = scratch("config");
  fs::create_directories(dir);
  std::ofstream(dir / "cfg.json") << R"({"n_samples": 30, "n-features": 12, "n_views": 2, "n_factors": 3,
    "seed": 5, "informed_views": ["v0", "v1"], "noise": 0.2, "out": "unused",
    "generate": {"noise_sd": 0.5}})";
  REQUIRE(run({"generate", "--config", (dir / "cfg.json").string(), "--out", (dir / "g").string(), "--n-samples",
               "20"}) == 0);
  const auto cfg = read_json(dir / "g" / "manifest.json").at("config");
  CHECK(cfg.at("n-samples") == "20");
  CHECK(cfg.at("n-features") == "12");
  CHECK(cfg.at("informed-views") == "v0,v1");
  CHECK(cfg.at("noise-sd") == "0.5");
  CHECK(cfg.at("out") == (dir / "g").string());
  CHECK(lines(dir / "g" / "data" / "v0.csv") == 21);
  CHECK(columns(dir / "g" / "data" / "v1.csv") == 13);
  fs::remove_all(dir);
}

TEST_CASE("train then evaluate a small synthetic run") {
  const fs::path dir = scratch("train_eval");
  const auto args = with(kSmall, {"--synthetic", "--informed-views", "v0", "--noise", "0.1", "--max-epochs", "200",
                                  "--lr", "0.02", "--min-set-size", "0", "--out", dir.string()});
  REQUIRE(run(with({"train"}, args)) == 0);
  for (const char* f : {"checkpoint.json", "training_log.csv", "factors.csv", "delta.csv", "loadings_v0.csv",
                        "loadings_v1.csv", "run.json", "manifest.json", "feature_sets.tsv", "truth/truth.json"}) {
    CHECK(fs::exists(dir / f));
  }
  CHECK(lines(dir / "training_log.csv") == 201);
  CHECK(lines(dir / "delta.csv") == 3);

  REQUIRE(run({"evaluate", "--run", dir.string(), "--pr-curve"}) == 0);
  const fs::path ev = dir / "evaluation";
  CHECK(fs::exists(ev / "pr_curve.csv"));
  CHECK(lines(ev / "metrics.csv") == 1 + 2 * 3);
  const auto report = read_json(ev / "report.json");
  CHECK(report.at("matching").at("assignment").size() == 3);
  CHECK(report.at("mean_matched").at("f1").get<double>() >= report.at("mean_unmatched").at("f1").get<double>() - 1e-12);

  SUBCASE("same seed reproduces the checkpoint") {
    const fs::path again = scratch("train_eval_again");
    auto args2 = args;
    args2.back() = again.string();
    REQUIRE(run(with({"train"}, args2)) == 0);
    CHECK(slurp(dir / "checkpoint.json") == slurp(again / "checkpoint.json"));
    fs::remove_all(again);
  }
  SUBCASE("truth with a different factor count is rejected") {
    const fs::path other = scratch("other_truth");
    REQUIRE(run({"generate", "--out", other.string(), "--n-samples", "40", "--n-features", "25", "--n-views", "3",
                 "--n-factors", "7"}) == 0);
    CHECK(run({"evaluate", "--run", dir.string(), "--truth", (other / "truth").string()}) == muvi::cli::config_error);
    fs::remove_all(other);
  }
  fs::remove_all(dir);
}

TEST_CASE("alpha_absent 1 with feature sets, empty feature sets and no sets train identically") {
  const fs::path dir = scratch("alpha_one");
  REQUIRE(run(with({"generate", "--out", (dir / "g").string(), "--informed-views", "v0,v1"}, kSmall)) == 0);
  std::ofstream(dir / "empty.tsv") << "factor_0\tna\nfactor_1\tna\nfactor_2\tna\n";
  std::vector<std::string> base = {"train", "--view", "v0=" + (dir / "g/data/v0.csv").string(), "--view",
                                   "v1=" + (dir / "g/data/v1.csv").string(), "--max-epochs", "30", "--seed", "3",
                                   "--min-set-size", "0"};
  REQUIRE(run(with(base, {"--feature-sets", (dir / "g/feature_sets.tsv").string(), "--alpha-absent", "1.0", "--out",
                          (dir / "sets").string()})) == 0);
  REQUIRE(run(with(base, {"--feature-sets", (dir / "empty.tsv").string(), "--alpha-absent", "1.0", "--out",
                          (dir / "empty").string()})) == 0);
  REQUIRE(run(with(base, {"--factors", "3", "--out", (dir / "none").string()})) == 0);
  const std::string ref = slurp(dir / "none/checkpoint.json");
  CHECK(slurp(dir / "sets/checkpoint.json") == ref);
  CHECK(slurp(dir / "empty/checkpoint.json") == ref);

  // An informative alpha changes the fit.
  REQUIRE(run(with(base, {"--feature-sets", (dir / "g/feature_sets.tsv").string(), "--out",
                          (dir / "informed").string()})) == 0);
  CHECK(slurp(dir / "informed/checkpoint.json") != ref);

  SUBCASE("evaluate without truth reports activity only") {
    REQUIRE(run({"evaluate", "--run", (dir / "none").string()}) == 0);
    CHECK(fs::exists(dir / "none/evaluation/activity.csv"));
    CHECK_FALSE(fs::exists(dir / "none/evaluation/metrics.csv"));
  }
  fs::remove_all(dir);
}

TEST_CASE("benchmark smoke grid writes merged tables") {
  const fs::path dir = scratch("bench");
  setenv("MUVI_NUM_THREADS", "2", 1);
  REQUIRE(run(with({"benchmark", "--out", dir.string(), "--replicates", "1", "--grid-noise", "0.1,1.0",
                    "--grid-informed", "1", "--grid-alpha", "0.03", "--max-epochs", "50", "--min-epochs", "50"},
                   kSmall)) == 0);
  unsetenv("MUVI_NUM_THREADS");
  CHECK(fs::exists(dir / "cases" / "uninformed_r0.json"));
  CHECK(fs::exists(dir / "cases" / "inf1_noise0.1_alpha0.03_r0.json"));
  CHECK(lines(dir / "sweep.csv") == 1 + 3 * 2 * 2);
  CHECK(lines(dir / "table1.csv") == 3);
  CHECK(lines(dir / "alpha.csv") == 3);
  const auto manifest = read_json(dir / "manifest.json");
  CHECK(manifest.at("config").at("grid-noise") == "0.1,1.0");
  fs::remove_all(dir);
}
