#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "memeclf/cli.hpp"
#include "memeclf/errors.hpp"

using namespace memeclf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("memeclf_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Captured {
  int code;
  std::string out;
};

Captured run(std::vector<std::string> args) {
  std::ostringstream buffer;
  auto* old = std::cout.rdbuf(buffer.rdbuf());
  args.push_back("--log-level");
  args.push_back("off");
  const int code = run_cli(args);
  std::cout.rdbuf(old);
  return {code, buffer.str()};
}

const std::string kFixture = std::string(MEMECLF_FIXTURE_DIR) + "/mimic_like.jsonl";

// A model small enough for tests that train.
const std::vector<std::string> kTiny = {
    "--set", "model.hidden_dim=8",   "--set", "model.num_heads=2",     "--set", "model.num_layers=1",
    "--set", "model.patch_size=8",   "--set", "model.image_height=16", "--set", "model.image_width=16",
    "--set", "model.max_text_len=6", "--set", "train.train_batch=4",   "--set", "train.learning_rate=0.001"};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTiny.begin(), kTiny.end());
  return args;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("key = value text with comments and blank lines") {
    const auto entries = parse_config_text("# comment\n\nmodel.hidden_dim = 32\ntrain.epochs=3  # trailing\n");
    REQUIRE(entries.size() == 2);
    CHECK(entries[0] == std::pair<std::string, std::string>{"model.hidden_dim", "32"});
    CHECK(entries[1] == std::pair<std::string, std::string>{"train.epochs", "3"});
  }

  TEST_CASE("a line without '=' names its source line") {
    try {
      parse_config_text("a = 1\nbroken\n", "x.cfg");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("x.cfg:2") != std::string::npos);
    }
  }

  TEST_CASE("later entries win and profile applies first") {
    const RunConfig c = resolve_config({{"model.hidden_dim", "32"}, {"profile", "paper"}, {"model.hidden_dim", "48"},
                                        {"output.dir", "o"}});
    CHECK(c.profile == "paper");
    CHECK(c.model.hidden_dim == 48);
    CHECK(c.model.image_height == 256);
  }

  TEST_CASE("unknown keys and malformed values are config errors") {
    CHECK_THROWS_AS(resolve_config({{"model.width", "3"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"train.epochs", "many"}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"model.num_heads", "5"}}), ConfigError);
  }

  TEST_CASE("output directory falls back to the environment variable") {
    ::setenv("MEMECLF_OUTPUT_DIR", "/tmp/memeclf_env_out", 1);
    CHECK(resolve_config({}).output_dir == "/tmp/memeclf_env_out");
    CHECK(resolve_config({{"output.dir", "explicit"}}).output_dir == "explicit");
    ::unsetenv("MEMECLF_OUTPUT_DIR");
    CHECK(resolve_config({}).output_dir == "memeclf_out");
  }

  TEST_CASE("to_json echoes every key") {
    const nlohmann::json j = resolve_config({}).to_json();
    for (const auto& key : RunConfig::keys()) CHECK_MESSAGE(j.contains(key), key);
  }
}

TEST_SUITE("commands") {
  TEST_CASE("usage errors exit 1") {
    CHECK(run({"bogus"}).code == 1);
    CHECK(run({"stats", "--set", "nope=1", "--manifest", kFixture}).code == 1);
    CHECK(run({"stats", "--out", scratch("nomanifest").string()}).code == 1);
  }

  TEST_CASE("a missing manifest file is a runtime failure") {
    CHECK(run({"stats", "--manifest", "/nonexistent/m.jsonl", "--out", scratch("missing").string()}).code == 2);
  }

  TEST_CASE("stats prints the class counts of the fixture") {
    const fs::path out = scratch("stats");
    const Captured c = run({"stats", "--manifest", kFixture, "--out", out.string()});
    CHECK(c.code == 0);
    CHECK(c.out.find("{0:545, 1:408} n=953 unlabeled=0") != std::string::npos);
    CHECK(fs::exists(out / "stats.json"));
  }

  TEST_CASE("synth is deterministic per seed") {
    const fs::path a = scratch("synth_a");
    const fs::path b = scratch("synth_b");
    REQUIRE(run({"synth", "--n", "8", "--mode", "xor", "--seed", "3", "--out", a.string()}).code == 0);
    REQUIRE(run({"synth", "--n", "8", "--mode", "xor", "--seed", "3", "--out", b.string()}).code == 0);
    CHECK(slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl"));
    CHECK(slurp(a / "meta.jsonl") == slurp(b / "meta.jsonl"));
    CHECK(run({"synth", "--n", "7", "--out", scratch("synth_c").string()}).code == 1);
  }

  TEST_CASE("kfold --plan-only prints and writes the plan") {
    const fs::path out = scratch("plan");
    const Captured c = run({"kfold", "--plan-only", "--manifest", kFixture, "--out", out.string()});
    CHECK(c.code == 0);
    CHECK(c.out.find("kfold plan K=5: holdout 95, folds {172,172,172,171,171}") != std::string::npos);
    const auto plan = nlohmann::json::parse(slurp(out / "plan.json"));
    CHECK(plan["holdout"].size() == 95);
    CHECK(plan["folds"].size() == 5);
  }

  TEST_CASE("train, eval and predict on a small synthetic corpus") {
    const fs::path data = scratch("e2e_data");
    const fs::path out = scratch("e2e_out");
    REQUIRE(run({"synth", "--n", "40", "--mode", "easy", "--seed", "1", "--out", data.string()}).code == 0);
    const std::string manifest = (data / "manifest.jsonl").string();
    const Captured t = run(with_tiny({"train", "--manifest", manifest, "--epochs", "2", "--out", out.string()}));
    REQUIRE(t.code == 0);
    const auto report = nlohmann::json::parse(slurp(out / "report.json"));
    CHECK(report["command"] == "train");
    CHECK(report["runs"].size() == 1);
    CHECK(report["config"]["model.hidden_dim"] == 8);
    CHECK(report["config"]["train.epochs"] == 2);
    CHECK(fs::exists(out / "table.csv"));
    CHECK(fs::exists(out / "run1" / "curves.csv"));
    const fs::path ckpt = out / "run1" / "checkpoint";
    REQUIRE(fs::exists(ckpt));

    const fs::path eval_out = scratch("e2e_eval");
    CHECK(run({"eval", "--checkpoint", ckpt.string(), "--manifest", manifest, "--out", eval_out.string()}).code == 0);
    CHECK(fs::exists(eval_out / "report.json"));

    const fs::path pred_out = scratch("e2e_pred");
    CHECK(run({"predict", "--checkpoint", ckpt.string(), "--manifest", manifest, "--out", pred_out.string()}).code == 0);
    const std::string csv = slurp(pred_out / "predictions.csv");
    CHECK(csv.rfind("id,probability,label\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 41);
  }
}
