#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "ucrn/config.hpp"

using namespace ucrn;
namespace fs = std::filesystem;

namespace {

bool throws_config(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  std::string cmd = std::string(UCRN_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 512> buf{};
  RunResult res;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), static_cast<int>(buf.size()), pipe) != nullptr) res.output += buf.data();
  int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("ucrn_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config defaults cover all pipeline settings with typed access") {
  Config cfg;
  CHECK(cfg.get_int("dataset.documents") == 2048);
  CHECK(cfg.get_int("lm.d_model") == 64);
  CHECK(cfg.get_double("pretrain.lr") == doctest::Approx(3e-4));
  CHECK(cfg.get_u64("dataset.seed") == 1234);
  CHECK(cfg.get_string("adapter.condition") == "gold");
  CHECK(cfg.get_int_list("eval.k_values") == std::vector<int>{1, 5, 10});
}

TEST_CASE("config rejects unknown keys and malformed values by name") {
  Config cfg;
  CHECK(throws_config([&] { cfg.set("no.such.key", "1"); }, "no.such.key"));
  CHECK(throws_config([&] { cfg.set("lm.d_model", ""); }, "empty value"));
  CHECK(throws_config([&] { cfg.get_string("nonexistent"); }, "nonexistent"));
  cfg.set("lm.d_model", "banana");
  CHECK(throws_config([&] { cfg.get_int("lm.d_model"); }, "lm.d_model"));
  cfg.set("pretrain.lr", "fast");
  CHECK(throws_config([&] { cfg.get_double("pretrain.lr"); }, "non-numeric"));
  cfg.set("eval.k_values", "1,zebra");
  CHECK(throws_config([&] { cfg.get_int_list("eval.k_values"); }, "eval.k_values"));
}

TEST_CASE("config files support comments, blanks, and loud failures") {
  fs::path dir = fresh_dir("cfg");
  fs::path good = dir / "good.cfg";
  {
    std::ofstream out(good);
    out << "# comment line\n\n  lm.d_model = 48  \npretrain.epochs=3\n";
  }
  Config cfg;
  cfg.load_file(good.string());
  CHECK(cfg.get_int("lm.d_model") == 48);
  CHECK(cfg.get_int("pretrain.epochs") == 3);

  fs::path bad_key = dir / "bad_key.cfg";
  {
    std::ofstream out(bad_key);
    out << "misspelled.key = 1\n";
  }
  Config cfg2;
  CHECK(throws_config([&] { cfg2.load_file(bad_key.string()); }, "misspelled.key"));

  fs::path bad_line = dir / "bad_line.cfg";
  {
    std::ofstream out(bad_line);
    out << "lm.d_model\n";
  }
  CHECK(throws_config([&] { cfg2.load_file(bad_line.string()); }, "expected key = value"));
  CHECK(throws_config([&] { cfg2.load_file((dir / "missing.cfg").string()); }, "cannot open"));
}

TEST_CASE("later configuration sources override earlier ones") {
  fs::path dir = fresh_dir("prec");
  fs::path file = dir / "base.cfg";
  {
    std::ofstream out(file);
    out << "output_root = from_file\n";
  }
  Config cfg;
  cfg.load_file(file.string());
  CHECK(cfg.get_string("output_root") == "from_file");
  setenv("UCRN_OUTPUT_ROOT", "from_env", 1);
  cfg.apply_environment();
  unsetenv("UCRN_OUTPUT_ROOT");
  CHECK(cfg.get_string("output_root") == "from_env");
  cfg.set("output_root", "from_flag");
  CHECK(cfg.get_string("output_root") == "from_flag");
}

TEST_CASE("cli: unknown override key exits with the usage code and names the key") {
  fs::path dir = fresh_dir("badset");
  RunResult r = run_cli("--output-root " + dir.string() + " datagen --set bogus.key=1");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("bogus.key") != std::string::npos);
}

TEST_CASE("cli: invalid stage exits with the usage code") {
  fs::path dir = fresh_dir("badstage");
  RunResult r = run_cli("--output-root " + dir.string() + " train-retriever --stage 3");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("stage") != std::string::npos);
}

TEST_CASE("cli: tiny datagen succeeds and writes the dataset") {
  fs::path dir = fresh_dir("datagen");
  RunResult r = run_cli("--output-root " + dir.string() +
                        " datagen --set dataset.documents=48 --set dataset.train_examples=32"
                        " --set dataset.test_examples=16 --set dataset.golden_examples=8");
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(dir / "dataset" / "documents.jsonl"));
  CHECK(fs::exists(dir / "dataset" / "examples.jsonl"));
  CHECK(fs::exists(dir / "dataset" / "vocab.txt"));
  CHECK(!fs::exists(dir / "datagen.failed"));
}

TEST_CASE("cli: a failing step exits nonzero and leaves a failure marker") {
  fs::path dir = fresh_dir("failmark");
  RunResult r = run_cli("--output-root " + dir.string() + " eval-retrieval");
  CHECK(r.exit_code == 1);
  fs::path marker = dir / "eval-retrieval.failed";
  REQUIRE(fs::exists(marker));
  std::ifstream in(marker);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(!text.empty());
}
