#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mce/config.hpp"

using namespace mce;

namespace {

std::string write_temp_config(const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / "mce_test_config.json";
  std::ofstream out(path);
  out << body;
  return path.string();
}

}  // namespace

TEST_CASE("defaults load without a file and carry documented values") {
  RunConfig cfg = load_run_config("");
  CHECK(cfg.dataset.image_size == 64);
  CHECK(cfg.model.widths == std::array<int, 3>{32, 64, 64});
  CHECK(cfg.model.token_dim == 64);
  CHECK(cfg.model.heads == 1);
  CHECK(cfg.model.output == CrossOutput::kFusion);
  CHECK(cfg.optimizer.lr == 0.0025);
  CHECK(cfg.optimizer.momentum == 0.9);
  CHECK(cfg.optimizer.weight_decay == 0.0001);
  CHECK(cfg.optimizer.iterations == 2000);
  CHECK(cfg.optimizer.batch_episodes == 4);
  CHECK(cfg.eval.episodes == 1000);
  CHECK(cfg.run.k_shot == 1);
  CHECK(cfg.ablate.seeds == std::vector<std::uint64_t>{0, 1, 2});
}

TEST_CASE("unknown keys are rejected with their path") {
  const std::string path = write_temp_config(R"({"optimizer": {"learning_rate": 0.1}})");
  CHECK_THROWS_WITH_AS(load_run_config(path), doctest::Contains("optimizer.learning_rate"),
                       ConfigError);
  const std::string path2 = write_temp_config(R"({"models": {}})");
  CHECK_THROWS_AS(load_run_config(path2), ConfigError);
  std::remove(path.c_str());
}

TEST_CASE("file values and overrides are applied, overrides win") {
  const std::string path = write_temp_config(R"({"optimizer": {"lr": 0.5}, "run": {"fold": 2}})");
  RunConfig cfg = load_run_config(path, {"optimizer.lr=0.25", "model.output=query_only",
                                         "model.multi_level=false", "run.seed=9"});
  CHECK(cfg.optimizer.lr == 0.25);
  CHECK(cfg.run.fold == 2);
  CHECK(cfg.model.output == CrossOutput::kQueryOnly);
  CHECK_FALSE(cfg.model.multi_level);
  CHECK(cfg.run.seed == 9);
  std::remove(path.c_str());
}

TEST_CASE("malformed overrides and values raise ConfigError") {
  CHECK_THROWS_AS(load_run_config("", {"optimizer.lr"}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"=5"}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"model.output=bogus"}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"optimizer.lr=-1"}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"model.widths=[4,4,4]"}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"dataset.image_size=30"}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {"model.heads=3"}), ConfigError);
}

TEST_CASE("fingerprint is stable, canonical, and sensitive to every field") {
  RunConfig a = load_run_config("");
  RunConfig b = load_run_config("");
  CHECK(config_fingerprint(a) == config_fingerprint(b));
  CHECK(canonical_json(a) == canonical_json(b));

  RunConfig c = load_run_config("", {"optimizer.lr=0.003"});
  CHECK(config_fingerprint(a) != config_fingerprint(c));
  RunConfig d = load_run_config("", {"run.seed=1"});
  CHECK(config_fingerprint(a) != config_fingerprint(d));

  // an explicitly-written default equals the pure default
  const std::string path = write_temp_config(R"({"optimizer": {"lr": 0.0025}})");
  RunConfig e = load_run_config(path);
  CHECK(config_fingerprint(a) == config_fingerprint(e));
  std::remove(path.c_str());
}

TEST_CASE("missing config file is an IO error") {
  CHECK_THROWS_AS(load_run_config("/nonexistent/path/config.json"), IoError);
}
