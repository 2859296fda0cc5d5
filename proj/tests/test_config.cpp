#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "tbps/config.hpp"

using namespace tbps;

TEST_CASE("defaults") {
  const RunConfig cfg;
  CHECK(cfg.K == 4);
  CHECK(cfg.lambda == 0.2);
  CHECK(cfg.eps == 1e-8);
  CHECK(cfg.d == 32);
  CHECK(cfg.mode == "both");
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("set and get every key") {
  RunConfig cfg;
  cfg.set("K", "10");
  cfg.set("lambda", " 0.5 ");
  cfg.set("mode", "part");
  cfg.set("seed", "18446744073709551615");
  CHECK(cfg.K == 10);
  CHECK(cfg.lambda == 0.5);
  CHECK(cfg.get("mode") == "part");
  CHECK(cfg.seed == 18446744073709551615ULL);
  for (const auto& k : RunConfig::keys()) CHECK_NOTHROW(cfg.get(k.name));
  CHECK(RunConfig::keys().size() == 25);
}

TEST_CASE("bad keys and values are config errors") {
  RunConfig cfg;
  CHECK_THROWS_AS(cfg.set("learning_rate", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.get("nope"), ConfigError);
  CHECK_THROWS_AS(cfg.set("K", "four"), ConfigError);
  CHECK_THROWS_AS(cfg.set("K", "-1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("K", "2.5"), ConfigError);
  CHECK_THROWS_AS(cfg.set("lr", "1e-3x"), ConfigError);
}

TEST_CASE("file merge with comments, and line numbers in errors") {
  RunConfig cfg;
  std::istringstream good("# desk run\nK = 6   # heads\n\nlr=0.01\nout = runs/a b\n");
  cfg.merge(good, "good.cfg");
  CHECK(cfg.K == 6);
  CHECK(cfg.lr == 0.01);
  CHECK(cfg.out == "runs/a b");

  std::istringstream bad("K = 2\nbogus = 1\n");
  try {
    cfg.merge(bad, "bad.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bad.cfg:2") != std::string::npos);
    CHECK(msg.find("bogus") != std::string::npos);
  }
  std::istringstream no_eq("K 2\n");
  CHECK_THROWS_AS(cfg.merge(no_eq, "x"), ConfigError);
  CHECK_THROWS_AS(cfg.merge_file("/nonexistent/cfg.txt"), ConfigError);
}

TEST_CASE("serialize round trip is exact") {
  RunConfig a;
  a.lambda = 0.1;
  a.lr = 3e-4;
  a.noise_std = 1.0 / 3.0;
  a.data = "d/manifest.jsonl";
  a.K = 7;
  std::istringstream is(a.serialize());
  RunConfig b;
  b.merge(is, "round");
  CHECK(b.serialize() == a.serialize());
  CHECK(b.noise_std == a.noise_std);
  CHECK(b.lr == a.lr);
}

TEST_CASE("validation") {
  RunConfig cfg;
  cfg.K = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lambda = 0.0;
  CHECK_NOTHROW(cfg.validate());
  cfg = RunConfig{};
  cfg.attn_heads = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.mode = "fancy";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.eps = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("derived configs") {
  RunConfig cfg;
  cfg.K = 3;
  cfg.lambda = 0.4;
  const auto m = cfg.model_config(50, ImageGeometry{16, 16, 3}, 9);
  CHECK(m.num_heads == 3);
  CHECK(m.loss.lambda == 0.4);
  CHECK(m.loss.num_identities == 9);
  CHECK(m.encoder.vocab_size == 50);
  CHECK(cfg.synth_spec().num_ids == cfg.num_ids);
  CHECK(cfg.adam().lr == cfg.lr);
}
