#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tbps/pipeline.hpp"
#include "tbps/rtf.hpp"

using namespace tbps;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "tbps_test_pipeline";
    fs::remove_all(d);
    fs::create_directories(d);
    generate_synthetic(SynthSpec{}, d / "data");
    return d;
  }();
  return dir;
}

RunConfig small_run(const std::string& name, std::size_t epochs) {
  RunConfig cfg;
  cfg.data = (work_dir() / "data" / "manifest.jsonl").string();
  cfg.out = (work_dir() / name).string();
  cfg.epochs = epochs;
  fs::remove_all(cfg.out);
  return cfg;
}

std::vector<StepRecord> read_log(const fs::path& path) {
  std::ifstream is(path);
  std::vector<StepRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    const auto r = parse_log_line(line);
    REQUIRE_MESSAGE(r.has_value(), line);
    out.push_back(*r);
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("log line format") {
  const StepRecord r{12, 3.5, 1.25, 2.0, -0.125};
  const std::string line = format_log_line(r);
  CHECK(line == "step=12 L=3.5 Lg=1.25 Lp=2 Ldiv=-0.125");
  const auto back = parse_log_line(line);
  REQUIRE(back);
  CHECK(back->step == 12);
  CHECK(back->diversity == -0.125);
  CHECK_FALSE(parse_log_line("step=1 L=2 Lg=1 Lp=1"));
  CHECK_FALSE(parse_log_line("step=x L=2 Lg=1 Lp=1 Ldiv=0"));
  CHECK_FALSE(parse_log_line("step=1 L=2 Lg=1 Lp=1 Ldiv=0 extra=1"));
}

TEST_CASE("training lowers the loss over the first 50 steps and writes a complete run directory") {
  auto cfg = small_run("tiny", 10);
  const auto result = run_training(cfg, false);
  CHECK(result.state.epoch == 10);
  CHECK(result.state.step == 50);  // 80 training pairs, batch 16
  const auto log = read_log(result.paths.log());
  REQUIRE(log.size() == 50);
  for (std::size_t i = 0; i < log.size(); ++i) CHECK(log[i].step == static_cast<std::int64_t>(i + 1));
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    first += log[i].total / 5;
    last += log[45 + i].total / 5;
  }
  CHECK(last < first);
  for (const auto& r : log) CHECK(r.total == doctest::Approx(r.global + r.part + 0.2 * r.diversity).epsilon(1e-6));

  for (const auto& p : {result.paths.config(), result.paths.checkpoint(), result.paths.vocab(), result.paths.identities(),
                        result.paths.metrics()})
    CHECK_MESSAGE(fs::exists(p), p.string());
  RunConfig echoed;
  echoed.merge_file(result.paths.config());
  CHECK(echoed.serialize() == cfg.serialize());
  CHECK(slurp(result.paths.metrics()) == metrics_json(result.metrics, ScoreMode::Both) + "\n");
}

TEST_CASE("lambda zero logs the diversity term but leaves it out of L") {
  auto cfg = small_run("lambda0", 1);
  cfg.lambda = 0.0;
  const auto result = run_training(cfg, false);
  for (const auto& r : read_log(result.paths.log())) {
    CHECK(r.diversity != 0.0);
    CHECK(r.total == doctest::Approx(r.global + r.part).epsilon(1e-7));
  }
}

TEST_CASE("same seed gives an identical trajectory; another seed does not") {
  const auto trajectory = [](std::uint64_t seed) {
    auto cfg = small_run("traj", 2);
    cfg.seed = seed;
    const auto data = load_dataset(cfg.data, cfg.max_len);
    Model<float> model(cfg.model_config(data.vocab.size(), data.geometry, data.identities.size()), cfg.seed);
    std::vector<double> totals;
    train_model(model, data, cfg, {}, nullptr, [&](const StepRecord& r) { totals.push_back(r.total); });
    return totals;
  };
  const auto a = trajectory(3), b = trajectory(3), c = trajectory(4);
  CHECK(a.size() == 10);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("resuming reproduces an uninterrupted run exactly") {
  auto straight = small_run("straight", 3);
  straight.dropout = 0.1;
  run_training(straight, false);

  auto split = small_run("split", 1);
  split.dropout = 0.1;
  run_training(split, false);
  split.epochs = 3;
  const auto resumed = run_training(split, true);
  CHECK(resumed.state.epoch == 3);
  CHECK(slurp(fs::path(split.out) / "model.ckpt") == slurp(fs::path(straight.out) / "model.ckpt"));
  CHECK(slurp(fs::path(split.out) / "train.log") == slurp(fs::path(straight.out) / "train.log"));
}

TEST_CASE("a diverging run aborts with the step number") {
  auto cfg = small_run("diverge", 5);
  cfg.lr = 1e30;
  try {
    run_training(cfg, false);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).rfind("step ", 0) == 0);
  }
}

TEST_CASE("config and data errors surface before training") {
  auto cfg = small_run("errors", 1);
  cfg.K = 1;
  CHECK_THROWS_AS(run_training(cfg, false), ConfigError);
  cfg = small_run("errors", 1);
  cfg.data = (work_dir() / "missing.jsonl").string();
  CHECK_THROWS_AS(run_training(cfg, false), DataError);
  CHECK_FALSE(fs::exists(fs::path(cfg.out) / "model.ckpt"));
}

TEST_CASE("evaluation, reload and attention dumps") {
  auto cfg = small_run("evalrun", 3);
  run_training(cfg, false);
  const auto run = load_run(cfg, cfg.out, cfg.data);
  CHECK(run.state.epoch == 3);
  const auto set = embed_split(*run.model, run.data, default_eval_split(run.data));
  CHECK(set.split == "test");
  CHECK(set.queries.size() == 40);
  CHECK(set.gallery.size() == 20);
  for (auto mode : {ScoreMode::Global, ScoreMode::Part, ScoreMode::Both}) {
    const auto m = evaluate(set, mode);
    CHECK(m.rank1 <= m.rank5);
    CHECK(m.rank5 <= m.rank10);
    CHECK(m.num_queries == 40);
    CHECK(m.excluded == 0);
  }
  const auto h = mean_head_cosine(set);
  CHECK(std::abs(h.image) <= 1.0);
  CHECK(std::abs(h.text) <= 1.0);

  auto wrong = cfg;
  wrong.K = 3;
  CHECK_THROWS_AS(load_run(wrong, cfg.out, cfg.data), ConfigError);
  wrong = cfg;
  wrong.d = 16;
  CHECK_THROWS_AS(load_run(wrong, fs::path(cfg.out) / "model.ckpt", cfg.data), ConfigError);

  const auto out = work_dir() / "dumps";
  for (std::size_t sample : {0u, 7u, 199u}) {
    const auto dump = dump_attention(run, sample, out);
    const auto img = rtf::load(dump.image_trace);
    const auto txt = rtf::load(dump.text_trace);
    CHECK(img.shape() == Shape{4, 17});
    CHECK(txt.shape() == Shape{4, 17});
    const auto& cap = *std::find_if(run.data.captions.begin(), run.data.captions.end(),
                                    [&](const CaptionRecord& c) { return c.entry == sample; });
    for (std::size_t k = 0; k < 4; ++k) {
      double si = 0.0, st = 0.0;
      for (std::size_t j = 0; j < 17; ++j) {
        si += img.at(k, j);
        st += txt.at(k, j);
        if (j > cap.sample.length) CHECK(txt.at(k, j) == 0.0f);
      }
      CHECK(std::abs(si - 1.0) < 1e-6);
      CHECK(std::abs(st - 1.0) < 1e-6);
    }
    REQUIRE(dump.words.size() == 4);
    for (const auto& w : dump.words) CHECK(w.size() == 3);
    std::ifstream is(dump.top_words);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(is, line)) CHECK(line.rfind("head " + std::to_string(lines++) + ":", 0) == 0);
    CHECK(lines == 4);
  }
  CHECK_THROWS_AS(dump_attention(run, 200, out), DataError);
}

TEST_CASE("top attended positions skip the global row and padding") {
  const std::vector<float> row{0.5f, 0.1f, 0.2f, 0.05f, 0.15f, 0.0f};
  CHECK(top_attended_positions(row, 4, 3) == std::vector<std::size_t>{2, 4, 1});
  CHECK(top_attended_positions(row, 2, 3) == std::vector<std::size_t>{2, 1});
  const std::vector<float> ties{0.4f, 0.2f, 0.2f, 0.2f};
  CHECK(top_attended_positions(ties, 3, 2) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("gradient check") {
  GradcheckOptions opts;
  opts.precision = 64;
  const auto r64 = run_gradcheck(opts);
  CHECK(r64.passed);
  CHECK(r64.threshold == 1e-5);
  CHECK(r64.report.max_rel_error < 1e-5);

  opts.corrupt = true;
  const auto bad = run_gradcheck(opts);
  CHECK_FALSE(bad.passed);
  CHECK(bad.report.params.front().max_rel_error > 0.1);

  opts = GradcheckOptions{};
  const auto r32 = run_gradcheck(opts);
  CHECK(r32.threshold == 1e-3);
  CHECK(r32.report.params.size() == r64.report.params.size());
  // Every parameter group of the objective is probed: encoders, SAFA heads, classifiers.
  std::vector<std::string> names;
  for (const auto& e : r32.report.params) names.push_back(e.name);
  for (const auto& prefix : {"image.", "text.", "safa.head0.", "safa.head1.", "classifier.global", "classifier.part"}) {
    const bool found = std::any_of(names.begin(), names.end(), [&](const std::string& n) { return n.rfind(prefix, 0) == 0; });
    CHECK_MESSAGE(found, prefix);
  }
  opts.precision = 16;
  CHECK_THROWS_AS(run_gradcheck(opts), ConfigError);
}

TEST_CASE("sweeps") {
  auto cfg = small_run("sweep", 2);
  const auto rows = run_sweep(cfg, "lambda", {0.0, 0.2});
  CHECK(rows.size() == 2);
  const auto csv = sweep_csv(rows);
  CHECK(csv.rfind("value,rank1,rank5,rank10\n0,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  const auto k1 = sweep_csv(run_sweep(cfg, "K", {2, 4}));
  const auto k2 = sweep_csv(run_sweep(cfg, "K", {2, 4}));
  CHECK(k1 == k2);

  CHECK_THROWS_AS(run_sweep(cfg, "K", {1}), ConfigError);
  CHECK_THROWS_AS(run_sweep(cfg, "K", {2.5}), ConfigError);
  CHECK_THROWS_AS(run_sweep(cfg, "lr", {0.1}), ConfigError);
  cfg.K = 1;
  CHECK_THROWS_AS(run_sweep(cfg, "lambda", {0.0, 0.2}), ConfigError);
}
