#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tbps/checkpoint.hpp"
#include "tbps/config.hpp"
#include "tbps/gradcheck.hpp"

namespace tbps {

// ------------------------------------------------------------------ training

struct StepRecord {
  std::int64_t step = 0;
  double total = 0.0;
  double global = 0.0;
  double part = 0.0;
  double diversity = 0.0;
};

// "step=<i> L=<f> Lg=<f> Lp=<f> Ldiv=<f>"
std::string format_log_line(const StepRecord& r);
std::optional<StepRecord> parse_log_line(std::string_view line);

using StepCallback = std::function<void(const StepRecord&)>;
using EpochCallback = std::function<void(const checkpoint::TrainState&)>;

// Minimizes the total objective with Adam on the "train" split from `state`
// up to cfg.epochs. Writes one log line per step to `log` when given. A
// non-finite loss aborts with a NumericError naming the step.
checkpoint::TrainState train_model(Model<float>& model, const Dataset& data, const RunConfig& cfg,
                                   checkpoint::TrainState state, std::ostream* log,
                                   const StepCallback& on_step = {}, const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------- evaluation

// Text-to-image protocol: every caption of the split queries the split's
// images.
struct EvalSet {
  std::string split;
  std::vector<SampleEmbedding> queries;
  std::vector<SampleEmbedding> gallery;
};

// Uses "test" when it has images, otherwise "train".
std::string default_eval_split(const Dataset& data);
EvalSet embed_split(const Model<float>& model, const Dataset& data, const std::string& split);
RankMetrics evaluate(const EvalSet& set, ScoreMode mode);

// Mean cosine over ordered head pairs i≠j, averaged over samples; reported
// separately for the gallery images and the caption queries.
struct HeadRedundancy {
  double image = 0.0;
  double text = 0.0;
};
HeadRedundancy mean_head_cosine(const EvalSet& set);

// ------------------------------------------------------------ run directories

struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "config.txt"; }
  std::filesystem::path log() const { return dir / "train.log"; }
  std::filesystem::path checkpoint() const { return dir / "model.ckpt"; }
  std::filesystem::path vocab() const { return dir / "vocab.txt"; }
  std::filesystem::path identities() const { return dir / "identities.txt"; }
  std::filesystem::path metrics() const { return dir / "metrics.json"; }
};

struct TrainRunResult {
  RunPaths paths;
  checkpoint::TrainState state;
  RankMetrics metrics;
};

// Loads cfg.data, trains into cfg.out (resuming from its checkpoint when
// asked), then writes config, log, checkpoint, vocabulary, identity map and
// metrics for cfg.mode.
TrainRunResult run_training(const RunConfig& cfg, bool resume, std::ostream* progress = nullptr);

// A trained run reloaded for inference.
struct LoadedRun {
  RunConfig cfg;
  Dataset data;
  std::unique_ptr<Model<float>> model;
  checkpoint::TrainState state;
};

// `checkpoint` may be a run directory or a checkpoint file inside one. The
// model is built from `cfg` (which the caller has merged over the run's
// config.txt) so a mismatched K or d surfaces as a ConfigError.
LoadedRun load_run(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& manifest);

// Run directory that owns a checkpoint path (the path itself when a directory).
std::filesystem::path run_dir_of(const std::filesystem::path& checkpoint);

// --------------------------------------------------------------- diagnostics

struct AttentionDump {
  std::filesystem::path image_trace;  // RTF1, K×(N+1)
  std::filesystem::path text_trace;   // RTF1, K×(max_len+1)
  std::filesystem::path top_words;    // per head, top-3 attended words
  std::vector<std::vector<std::string>> words;
};

// sample_id indexes the manifest entries (0-based line number).
AttentionDump dump_attention(const LoadedRun& run, std::size_t sample_id, const std::filesystem::path& out_dir);

// Highest-weighted valid word positions (1..length) of a text trace row.
std::vector<std::size_t> top_attended_positions(std::span<const float> row, std::size_t length, std::size_t count);

struct GradcheckOptions {
  int precision = 32;  // 32 or 64
  bool corrupt = false;
  double h = 0.0;          // 0 selects 1e-6
  double threshold = 0.0;  // 0 selects 1e-3 (32-bit) or 1e-5 (64-bit)
  std::uint64_t seed = 0;
};

struct GradcheckResult {
  GradCheckReport report;
  double threshold = 0.0;
  double h = 0.0;
  bool passed = false;
};

// Builds a micro model (d=8, one layer per encoder, K=2, n=4) and compares the
// gradients of the full objective (λ=0.2) with central differences.
GradcheckResult run_gradcheck(const GradcheckOptions& opts);

struct SweepRow {
  double value = 0.0;
  RankMetrics metrics;
  HeadRedundancy redundancy;
};

// Retrains from scratch per value of "K" or "lambda", all with cfg.seed.
std::vector<SweepRow> run_sweep(const RunConfig& cfg, const std::string& param, const std::vector<double>& values,
                                std::ostream* progress = nullptr);
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace tbps
