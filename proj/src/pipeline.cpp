#include "tbps/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "tbps/ops.hpp"
#include "tbps/rtf.hpp"

namespace tbps {

namespace fs = std::filesystem;

std::string format_log_line(const StepRecord& r) {
  std::ostringstream os;
  os << std::setprecision(9) << "step=" << r.step << " L=" << r.total << " Lg=" << r.global << " Lp=" << r.part
     << " Ldiv=" << r.diversity;
  return os.str();
}

std::optional<StepRecord> parse_log_line(std::string_view line) {
  StepRecord r;
  std::istringstream is{std::string(line)};
  std::string tok;
  int seen = 0;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) return std::nullopt;
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    const char* first = val.data();
    const char* last = val.data() + val.size();
    if (key == "step") {
      auto [p, ec] = std::from_chars(first, last, r.step);
      if (ec != std::errc() || p != last) return std::nullopt;
      seen |= 1;
      continue;
    }
    double v = 0.0;
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || p != last) return std::nullopt;
    if (key == "L") r.total = v, seen |= 2;
    else if (key == "Lg") r.global = v, seen |= 4;
    else if (key == "Lp") r.part = v, seen |= 8;
    else if (key == "Ldiv") r.diversity = v, seen |= 16;
    else return std::nullopt;
  }
  if (seen != 31) return std::nullopt;
  return r;
}

checkpoint::TrainState train_model(Model<float>& model, const Dataset& data, const RunConfig& cfg,
                                   checkpoint::TrainState state, std::ostream* log, const StepCallback& on_step,
                                   const EpochCallback& on_epoch) {
  const BatchIterator batches(data, "train", cfg.batch_size, cfg.seed, true);
  const auto params = model.parameters();
  const AdamConfig adam = cfg.adam();
  // Dropout masks draw from a stream keyed by the global step, so a resumed
  // run replays exactly.
  const Rng dropout_root = Rng(cfg.seed).fork(0x64726f70ULL);
  for (auto epoch = static_cast<std::size_t>(state.epoch); epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : batches.epoch(epoch)) {
      const std::int64_t step = state.step + 1;
      Rng rng = dropout_root.fork(static_cast<std::uint64_t>(step));
      ForwardContext ctx{true, cfg.dropout, &rng};
      zero_grads(params);
      std::optional<LossBreakdown<float>> lb;
      try {
        lb = model.loss(model.forward(batch, ctx));
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step) + ": " + e.what());
      }
      const double total = lb->total.item();
      if (!std::isfinite(total)) throw NumericError("step " + std::to_string(step) + ": loss is not finite");
      backward(lb->total);
      adam_step(params, adam);
      state.step = step;
      const StepRecord rec{step, total, lb->global, lb->part, lb->diversity};
      if (log) *log << format_log_line(rec) << '\n';
      if (on_step) on_step(rec);
    }
    state.epoch = static_cast<std::int64_t>(epoch + 1);
    if (log) log->flush();
    if (on_epoch) on_epoch(state);
  }
  return state;
}

std::string default_eval_split(const Dataset& data) { return data.images_in("test").empty() ? "train" : "test"; }

EvalSet embed_split(const Model<float>& model, const Dataset& data, const std::string& split) {
  EvalSet set;
  set.split = split;
  for (auto i : data.images_in(split)) set.gallery.push_back(model.embed_image(data.images[i].sample));
  for (auto i : data.captions_in(split)) set.queries.push_back(model.embed_text(data.captions[i].sample));
  if (set.gallery.empty() || set.queries.empty()) throw DataError("split '" + split + "' has no images or captions");
  return set;
}

RankMetrics evaluate(const EvalSet& set, ScoreMode mode) {
  const auto scores = similarity_matrix(set.queries, set.gallery, mode);
  std::vector<int> qids, gids;
  for (const auto& q : set.queries) qids.push_back(q.identity);
  for (const auto& g : set.gallery) gids.push_back(g.identity);
  return cmc_ranks(scores, qids, gids);
}

namespace {

double mean_pairwise_cosine(const std::vector<SampleEmbedding>& samples) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    const std::size_t k = s.parts.size();
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        if (i == j) continue;
        sum += ops::cosine_similarity(std::span<const float>(s.parts[i]), std::span<const float>(s.parts[j]));
        ++count;
      }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace

HeadRedundancy mean_head_cosine(const EvalSet& set) {
  return {mean_pairwise_cosine(set.gallery), mean_pairwise_cosine(set.queries)};
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("failed writing " + path.string());
}

// Drops log lines past the checkpointed step so a resumed log stays monotone.
void truncate_log(const fs::path& path, std::int64_t last_step) {
  std::ifstream is(path);
  if (!is) return;
  std::string line, kept;
  while (std::getline(is, line)) {
    const auto rec = parse_log_line(line);
    if (rec && rec->step <= last_step) kept += line + '\n';
  }
  is.close();
  write_text(path, kept);
}

}  // namespace

TrainRunResult run_training(const RunConfig& cfg, bool resume, std::ostream* progress) {
  cfg.validate();
  if (cfg.data.empty()) throw ConfigError("no dataset manifest given (data)");
  if (cfg.out.empty()) throw ConfigError("no output directory given (out)");
  RunPaths paths{cfg.out};
  fs::create_directories(paths.dir);
  const bool resuming = resume && fs::exists(paths.checkpoint());

  Dataset data;
  if (resuming) {
    const Vocabulary vocab = Vocabulary::load(paths.vocab());
    const IdentityMap ids = IdentityMap::load(paths.identities());
    data = load_dataset(cfg.data, cfg.max_len, LoadOptions{&vocab, &ids});
  } else {
    data = load_dataset(cfg.data, cfg.max_len);
  }
  if (data.images_in("train").empty()) throw DataError(cfg.data + ": no training images");
  Model<float> model(cfg.model_config(data.vocab.size(), data.geometry, data.identities.size()), cfg.seed);

  checkpoint::TrainState state;
  if (resuming) {
    state = checkpoint::load(paths.checkpoint(), model);
    truncate_log(paths.log(), state.step);
    if (progress) *progress << "resuming from epoch " << state.epoch << ", step " << state.step << '\n';
  } else {
    data.vocab.save(paths.vocab());
    data.identities.save(paths.identities());
  }
  write_text(paths.config(), cfg.serialize());

  std::ofstream log(paths.log(), resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + paths.log().string());
  double epoch_loss = 0.0;
  std::size_t epoch_steps = 0;
  auto on_step = [&](const StepRecord& r) {
    epoch_loss += r.total;
    ++epoch_steps;
  };
  auto on_epoch = [&](const checkpoint::TrainState& s) {
    checkpoint::save(paths.checkpoint(), model, s);
    if (progress && epoch_steps > 0)
      *progress << "epoch " << s.epoch << "/" << cfg.epochs << " mean L=" << epoch_loss / epoch_steps << '\n';
    epoch_loss = 0.0;
    epoch_steps = 0;
  };
  state = train_model(model, data, cfg, state, &log, on_step, on_epoch);
  checkpoint::save(paths.checkpoint(), model, state);

  const ScoreMode mode = parse_score_mode(cfg.mode);
  const auto metrics = evaluate(embed_split(model, data, default_eval_split(data)), mode);
  write_text(paths.metrics(), metrics_json(metrics, mode) + "\n");
  return {paths, state, metrics};
}

fs::path run_dir_of(const fs::path& checkpoint) {
  if (fs::is_directory(checkpoint)) return checkpoint;
  return checkpoint.has_parent_path() ? checkpoint.parent_path() : fs::path(".");
}

LoadedRun load_run(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& manifest) {
  cfg.validate();
  const RunPaths paths{run_dir_of(checkpoint)};
  const fs::path ckpt = fs::is_directory(checkpoint) ? paths.checkpoint() : checkpoint;
  if (!fs::exists(ckpt)) throw DataError("checkpoint not found: " + ckpt.string());
  const Vocabulary vocab = Vocabulary::load(paths.vocab());
  const IdentityMap ids = IdentityMap::load(paths.identities());
  LoadedRun run;
  run.cfg = cfg;
  run.data = load_dataset(manifest, cfg.max_len, LoadOptions{&vocab, &ids});
  run.model = std::make_unique<Model<float>>(
      cfg.model_config(run.data.vocab.size(), run.data.geometry, run.data.identities.size()), cfg.seed);
  run.state = checkpoint::load(ckpt, *run.model);
  return run;
}

std::vector<std::size_t> top_attended_positions(std::span<const float> row, std::size_t length, std::size_t count) {
  std::vector<std::size_t> pos;
  for (std::size_t p = 1; p <= length && p < row.size(); ++p) pos.push_back(p);
  std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  if (pos.size() > count) pos.resize(count);
  return pos;
}

AttentionDump dump_attention(const LoadedRun& run, std::size_t sample_id, const fs::path& out_dir) {
  const auto& caps = run.data.captions;
  const auto it = std::find_if(caps.begin(), caps.end(), [&](const CaptionRecord& c) { return c.entry == sample_id; });
  if (it == caps.end())
    throw DataError("unknown sample id " + std::to_string(sample_id) + " (manifest has " +
                    std::to_string(caps.size()) + " entries)");
  const auto& image = run.data.images[it->image];
  fs::create_directories(out_dir);

  AttentionDump dump;
  const std::string stem = "sample" + std::to_string(sample_id);
  dump.image_trace = out_dir / (stem + "_image.rtf");
  dump.text_trace = out_dir / (stem + "_text.rtf");
  dump.top_words = out_dir / (stem + "_top_words.txt");

  const auto img = run.model->image_attention(image.sample);
  const auto txt = run.model->text_attention(it->sample);
  rtf::save(dump.image_trace, img.weights);
  rtf::save(dump.text_trace, txt.weights);

  const auto words = split_words(it->text);
  std::ostringstream os;
  for (std::size_t k = 0; k < txt.weights.rows(); ++k) {
    const auto row = txt.weights.data().subspan(k * txt.weights.cols(), txt.weights.cols());
    std::vector<std::string> top;
    for (auto p : top_attended_positions(row, it->sample.length, 3)) top.push_back(words.at(p - 1));
    os << "head " << k << ":";
    for (const auto& w : top) os << ' ' << w;
    os << '\n';
    dump.words.push_back(std::move(top));
  }
  write_text(dump.top_words, os.str());
  return dump;
}

namespace {

struct MicroProblem {
  ModelConfig cfg;
  Batch batch;
};

MicroProblem micro_problem(std::uint64_t seed) {
  MicroProblem mp;
  auto& c = mp.cfg;
  c.encoder.d = 8;
  c.encoder.layers = 1;
  c.encoder.attn_heads = 2;
  c.encoder.mlp_ratio = 2.0;
  c.encoder.patch_size = 4;
  c.encoder.max_len = 5;
  c.encoder.vocab_size = 10;
  c.encoder.init_std = 0.3;
  c.geometry = {8, 8, 3};
  c.num_heads = 2;
  c.loss.lambda = 0.2;
  c.loss.epsilon = 1e-8;
  c.loss.num_identities = 3;

  Rng rng = Rng(seed).fork(0x6d6963726fULL);
  const std::vector<int> labels = {0, 1, 2, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ImageSample img;
    img.pixels = Tensor<float>(Shape{8, 8, 3});
    for (auto& v : img.pixels.mutable_data()) v = static_cast<float>(rng.uniform());
    img.identity = labels[i];
    TextSample txt;
    txt.length = 2 + rng.uniform_index(4);
    txt.tokens.assign(c.encoder.max_len, Vocabulary::kPad);
    for (std::size_t j = 0; j < txt.length; ++j) txt.tokens[j] = 1 + static_cast<int>(rng.uniform_index(9));
    txt.identity = labels[i];
    mp.batch.images.push_back(std::move(img));
    mp.batch.texts.push_back(std::move(txt));
    mp.batch.labels.push_back(labels[i]);
    mp.batch.image_indices.push_back(i);
    mp.batch.caption_indices.push_back(i);
  }
  return mp;
}

template <typename Real>
long double micro_loss(const Model<Real>& model, const Batch& batch) {
  NoGradGuard guard;
  ForwardContext ctx;
  return model.loss(model.forward(batch, ctx)).total.item();
}

}  // namespace

GradcheckResult run_gradcheck(const GradcheckOptions& opts) {
  if (opts.precision != 32 && opts.precision != 64) throw ConfigError("precision must be 32 or 64");
  const bool single = opts.precision == 32;
  GradcheckResult result;
  result.threshold = opts.threshold > 0.0 ? opts.threshold : (single ? 1e-3 : 1e-5);
  result.h = opts.h > 0.0 ? opts.h : 1e-6;

  const auto mp = micro_problem(opts.seed);
  // The numeric side evaluates the objective in extended precision at the
  // analytic model's exact parameter values, so its own rounding stays far
  // below either threshold.
  Model<long double> probe(mp.cfg, opts.seed);
  const auto probe_params = probe.parameters();
  const Objective f = [&] { return micro_loss(probe, mp.batch); };

  std::vector<std::vector<double>> grads;
  auto analytic_grads = [&](auto& model) {
    const auto params = model.parameters();
    copy_parameters(params, probe_params);
    ForwardContext ctx;
    backward(model.loss(model.forward(mp.batch, ctx)).total);
    for (auto* p : params) {
      if (p->tensor.has_grad())
        grads.emplace_back(p->tensor.grad().begin(), p->tensor.grad().end());
      else
        grads.emplace_back(p->tensor.numel(), 0.0);
    }
  };
  if (single) {
    Model<float> model(mp.cfg, opts.seed);
    analytic_grads(model);
  } else {
    Model<double> model(mp.cfg, opts.seed);
    analytic_grads(model);
  }
  if (opts.corrupt) {
    // Flip the largest entry so the defect cannot hide below the error floor.
    auto& g = grads.front();
    auto worst = std::max_element(g.begin(), g.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    *worst = -*worst;
  }
  std::vector<std::span<const double>> analytic(grads.begin(), grads.end());
  result.report = central_difference_check<long double, double>(f, probe_params, analytic, result.h);
  result.passed = result.report.passed(result.threshold);
  return result;
}

std::vector<SweepRow> run_sweep(const RunConfig& base, const std::string& param, const std::vector<double>& values,
                                std::ostream* progress) {
  if (param != "K" && param != "lambda") throw ConfigError("sweep parameter must be K or lambda, got '" + param + "'");
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<RunConfig> cfgs;
  for (double v : values) {
    RunConfig cfg = base;
    if (param == "K") {
      if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError("K values must be positive integers");
      cfg.K = static_cast<std::size_t>(v);
    } else {
      cfg.lambda = v;
    }
    cfg.validate();
    cfgs.push_back(cfg);
  }
  if (base.data.empty()) throw ConfigError("no dataset manifest given (data)");
  const Dataset data = load_dataset(base.data, base.max_len);
  const ScoreMode mode = parse_score_mode(base.mode);

  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    const auto& cfg = cfgs[i];
    Model<float> model(cfg.model_config(data.vocab.size(), data.geometry, data.identities.size()), cfg.seed);
    train_model(model, data, cfg, {}, nullptr);
    const auto set = embed_split(model, data, default_eval_split(data));
    rows.push_back({values[i], evaluate(set, mode), mean_head_cosine(set)});
    if (progress)
      *progress << param << "=" << values[i] << " rank1=" << rows.back().metrics.rank1
                << " head_cosine_image=" << rows.back().redundancy.image
                << " head_cosine_text=" << rows.back().redundancy.text << '\n';
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "value,rank1,rank5,rank10\n";
  for (const auto& r : rows) os << r.value << ',' << r.metrics.rank1 << ',' << r.metrics.rank5 << ',' << r.metrics.rank10 << '\n';
  return os.str();
}

}  // namespace tbps
