#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "tbps/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tbps;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Resolution order: built-in defaults, then the run directory's config.txt
// (eval and attn-dump only), then --config, then individual flags.
struct Overrides {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> flags;

  void apply(RunConfig& cfg) const {
    if (!config_file.empty()) cfg.merge_file(config_file);
    for (const auto& [k, v] : flags) cfg.set(k, v);
  }

  RunConfig resolve() const {
    RunConfig cfg;
    apply(cfg);
    return cfg;
  }

  // Layers the run directory's saved config under the caller's overrides.
  RunConfig resolve_for_checkpoint() const {
    const RunConfig first = resolve();
    if (first.checkpoint.empty()) throw ConfigError("no checkpoint given (--checkpoint)");
    RunConfig cfg;
    const auto saved = RunPaths{run_dir_of(first.checkpoint)}.config();
    if (fs::exists(saved)) cfg.merge_file(saved);
    apply(cfg);
    return cfg;
  }
};

void add_config_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--config", ov.config_file, "flat 'key = value' config file")->check(CLI::ExistingFile);
  for (const auto& key : RunConfig::keys()) {
    const std::string name = key.name;
    cmd->add_option_function<std::string>(
        "--" + name, [&ov, name](const std::string& v) { ov.flags.emplace_back(name, v); }, key.doc)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
}

std::vector<double> parse_values(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + item + "' is not a number");
    }
  }
  return out;
}

int cmd_synth(const Overrides& ov) {
  const RunConfig cfg = ov.resolve();
  if (cfg.out.empty()) throw ConfigError("synth needs --out");
  const auto manifest = generate_synthetic(cfg.synth_spec(), cfg.out);
  std::cout << (fs::path(cfg.out) / "manifest.jsonl").string() << '\n';
  std::cerr << manifest.entries.size() << " entries\n";
  return kOk;
}

int cmd_train(const Overrides& ov, bool resume) {
  const RunConfig cfg = ov.resolve();
  const auto result = run_training(cfg, resume, &std::cerr);
  std::cout << metrics_json(result.metrics, parse_score_mode(cfg.mode)) << '\n';
  std::cerr << "run directory: " << result.paths.dir.string() << '\n';
  return kOk;
}

int cmd_eval(const Overrides& ov) {
  const RunConfig cfg = ov.resolve_for_checkpoint();
  if (cfg.data.empty()) throw ConfigError("eval needs --data");
  const auto run = load_run(cfg, cfg.checkpoint, cfg.data);
  const ScoreMode mode = parse_score_mode(cfg.mode);
  const auto metrics = evaluate(embed_split(*run.model, run.data, default_eval_split(run.data)), mode);
  std::cout << metrics_json(metrics, mode) << '\n';
  return kOk;
}

int cmd_gradcheck(const GradcheckOptions& opts) {
  const auto r = run_gradcheck(opts);
  std::cout << std::scientific << std::setprecision(3);
  for (const auto& e : r.report.params)
    std::cout << std::left << std::setw(36) << e.name << " max_rel_error=" << e.max_rel_error << " at " << e.worst_index
              << " analytic=" << e.analytic << " numeric=" << e.numeric << '\n';
  std::cout << "precision=" << opts.precision << " h=" << r.h << " threshold=" << r.threshold
            << " max_rel_error=" << r.report.max_rel_error << (r.passed ? " PASS" : " FAIL") << '\n';
  return r.passed ? kOk : kNumeric;
}

int cmd_attn_dump(const Overrides& ov, std::size_t sample) {
  const RunConfig cfg = ov.resolve_for_checkpoint();
  if (cfg.data.empty()) throw ConfigError("attn-dump needs --data");
  const auto run = load_run(cfg, cfg.checkpoint, cfg.data);
  const fs::path out = cfg.out.empty() ? fs::path(".") : fs::path(cfg.out);
  const auto dump = dump_attention(run, sample, out);
  std::cout << dump.image_trace.string() << '\n' << dump.text_trace.string() << '\n' << dump.top_words.string() << '\n';
  return kOk;
}

int cmd_sweep(const Overrides& ov, const std::string& param, const std::string& values) {
  const RunConfig cfg = ov.resolve();
  const auto rows = run_sweep(cfg, param, parse_values(values), &std::cerr);
  const std::string csv = sweep_csv(rows);
  if (!cfg.out.empty()) {
    fs::create_directories(cfg.out);
    std::ofstream(fs::path(cfg.out) / "sweep.csv") << csv;
  }
  std::cout << csv;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic-aligned text-to-image person search"};
  app.require_subcommand(1);

  Overrides synth_ov, train_ov, eval_ov, grad_ov, attn_ov, sweep_ov;
  auto* synth = app.add_subcommand("synth", "generate a synthetic identity dataset");
  add_config_flags(synth, synth_ov);

  auto* train = app.add_subcommand("train", "train a model into a run directory");
  add_config_flags(train, train_ov);
  bool resume = false;
  train->add_flag("--resume", resume, "continue from the run directory's checkpoint");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset and print metrics JSON");
  add_config_flags(eval, eval_ov);

  auto* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  GradcheckOptions gopts;
  add_config_flags(grad, grad_ov);
  grad->add_option("--precision", gopts.precision, "32 or 64")->check(CLI::IsMember({32, 64}));
  grad->add_flag("--corrupt", gopts.corrupt, "flip the sign of one analytic gradient entry");
  grad->add_option("--step", gopts.h, "finite difference step (default 1e-6)");
  grad->add_option("--threshold", gopts.threshold, "max relative error (default per precision)");

  auto* attn = app.add_subcommand("attn-dump", "write SAFA attention traces for one sample");
  add_config_flags(attn, attn_ov);
  std::size_t sample = 0;
  attn->add_option("--sample", sample, "manifest entry index")->required();

  auto* sweep = app.add_subcommand("sweep", "retrain per value of K or lambda and report CMC");
  add_config_flags(sweep, sweep_ov);
  std::string param, values;
  sweep->add_option("--param", param, "K or lambda")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_ov);
    if (*train) return cmd_train(train_ov, resume);
    if (*eval) return cmd_eval(eval_ov);
    if (*grad) {
      gopts.seed = grad_ov.resolve().seed;
      return cmd_gradcheck(gopts);
    }
    if (*attn) return cmd_attn_dump(attn_ov, sample);
    if (*sweep) return cmd_sweep(sweep_ov, param, values);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  }
  return kUsage;
}
