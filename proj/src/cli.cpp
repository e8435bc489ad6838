#include "bms/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "bms/checkpoint.hpp"
#include "bms/config.hpp"
#include "bms/harness.hpp"
#include "bms/metrics.hpp"
#include "bms/trainer.hpp"

namespace bms::cli {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kEvalCommandStream = 0xE7A1;
constexpr std::uint64_t kIvomTargetStream = 0x1F0;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Config for a command that works from a checkpoint: an explicit config (or
// manifest), else the manifest next to the checkpoint, else the defaults.
train::TrainConfig checkpoint_config(const fs::path& checkpoint, const std::string& config_path,
                                     const std::vector<std::string>& overrides) {
  fs::path source = config_path;
  if (source.empty()) {
    const fs::path beside = checkpoint.parent_path() / "manifest.json";
    if (fs::exists(beside)) source = beside;
  }
  config::json user = config::json::object();
  if (!source.empty()) {
    user = config::load_file(source);
    if (user.contains("config")) user = config::json(user.at("config"));
  }
  for (const std::string& o : overrides) config::apply_override(user, o);
  return config::from_json(user);
}

void write_csv_row(const fs::path& path, const train::MetricsRecord& rec) {
  std::ofstream csv(path, std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write '" + path.string() + "'");
  csv << harness::kMetricsHeader << '\n' << harness::metrics_row(rec) << '\n';
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& out_dir, std::ostream& out, std::ostream& err) {
  const train::TrainConfig cfg = config::resolve(config_path, overrides);
  const fs::path dir = out_dir.empty() ? harness::runs_root() / harness::run_name(cfg) : fs::path(out_dir);
  const harness::RunOutcome outcome = harness::train_run(cfg, dir, &err);
  const auto& last = outcome.history.empty() ? train::MetricsRecord{} : outcome.history.back();
  out << "run " << dir.string() << "\n"
      << "config_hash " << outcome.config_hash << "\n"
      << "modes " << last.modes_captured << "\n"
      << "hq_pct " << harness::format_double(last.hq_percent) << "\n";
  return kOk;
}

int cmd_eval(const fs::path& checkpoint, const std::string& dataset, std::size_t n_samples,
             const std::string& config_path, const std::vector<std::string>& overrides,
             std::optional<double> tau, const std::string& out_dir, std::ostream& out) {
  std::vector<std::string> all = overrides;
  if (!dataset.empty()) all.push_back("data.kind=" + dataset);
  train::TrainConfig cfg = checkpoint_config(checkpoint, config_path, all);
  cfg.eval.samples = n_samples;
  const auto tensors = io::load_checkpoint(checkpoint);
  const train::Trainer trainer(cfg, tensors);
  const train::ModelBundle& bundle = trainer.bundle();
  const data::MixtureSpec& spec = trainer.mixture();
  const fs::path dir = out_dir.empty() ? checkpoint.parent_path() : fs::path(out_dir);
  if (!dir.empty()) fs::create_directories(dir);

  Rng rng(Rng::derive(cfg.seed, kEvalCommandStream));
  const Tensor samples = train::sample_model(bundle, n_samples, rng);
  const metrics::ModeMetrics mm = metrics::mode_metrics(samples, spec);
  train::MetricsRecord rec;
  rec.iteration = trainer.iteration();
  rec.modes_captured = mm.modes_captured;
  rec.hq_percent = mm.hq_percent;
  out << "checkpoint " << checkpoint.string() << " (iteration " << rec.iteration << ")\n"
      << "dataset " << spec.name << ", " << n_samples << " samples\n"
      << "modes " << mm.modes_captured << "/" << spec.centers.size() << "\n"
      << "hq_pct " << harness::format_double(mm.hq_percent) << "\n";

  const objectives::Variant v = cfg.objective.variant;
  std::optional<Tensor> flagged;
  if (objectives::uses_encoder(v)) {
    const metrics::MlpEncoder enc(bundle.encoder, objectives::deterministic_encoder(v));
    const Tensor reference = data::sample(spec, cfg.eval.reference_points, rng);
    const Tensor held_out = data::sample(spec, cfg.eval.probes, rng);
    const double own_tau =
        metrics::mismatch_threshold(enc, reference, held_out, cfg.eval.mismatch_quantile, rng);
    const metrics::MismatchReport rep = metrics::prior_mismatch(
        enc, bundle.generator, spec, reference, cfg.eval.probes, tau.value_or(own_tau), rng);
    rec.mismatch_count = rep.mismatch_count;
    out << "tau " << harness::format_double(rep.tau) << (tau ? " (given)" : " (own)") << "\n"
        << "mismatch_count " << rep.mismatch_count << " of " << rep.prior_likely
        << " prior-likely probes\n"
        << "flagged_fraction " << harness::format_double(rep.flagged_fraction) << "\n"
        << "decoded_non_hq_fraction " << harness::format_double(rep.decoded_non_hq_fraction)
        << "\n";
    flagged = rep.decoded;
    data::write_points_csv(dir / "flagged.csv", rep.decoded);
  }
  write_csv_row(dir / "eval.csv", rec);
  harness::plot_scatter(dir / "eval_samples.svg", samples, spec, flagged ? &*flagged : nullptr);
  out << "wrote " << (dir / "eval.csv").string() << "\n";
  return kOk;
}

int cmd_ivom(const fs::path& checkpoint, const std::string& dataset, std::size_t k,
             const metrics::IvomConfig& icfg, std::uint64_t seed, const std::string& config_path,
             const std::string& out_dir, std::ostream& out) {
  std::vector<std::string> overrides;
  if (!dataset.empty()) overrides.push_back("data.kind=" + dataset);
  const train::TrainConfig cfg = checkpoint_config(checkpoint, config_path, overrides);
  const train::Trainer trainer(cfg, io::load_checkpoint(checkpoint));
  Rng target_rng(Rng::derive(seed, kIvomTargetStream));
  const Tensor targets = data::sample(trainer.mixture(), k, target_rng);
  const metrics::IvomResult res = metrics::ivom(trainer.bundle().generator, targets, icfg, seed);

  const fs::path dir = out_dir.empty() ? checkpoint.parent_path() : fs::path(out_dir);
  if (!dir.empty()) fs::create_directories(dir);
  std::ofstream csv(dir / "ivom.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write '" + (dir / "ivom.csv").string() + "'");
  csv << "target_x,target_y,closest_x,closest_y,sq_distance\n";
  for (std::size_t t = 0; t < k; ++t) {
    csv << harness::format_double(targets.at(t, 0)) << ',' << harness::format_double(targets.at(t, 1))
        << ',' << harness::format_double(res.closest.at(t, 0)) << ','
        << harness::format_double(res.closest.at(t, 1)) << ','
        << harness::format_double(res.per_target[t]) << '\n';
  }
  out << "targets " << k << " restarts " << icfg.restarts << " steps " << icfg.steps << "\n"
      << "discarded_restarts " << res.discarded << "\n"
      << "ivom " << harness::format_double(res.mean_sq_distance) << "\n";
  return kOk;
}

int cmd_table(const std::vector<std::string>& dirs, std::ostream& out) {
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  out << harness::format_table(harness::aggregate(paths));
  return kOk;
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::vector<std::uint64_t>& seeds, std::size_t jobs, std::ostream& out,
              std::ostream& err) {
  if (seeds.empty()) throw UsageError("sweep needs at least one seed");
  std::vector<train::TrainConfig> cfgs;
  for (std::uint64_t seed : seeds) {
    std::vector<std::string> o = overrides;
    o.push_back("train.seed=" + std::to_string(seed));
    cfgs.push_back(config::resolve(config_path, o));
  }
  std::vector<fs::path> dirs;
  for (const auto& c : cfgs) dirs.push_back(harness::runs_root() / harness::run_name(c));

  std::mutex log_mutex;
  std::vector<int> codes(cfgs.size(), kOk);
  std::vector<std::string> errors(cfgs.size());
  std::size_t next = 0;
  std::mutex next_mutex;
  auto worker = [&] {
    while (true) {
      std::size_t i;
      {
        std::lock_guard lock(next_mutex);
        if (next == cfgs.size()) return;
        i = next++;
      }
      std::ostringstream log;
      try {
        harness::train_run(cfgs[i], dirs[i], &log);
      } catch (const train::TrainingDiverged& e) {
        codes[i] = kDiverged;
        errors[i] = e.what();
      } catch (const std::exception& e) {
        codes[i] = kData;
        errors[i] = e.what();
      }
      std::lock_guard lock(log_mutex);
      err << log.str();
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, cfgs.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  int code = kOk;
  std::vector<fs::path> finished;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    if (codes[i] != kOk) {
      err << "seed " << seeds[i] << " failed: " << errors[i] << "\n";
      code = std::max(code, codes[i]);
    } else {
      finished.push_back(dirs[i]);
      out << "run " << dirs[i].string() << "\n";
    }
  }
  if (!finished.empty()) out << harness::format_table(harness::aggregate(finished));
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Best-of-many-samples generative model experiments on 2-D Gaussian mixtures"};
  app.name("bms");
  app.require_subcommand(1);

  std::string config_path, out_dir, dataset, eval_config;
  std::vector<std::string> overrides;
  std::vector<std::string> run_dirs;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  std::string checkpoint;
  std::size_t n_samples = 10000;
  std::optional<double> tau;
  std::size_t k = 200;
  metrics::IvomConfig icfg;
  std::uint64_t ivom_seed = 1;

  auto* train_cmd = app.add_subcommand("train", "train one model into a run directory");
  train_cmd->add_option("config", config_path, "JSON config file (defaults when omitted)");
  train_cmd->add_option("--set", overrides, "override, e.g. objective.T=10");
  train_cmd->add_option("--out", out_dir, "run directory (default $BMS_RUNS_DIR/<run name>)");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--dataset", dataset, "grid or ring (default: from the manifest)");
  eval_cmd->add_option("--samples", n_samples, "generated samples to score");
  eval_cmd->add_option("--config", eval_config, "config or manifest (default: manifest beside the checkpoint)");
  eval_cmd->add_option("--set", overrides, "config override");
  eval_cmd->add_option("--tau", tau, "shared marginal-posterior threshold");
  eval_cmd->add_option("--out", out_dir, "output directory (default: checkpoint directory)");

  auto* ivom_cmd = app.add_subcommand("ivom", "closest generated points to held-out samples");
  ivom_cmd->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  ivom_cmd->add_option("--dataset", dataset, "grid or ring (default: from the manifest)");
  ivom_cmd->add_option("-k,--targets", k, "held-out targets");
  ivom_cmd->add_option("--restarts", icfg.restarts, "restarts per target");
  ivom_cmd->add_option("--steps", icfg.steps, "Adam steps per restart");
  ivom_cmd->add_option("--lr", icfg.lr, "Adam learning rate");
  ivom_cmd->add_option("--seed", ivom_seed, "seed for targets and restarts");
  ivom_cmd->add_option("--config", eval_config, "config or manifest");
  ivom_cmd->add_option("--out", out_dir, "output directory (default: checkpoint directory)");

  auto* table_cmd = app.add_subcommand("table", "mean and std of final metrics across runs");
  table_cmd->add_option("runs", run_dirs, "run directories")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "train one run per seed on parallel threads");
  sweep_cmd->add_option("config", config_path, "JSON config file (defaults when omitted)");
  sweep_cmd->add_option("--set", overrides, "config override");
  sweep_cmd->add_option("--seeds", seeds, "seeds")->delimiter(',');
  sweep_cmd->add_option("-j,--jobs", jobs, "concurrent runs");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(config_path, overrides, out_dir, out, err);
    if (*eval_cmd) {
      return cmd_eval(checkpoint, dataset, n_samples, eval_config, overrides, tau, out_dir, out);
    }
    if (*ivom_cmd) {
      return cmd_ivom(checkpoint, dataset, k, icfg, ivom_seed, eval_config, out_dir, out);
    }
    if (*table_cmd) return cmd_table(run_dirs, out);
    if (*sweep_cmd) return cmd_sweep(config_path, overrides, seeds, jobs, out, err);
  } catch (const config::ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const train::TrainingDiverged& e) {
    err << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const io::CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace bms::cli
