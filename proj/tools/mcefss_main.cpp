// mcefss: command-line driver for the few-shot segmentation pipeline.
// Exit codes: 0 success, 1 usage/config error, 2 IO error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mce/ablation.hpp"
#include "mce/checkpoint.hpp"
#include "mce/config.hpp"
#include "mce/gradsuite.hpp"
#include "mce/image_io.hpp"
#include "mce/metrics.hpp"
#include "mce/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

/// Remaining CLI tokens of the form --section.key=value become config
/// overrides; anything else is a usage error.
std::vector<std::string> collect_overrides(const std::vector<std::string>& extras) {
  std::vector<std::string> overrides;
  for (const std::string& raw : extras) {
    if (raw.rfind("--", 0) == 0 && raw.find('=') != std::string::npos &&
        raw.find('.') != std::string::npos) {
      overrides.push_back(raw.substr(2));
    } else {
      throw mce::ConfigError("unrecognized argument \"" + raw +
                             "\" (config overrides look like --section.key=value)");
    }
  }
  return overrides;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw mce::IoError("cannot open " + path + " for writing");
  out << content;
  if (!out) throw mce::IoError("short write to " + path);
}

mce::Dataset dataset_for(const mce::RunConfig& cfg) {
  return mce::generate_dataset(cfg.dataset);
}

int cmd_gen_data(const mce::RunConfig& cfg, const std::string& out_dir) {
  mce::Dataset ds = dataset_for(cfg);
  mce::write_dataset(ds, out_dir);
  std::cout << "wrote " << ds.samples.size() << " samples (" << cfg.dataset.samples_per_class
            << " per class) to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const mce::RunConfig& cfg, const std::string& ckpt_path,
              const std::string& loss_csv_path) {
  mce::Dataset ds = dataset_for(cfg);
  mce::FoldSplit fold = mce::split_folds()[static_cast<size_t>(cfg.run.fold)];
  mce::Model model(cfg.model, cfg.run.seed);
  mce::TrainResult result = mce::train(model, ds, fold, cfg.run.k_shot, cfg.optimizer,
                                       cfg.run.seed);
  write_text_file(loss_csv_path, result.to_csv());
  mce::save_checkpoint(model, ckpt_path, mce::config_fingerprint(cfg), cfg.run.seed);
  if (!result.loss_curve.empty()) {
    std::cout << "trained fold " << cfg.run.fold << " for " << cfg.optimizer.iterations
              << " iterations; loss " << result.loss_curve.front() << " -> "
              << result.loss_curve.back() << "\n";
  }
  std::cout << "checkpoint: " << ckpt_path << "\nloss curve: " << loss_csv_path << "\n";
  return kExitOk;
}

int cmd_eval(const mce::RunConfig& cfg, const std::string& ckpt_path, bool oracle,
             const std::string& out_csv) {
  mce::Dataset ds = dataset_for(cfg);
  mce::FoldSplit fold = mce::split_folds()[static_cast<size_t>(cfg.run.fold)];
  mce::MetricsReport report;
  if (oracle) {
    report = mce::evaluate_with([](const mce::Episode& ep) { return ep.query.second; }, ds,
                                fold, cfg.run.k_shot, cfg.eval.episodes, cfg.eval.seed,
                                cfg.eval.jobs);
  } else {
    if (ckpt_path.empty()) {
      throw mce::ConfigError("eval requires --checkpoint (or --oracle)");
    }
    mce::Model model(cfg.model, cfg.run.seed);
    mce::CheckpointInfo info = mce::load_checkpoint(model, ckpt_path);
    if (info.config_fingerprint != mce::config_fingerprint(cfg)) {
      std::cerr << "warning: checkpoint config fingerprint " << info.config_fingerprint
                << " differs from the current config " << mce::config_fingerprint(cfg) << "\n";
    }
    report = mce::evaluate(model, ds, fold, cfg.run.k_shot, cfg.eval.episodes, cfg.eval.seed,
                           cfg.eval.jobs);
  }
  std::string csv = mce::MetricsReport::csv_header() + "\n" +
                    report.to_csv_row(cfg.run.fold, cfg.run.k_shot) + "\n";
  std::cout << csv;
  if (!out_csv.empty()) write_text_file(out_csv, csv);
  return kExitOk;
}

int cmd_ablate(const mce::RunConfig& cfg, const std::string& out_dir, int jobs) {
  mce::AblationOptions options;
  options.folds = {cfg.run.fold};
  options.seeds = cfg.ablate.seeds;
  options.jobs = jobs;
  options.on_row = [](const mce::AblationRow& row) {
    std::cout << row.config << " fold " << row.fold << " seed " << row.seed << ": mIoU "
              << row.miou << "\n";
  };
  auto rows = mce::run_ablation_grid(cfg, options);
  auto summary = mce::summarize_ablation(rows);
  fs::create_directories(out_dir);
  write_text_file((fs::path(out_dir) / "ablations.csv").string(), mce::ablation_rows_csv(rows));
  write_text_file((fs::path(out_dir) / "ablations_summary.csv").string(),
                  mce::ablation_summary_csv(summary));
  std::cout << mce::ablation_summary_csv(summary);
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, int instances) {
  const auto entries = mce::run_gradient_suite(seed, instances);
  bool all_ok = true;
  for (const auto& e : entries) {
    std::printf("%-28s max rel err %.3e  %s\n", e.name.c_str(),
                static_cast<double>(e.max_rel_err), e.passed() ? "PASS" : "FAIL");
    all_ok = all_ok && e.passed();
  }
  if (!all_ok) {
    std::cerr << "gradient checks failed\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_predict(const mce::RunConfig& cfg, const std::string& ckpt_path,
                const std::string& episode_dir, const std::string& out_dir) {
  mce::Episode ep;
  ep.class_id = 0;
  for (int k = 0;; ++k) {
    const fs::path img = fs::path(episode_dir) / ("support_" + std::to_string(k) + ".ppm");
    const fs::path mask = fs::path(episode_dir) / ("support_" + std::to_string(k) + "_mask.pgm");
    if (!fs::exists(img)) break;
    ep.support.emplace_back(mce::read_ppm(img.string()),
                            mce::read_pgm(mask.string(), /*threshold_binary=*/true));
  }
  if (ep.support.empty()) {
    throw mce::IoError("episode directory " + episode_dir +
                       " holds no support_0.ppm / support_0_mask.pgm pair");
  }
  ep.query = {mce::read_ppm((fs::path(episode_dir) / "query.ppm").string()),
              mce::read_pgm((fs::path(episode_dir) / "query_mask.pgm").string(), true)};

  mce::Model model(cfg.model, cfg.run.seed);
  mce::CheckpointInfo info = mce::load_checkpoint(model, ckpt_path);
  if (info.config_fingerprint != mce::config_fingerprint(cfg)) {
    std::cerr << "warning: checkpoint config fingerprint differs from the current config\n";
  }
  mce::Prediction pred = model.predict(ep);

  fs::create_directories(out_dir);
  mce::write_ppm((fs::path(out_dir) / "query.ppm").string(), ep.query.first);
  mce::write_pgm((fs::path(out_dir) / "query_gt.pgm").string(), ep.query.second);
  mce::write_pgm((fs::path(out_dir) / "query_pred.pgm").string(), pred.hard);
  std::cout << "wrote query.ppm, query_gt.pgm, query_pred.pgm to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked cross-image encoding few-shot segmentation"};
  app.require_subcommand(1);
  app.allow_extras();

  std::string config_path, out_dir = "dataset_out", ckpt_path, loss_csv = "loss.csv";
  std::string eval_csv, episode_dir, predict_out = "prediction_out";
  std::string ablate_dir = ".";
  bool oracle = false;
  int jobs = 1;
  std::uint64_t gc_seed = 2024;
  int gc_instances = 10;

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset as image files");
  gen->add_option("--config", config_path, "JSON config file");
  gen->add_option("--out", out_dir, "output directory");
  gen->allow_extras();

  CLI::App* tr = app.add_subcommand("train", "train on the configured fold");
  tr->add_option("--config", config_path, "JSON config file");
  tr->add_option("--out", ckpt_path, "checkpoint output path");
  tr->add_option("--loss-csv", loss_csv, "loss curve CSV path");
  tr->allow_extras();

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on the held-out fold");
  ev->add_option("--config", config_path, "JSON config file");
  ev->add_option("--checkpoint", ckpt_path, "checkpoint to evaluate");
  ev->add_flag("--oracle", oracle, "score the ground-truth predictor instead of a model");
  ev->add_option("--out", eval_csv, "also write the metrics CSV here");
  ev->add_option("--jobs", jobs, "parallel evaluation workers");
  ev->allow_extras();

  CLI::App* ab = app.add_subcommand("ablate", "run the ablation grid on the configured fold");
  ab->add_option("--config", config_path, "JSON config file");
  ab->add_option("--out-dir", ablate_dir, "directory for ablations.csv / ablations_summary.csv");
  ab->add_option("--jobs", jobs, "parallel training workers");
  ab->allow_extras();

  CLI::App* gc = app.add_subcommand("gradcheck", "run the full gradient-check suite");
  gc->add_option("--seed", gc_seed, "suite seed");
  gc->add_option("--instances", gc_instances, "random instances per check");

  CLI::App* pr = app.add_subcommand("predict", "segment one episode directory");
  pr->add_option("--config", config_path, "JSON config file");
  pr->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  pr->add_option("--episode-dir", episode_dir, "directory with support_*.ppm/_mask.pgm and query.ppm")
      ->required();
  pr->add_option("--out", predict_out, "output directory");
  pr->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::vector<std::string> overrides = collect_overrides(sub->remaining());
    if (sub == gc) {
      return cmd_gradcheck(gc_seed, gc_instances);
    }
    mce::RunConfig cfg = mce::load_run_config(config_path, overrides);
    if (sub->count("--jobs")) cfg.eval.jobs = jobs;
    if (sub == gen) return cmd_gen_data(cfg, out_dir);
    if (sub == tr) {
      if (ckpt_path.empty()) ckpt_path = "checkpoint.mcec";
      return cmd_train(cfg, ckpt_path, loss_csv);
    }
    if (sub == ev) return cmd_eval(cfg, ckpt_path, oracle, eval_csv);
    if (sub == ab) return cmd_ablate(cfg, ablate_dir, jobs);
    if (sub == pr) return cmd_predict(cfg, ckpt_path, episode_dir, predict_out);
    std::cerr << "unknown subcommand\n";
    return kExitUsage;
  } catch (const mce::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const mce::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const mce::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}
