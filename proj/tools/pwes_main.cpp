#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pwes/pipeline.hpp"
#include "pwes/tensors_io.hpp"

namespace fs = std::filesystem;

namespace {

// PWES_THREADS caps worker parallelism; all current code paths are
// sequential, so the value only gets validated here.
int thread_cap() {
  if (const char* env = std::getenv("PWES_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

pwes::RunConfig load_config(const CommonOpts& opts) {
  pwes::RunConfig cfg = opts.config_path.empty()
                            ? pwes::RunConfig{}
                            : pwes::RunConfig::from_json_file(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.out_dir) cfg.out_dir = *opts.out_dir;
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON run configuration");
  cmd->add_option("--seed", opts.seed, "random seed override");
  cmd->add_option("--out-dir", opts.out_dir, "output directory override");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point-level weakly-supervised expression spotting toolkit"};
  app.require_subcommand(1);
  (void)thread_cap();

  CommonOpts synth_opts, train_opts, mine_opts, infer_opts, eval_opts,
      report_opts;

  auto* synth = app.add_subcommand("synth", "generate a planted dataset");
  add_common(synth, synth_opts);
  int synth_videos = 40, synth_tmin = 90, synth_tmax = 110, synth_dim = 32;
  double synth_sigma = 0.5, synth_bg = 0.8;
  std::string synth_mode = "random";
  synth->add_option("--videos", synth_videos);
  synth->add_option("--t-min", synth_tmin);
  synth->add_option("--t-max", synth_tmax);
  synth->add_option("--dim", synth_dim);
  synth->add_option("--sigma", synth_sigma);
  synth->add_option("--bg-density", synth_bg);
  synth->add_option("--mode", synth_mode, "point label mode: random|apex");

  auto* train = app.add_subcommand("train", "run the training loop");
  add_common(train, train_opts);

  auto* mine = app.add_subcommand("mine", "dump pseudo labels per video");
  std::string mine_checkpoint;
  add_common(mine, mine_opts);
  mine->add_option("--checkpoint", mine_checkpoint)->required();

  auto* infer = app.add_subcommand("infer", "emit scored proposals");
  std::string infer_checkpoint, infer_subject;
  add_common(infer, infer_opts);
  infer->add_option("--checkpoint", infer_checkpoint)->required();
  infer->add_option("--subject", infer_subject, "restrict to one subject");

  auto* eval = app.add_subcommand("eval", "score a proposal file");
  std::string eval_proposals;
  add_common(eval, eval_opts);
  eval->add_option("--proposals", eval_proposals)->required();

  auto* report = app.add_subcommand("report", "eval plus timeline plots");
  std::string report_proposals;
  add_common(report, report_opts);
  report->add_option("--proposals", report_proposals)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      pwes::RunConfig cfg = load_config(synth_opts);
      pwes::SynthConfig sc;
      sc.num_videos = synth_videos;
      sc.t_min = synth_tmin;
      sc.t_max = synth_tmax;
      sc.feature_dim = synth_dim;
      sc.noise_sigma = synth_sigma;
      sc.bg_density = synth_bg;
      auto ds = pwes::synth_dataset(sc, cfg.seed);
      const auto mode = synth_mode == "apex" ? pwes::PointMode::kApex
                                             : pwes::PointMode::kRandom;
      for (size_t i = 0; i < ds.videos.size(); ++i) {
        auto& rec = ds.videos[i];
        rec.annotations = pwes::sample_point_labels(
            *rec.gt_intervals, mode, rec.fps,
            cfg.seed ^ (0x1234567ULL + i * 1000003ULL));
      }
      const auto manifest = pwes::write_dataset(ds, cfg.out_dir);
      std::cout << "wrote " << manifest.videos.size() << " videos under "
                << cfg.out_dir << "\n";
    } else if (train->parsed()) {
      pwes::RunConfig cfg = load_config(train_opts);
      const auto result = pwes::train(cfg);
      std::cout << "checkpoint: " << result.checkpoint_path << "\n"
                << "bank: " << result.bank_path << "\n"
                << "log: " << result.log_path << "\n";
    } else if (mine->parsed()) {
      pwes::RunConfig cfg = load_config(mine_opts);
      const auto params = pwes::load_checkpoint(mine_checkpoint, nullptr,
                                                nullptr);
      const std::string out =
          (fs::path(cfg.out_dir) / "pseudo_labels.jsonl").string();
      fs::create_directories(cfg.out_dir);
      pwes::mine_pseudo_labels(cfg, params, out);
      std::cout << "pseudo labels: " << out << "\n";
    } else if (infer->parsed()) {
      pwes::RunConfig cfg = load_config(infer_opts);
      const auto params = pwes::load_checkpoint(infer_checkpoint, nullptr,
                                                nullptr);
      std::optional<std::string> subject;
      if (!infer_subject.empty()) subject = infer_subject;
      const std::string path = pwes::infer(cfg, params, subject);
      std::cout << "proposals: " << path << "\n";
    } else if (eval->parsed() || report->parsed()) {
      const bool plots = report->parsed();
      pwes::RunConfig cfg =
          load_config(plots ? report_opts : eval_opts);
      const std::string proposals =
          plots ? report_proposals : eval_proposals;
      const auto rep = pwes::report(cfg, proposals, plots);
      std::cout << pwes::report_table(rep);
    }
  } catch (const pwes::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
