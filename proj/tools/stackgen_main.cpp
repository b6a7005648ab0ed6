#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "stackgen/config.hpp"
#include "stackgen/data.hpp"
#include "stackgen/gradcheck.hpp"
#include "stackgen/metrics.hpp"
#include "stackgen/train.hpp"

using namespace stackgen;

int main(int argc, char** argv) {
  CLI::App app{"Two-stage text-to-image pipeline: conditional VAE sketches refined by a "
               "conditional GAN, with IS/FID evaluation"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic shape dataset");
  std::string synth_out;
  int synth_n = 1000, synth_size = 64;
  std::uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--n", synth_n, "Number of images");
  synth->add_option("--size", synth_size, "Stored image size (16, 32 or 64)");
  synth->add_option("--seed", synth_seed, "RNG seed");

  // train-stage1
  auto* ts1 = app.add_subcommand("train-stage1", "Train the stage-1 conditional VAE");
  std::string ts1_config, ts1_resume;
  ts1->add_option("--config", ts1_config, "key=value config file")->required();
  ts1->add_option("--resume", ts1_resume, "Checkpoint to resume from");

  // train-stage2
  auto* ts2 = app.add_subcommand("train-stage2", "Train the stage-2 conditional GAN");
  std::string ts2_config, ts2_stage1, ts2_resume;
  ts2->add_option("--config", ts2_config, "key=value config file")->required();
  ts2->add_option("--stage1", ts2_stage1, "Stage-1 checkpoint");
  ts2->add_option("--resume", ts2_resume, "Checkpoint to resume from");

  // generate
  auto* gen = app.add_subcommand("generate", "Generate images from embeddings");
  std::string gen_s1, gen_s2, gen_emb, gen_out;
  int gen_n = 8;
  std::uint64_t gen_seed = 1;
  gen->add_option("--stage1", gen_s1, "Stage-1 checkpoint")->required();
  gen->add_option("--stage2", gen_s2, "Stage-2 checkpoint")->required();
  gen->add_option("--emb", gen_emb, "EMB1 embedding file")->required();
  gen->add_option("--n", gen_n, "Number of images");
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score the pipeline with IS and FID");
  std::string ev_s1, ev_s2, ev_data, ev_cls;
  EvaluateOptions ev_opts;
  ev->add_option("--stage1", ev_s1, "Stage-1 checkpoint")->required();
  ev->add_option("--stage2", ev_s2, "Stage-2 checkpoint")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--classifier", ev_cls, "Classifier checkpoint (trained here if missing)")
      ->required();
  ev->add_option("--n", ev_opts.n_samples, "Number of generated samples");
  ev->add_option("--seed", ev_opts.seed, "RNG seed");
  ev->add_option("--cls-epochs", ev_opts.classifier_epochs,
                 "Training epochs when the classifier is missing");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check suite");
  int gc_seeds = 5;
  gc->add_option("--seeds", gc_seeds, "Random draws per check");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      build_synthetic_dataset(synth_out, synth_n, synth_size, synth_seed);
      std::cout << "wrote " << synth_n << " images (" << synth_size << "x" << synth_size
                << ") to " << synth_out << "\n";
    } else if (*ts1) {
      TrainConfig cfg = parse_config_file(ts1_config);
      const std::string path = train_stage1(cfg, ts1_resume);
      std::cout << "stage-1 checkpoint: " << path << "\n";
    } else if (*ts2) {
      TrainConfig cfg = parse_config_file(ts2_config);
      const std::string path = train_stage2(cfg, ts2_stage1, ts2_resume);
      std::cout << "stage-2 checkpoint: " << path << "\n";
    } else if (*gen) {
      generate_cmd(gen_s1, gen_s2, gen_emb, gen_n, gen_seed, gen_out);
      std::cout << "wrote " << gen_n << " images and grid.png to " << gen_out << "\n";
    } else if (*ev) {
      const MetricReport report = evaluate_cmd(ev_s1, ev_s2, ev_data, ev_cls, ev_opts);
      std::cout << metric_report_json(report) << "\n";
    } else if (*gc) {
      const GradCheckReport report = run_gradcheck(gc_seeds);
      for (const auto& c : report.checks)
        std::printf("%-22s max_rel_err=%.3e %s\n", c.name.c_str(), c.max_rel_err,
                    c.passed ? "ok" : "FAIL");
      if (!report.all_passed()) {
        std::cerr << "gradcheck failed\n";
        return 1;
      }
      std::cout << "gradcheck passed (" << report.checks.size() << " checks, tolerance "
                << report.tolerance << ")\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
