#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "stackgen/cgan.hpp"
#include "stackgen/checkpoint.hpp"
#include "stackgen/config.hpp"
#include "stackgen/cvae.hpp"
#include "stackgen/data.hpp"
#include "stackgen/metrics.hpp"

namespace stackgen {

struct LossRow {
  int epoch = 0;
  int minibatch = 0;
  std::string name;
  double value = 0;
};

// Streaming CSV log with header epoch,minibatch,name,value. Values are
// written with shortest round-trip formatting so identical runs produce
// identical files.
class LossLog {
 public:
  explicit LossLog(const std::string& path);
  void append(int epoch, int minibatch, const std::string& name, double value);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream os_;
};

std::vector<LossRow> read_loss_log(const std::string& path);

// ---------------------------------------------------------------------------
// Checkpoint bundles
// ---------------------------------------------------------------------------

struct Stage1Bundle {
  TrainConfig cfg;  // resolved
  CvaeModel<float> model;
};

struct Stage2Bundle {
  TrainConfig cfg;  // resolved
  Stage2Generator<float> gen;
  Stage2Discriminator<float> disc;
};

Stage1Bundle load_stage1(const std::string& ckpt_path);
Stage2Bundle load_stage2(const std::string& ckpt_path);

void save_classifier(const std::string& path, SurrogateClassifier& cls);
SurrogateClassifier load_classifier(const std::string& path);

// ---------------------------------------------------------------------------
// Training entry points (return the final checkpoint path)
// ---------------------------------------------------------------------------

std::string train_stage1(TrainConfig cfg, const std::string& resume_ckpt = {});
std::string train_stage2(TrainConfig cfg, const std::string& stage1_ckpt,
                         const std::string& resume_ckpt = {});

// ---------------------------------------------------------------------------
// Inference pipelines
// ---------------------------------------------------------------------------

// Full stack: sample a condition and a latent, decode the stage-1 sketch,
// refine with the stage-2 generator (everything in eval mode, no tape).
Tensor<float> generate_pipeline(CvaeModel<float>& stage1, Stage2Generator<float>& gen,
                                const Tensor<float>& phi, Rng& rng);

// Writes n PNGs (gen_00000.png, ...) plus grid.png under out_dir.
void generate_cmd(const std::string& stage1_ckpt, const std::string& stage2_ckpt,
                  const std::string& emb_path, int n, std::uint64_t seed,
                  const std::string& out_dir);

struct EvaluateOptions {
  int n_samples = 256;
  std::uint64_t seed = 12345;
  int classifier_epochs = 20;
};

// Generates from test-split embeddings, scores with the surrogate
// classifier, fits real/generated feature Gaussians and reports IS + FID.
// Trains and saves the classifier if classifier_ckpt does not exist yet.
MetricReport evaluate_cmd(const std::string& stage1_ckpt, const std::string& stage2_ckpt,
                          const std::string& data_dir, const std::string& classifier_ckpt,
                          const EvaluateOptions& opts);

// ---------------------------------------------------------------------------
// Batch assembly helpers
// ---------------------------------------------------------------------------

Tensor<float> gather_images(const Dataset& ds, const std::vector<int>& record_indices);
Tensor<float> gather_embeddings(const Dataset& ds, const std::vector<int>& record_indices);

}  // namespace stackgen
