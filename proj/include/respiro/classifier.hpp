#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "respiro/corpus.hpp"
#include "respiro/metrics.hpp"
#include "respiro/module.hpp"
#include "respiro/rng.hpp"
#include "respiro/tensor.hpp"

namespace respiro::classifier {

struct ClassifierConfig {
  // Expected feature geometry: classifier_features of a 5 s clip at 16 kHz
  // is [501, 128]. The patch grid is fixed at construction (learned
  // positions), so inputs must trim to the same grid.
  int input_frames = 501;
  int input_bins = 128;
  int patch_time = 16;  // frames per patch
  int patch_freq = 16;  // bins per patch
  int embed_dim = 64;
  int depth = 2;
  int heads = 4;
  int n_label_classes = 4;
  int n_domain_classes = 2;

  void validate() const;
  int patches_time() const { return input_frames / patch_time; }
  int patches_freq() const { return input_bins / patch_freq; }
  int n_patches() const { return patches_time() * patches_freq(); }
};

// Patch transformer over log-mel features with two linear heads: a 4-way
// label classifier and a 2-way real/synthetic discriminator that trains
// through gradient reversal.
class ClassifierModel {
 public:
  ClassifierModel(ClassifierConfig config, Rng& rng);

  const ClassifierConfig& config() const { return config_; }
  core::ParamRegistry& params() { return params_; }
  const core::ParamRegistry& params() const { return params_; }

  // [frames, bins] -> embedding [embed_dim]. Patchify, project, add learned
  // positions, run pre-norm attention blocks, mean-pool.
  core::Tensor encode(const core::Tensor& features) const;

  // Head projections over one embedding [E] or a stack [N, E].
  core::Tensor label_logits(const core::Tensor& emb) const;
  core::Tensor domain_logits(const core::Tensor& emb) const;

 private:
  core::Tensor block(int index, const core::Tensor& x) const;

  ClassifierConfig config_;
  core::ParamRegistry params_;
};

// Adversarial weight 2/(1+e^(-gamma*p)) - 1 for progress p in [0, 1].
double lambda_schedule(double p, double gamma = 10.0);

struct AftBatch {
  std::vector<core::Tensor> features;  // each [frames, bins]
  std::vector<int> labels;             // 0..3
  std::vector<int> domains;            // 0 real, 1 synthetic
};

struct LossBreakdown {
  double l_ce = 0.0;
  double l_dis = 0.0;
  double l_final = 0.0;  // l_ce + lambda * l_dis
  double lambda = 0.0;
};

// Forward + backward for one batch: l_final = l_ce + lambda * l_dis with the
// discriminator behind gradient reversal (coefficient 1; lambda enters as the
// loss weight). Gradients accumulate onto the model's parameters.
LossBreakdown aft_loss(const ClassifierModel& model, const AftBatch& batch, double lambda);

// Label logits [4] for one feature matrix; no graph, discriminator unused.
core::Tensor predict(const ClassifierModel& model, const core::Tensor& features);

// Index of the largest logit; ties resolve to the lowest index.
int argmax(const core::Tensor& logits);

struct EpochLog {
  int epoch = 0;  // 1-based
  double l_ce = 0.0;
  double l_dis = 0.0;
  double l_final = 0.0;
  double lambda = 0.0;
  double train_acc = 0.0;  // percent
  double se = 0.0;
  double sp = 0.0;
  double score = 0.0;
};

// One JSON object per line, trailing newline included.
std::string epoch_log_json(const EpochLog& log);

struct ClassifierTrainOptions {
  int epochs = 50;
  int batch_size = 32;
  double lr = 5e-5;
  // Discriminator weight follows lambda_schedule(epoch / epochs) when set,
  // and stays 0 (plain fine-tuning) otherwise.
  bool adversarial = true;
  double gamma = 10.0;
  std::function<void(const EpochLog&)> on_epoch;
};

struct ClassifierTrainResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;      // epoch whose test Score was highest; 0 if never evaluated
  double best_score = 0.0;
};

// Trains on the manifest's train split and scores the test split each epoch;
// domain labels come from each record's source tag. Feature matrices are read
// from "<dir>/<id>.clf.rsf" caches (single-tensor files). The model is left
// at the best-Score epoch's parameters.
ClassifierTrainResult train_classifier(ClassifierModel& model,
                                       const std::vector<corpus::SampleRecord>& records,
                                       const std::string& feature_dir,
                                       const ClassifierTrainOptions& options, Rng& rng);

// Confusion of predicted vs true labels over `records` (parallel across
// records; features read from the cache dir).
metrics::ConfusionMatrix evaluate(const ClassifierModel& model,
                                  const std::vector<corpus::SampleRecord>& records,
                                  const std::string& feature_dir);

// Checkpoints carry the parameters plus config/* scalars.
void save_classifier(const std::string& path, const ClassifierModel& model);
ClassifierModel load_classifier(const std::string& path);

}  // namespace respiro::classifier
