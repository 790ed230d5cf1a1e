#include "respiro/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <utility>

#include <json.hpp>

#include "respiro/adam.hpp"
#include "respiro/errors.hpp"
#include "respiro/features.hpp"
#include "respiro/ops.hpp"
#include "respiro/runtime.hpp"
#include "respiro/serialize.hpp"

namespace respiro::classifier {

using core::Shape;
using core::Tensor;
namespace ops = respiro::core;

void ClassifierConfig::validate() const {
  if (patch_time < 1 || patch_freq < 1) {
    throw ConfigError("patch extents must be >= 1, got " + std::to_string(patch_time) + "x" +
                      std::to_string(patch_freq));
  }
  if (input_frames < patch_time || input_bins < patch_freq) {
    throw ConfigError("input " + std::to_string(input_frames) + "x" + std::to_string(input_bins) +
                      " is smaller than one " + std::to_string(patch_time) + "x" +
                      std::to_string(patch_freq) + " patch");
  }
  if (depth < 1) throw ConfigError("depth must be >= 1, got " + std::to_string(depth));
  if (heads < 1 || embed_dim < 1 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) +
                      " must be a positive multiple of heads " + std::to_string(heads));
  }
  if (n_label_classes < 2 || n_domain_classes < 2) {
    throw ConfigError("both heads need at least 2 classes");
  }
}

double lambda_schedule(double p, double gamma) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ArgumentError("progress must be in [0, 1], got " + std::to_string(p));
  }
  return 2.0 / (1.0 + std::exp(-gamma * p)) - 1.0;
}

namespace {

std::string block_name(int i, const char* leaf) {
  return "blk" + std::to_string(i) + "/" + leaf;
}

// Registry lookup for const forward paths; parameters are registered in the
// constructor, so a miss is a programming error.
const Tensor& param(const core::ParamRegistry& registry, const std::string& name) {
  Tensor* t = const_cast<core::ParamRegistry&>(registry).find(name);
  if (t == nullptr) throw IntegrityError("missing parameter " + name);
  return *t;
}

int argmax_row(const float* row, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

}  // namespace

ClassifierModel::ClassifierModel(ClassifierConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const int e = config_.embed_dim;
  const int patch = config_.patch_time * config_.patch_freq;
  const int hidden = 4 * e;

  params_.add_uniform("patch/w", {e, patch}, patch, rng);
  params_.add_uniform("patch/b", {e}, patch, rng);
  params_.add_uniform("pos", {config_.n_patches(), e}, e, rng);

  for (int l = 0; l < config_.depth; ++l) {
    params_.add(block_name(l, "ln1/g"), Tensor::full({e}, 1.0f));
    params_.add_zeros(block_name(l, "ln1/b"), {e});
    for (const char* proj : {"attn/q", "attn/k", "attn/v", "attn/out"}) {
      params_.add_uniform(block_name(l, proj) + "/w", {e, e}, e, rng);
      params_.add_uniform(block_name(l, proj) + "/b", {e}, e, rng);
    }
    params_.add(block_name(l, "ln2/g"), Tensor::full({e}, 1.0f));
    params_.add_zeros(block_name(l, "ln2/b"), {e});
    params_.add_uniform(block_name(l, "mlp/fc1/w"), {hidden, e}, e, rng);
    params_.add_uniform(block_name(l, "mlp/fc1/b"), {hidden}, e, rng);
    params_.add_uniform(block_name(l, "mlp/fc2/w"), {e, hidden}, hidden, rng);
    params_.add_uniform(block_name(l, "mlp/fc2/b"), {e}, hidden, rng);
  }

  params_.add("final/g", Tensor::full({e}, 1.0f));
  params_.add_zeros("final/b", {e});
  params_.add_uniform("label/w", {config_.n_label_classes, e}, e, rng);
  params_.add_uniform("label/b", {config_.n_label_classes}, e, rng);
  params_.add_uniform("domain/w", {config_.n_domain_classes, e}, e, rng);
  params_.add_uniform("domain/b", {config_.n_domain_classes}, e, rng);
}

Tensor ClassifierModel::block(int index, const Tensor& x) const {
  const int hd = config_.embed_dim / config_.heads;
  Tensor h = ops::layer_norm(x, param(params_, block_name(index, "ln1/g")),
                             param(params_, block_name(index, "ln1/b")));
  Tensor q = ops::linear(h, param(params_, block_name(index, "attn/q/w")),
                         param(params_, block_name(index, "attn/q/b")));
  Tensor k = ops::linear(h, param(params_, block_name(index, "attn/k/w")),
                         param(params_, block_name(index, "attn/k/b")));
  Tensor v = ops::linear(h, param(params_, block_name(index, "attn/v/w")),
                         param(params_, block_name(index, "attn/v/b")));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(config_.heads));
  for (int a = 0; a < config_.heads; ++a) {
    heads.push_back(ops::attention(ops::slice_last(q, a * hd, hd), ops::slice_last(k, a * hd, hd),
                                   ops::slice_last(v, a * hd, hd)));
  }
  Tensor attn = ops::linear(ops::concat_last(heads), param(params_, block_name(index, "attn/out/w")),
                            param(params_, block_name(index, "attn/out/b")));
  Tensor y = ops::add(x, attn);

  Tensor m = ops::layer_norm(y, param(params_, block_name(index, "ln2/g")),
                             param(params_, block_name(index, "ln2/b")));
  m = ops::linear(m, param(params_, block_name(index, "mlp/fc1/w")),
                  param(params_, block_name(index, "mlp/fc1/b")));
  m = ops::linear(ops::swish(m), param(params_, block_name(index, "mlp/fc2/w")),
                  param(params_, block_name(index, "mlp/fc2/b")));
  return ops::add(y, m);
}

Tensor ClassifierModel::encode(const Tensor& features) const {
  if (features.rank() != 2) {
    throw ShapeError("encode expects [frames, bins], got " + core::shape_str(features.shape()));
  }
  if (features.dim(0) < config_.patch_time || features.dim(1) < config_.patch_freq) {
    throw ArgumentError("features " + core::shape_str(features.shape()) +
                        " are smaller than one " + std::to_string(config_.patch_time) + "x" +
                        std::to_string(config_.patch_freq) + " patch");
  }
  const int gt = features.dim(0) / config_.patch_time;
  const int gf = features.dim(1) / config_.patch_freq;
  if (gt != config_.patches_time() || gf != config_.patches_freq()) {
    throw ShapeError("features " + core::shape_str(features.shape()) + " trim to a " +
                     std::to_string(gt) + "x" + std::to_string(gf) +
                     " patch grid; this model expects " + std::to_string(config_.patches_time()) +
                     "x" + std::to_string(config_.patches_freq()));
  }
  Tensor x = ops::extract_patches(features, config_.patch_time, config_.patch_freq);
  x = ops::linear(x, param(params_, "patch/w"), param(params_, "patch/b"));
  x = ops::add(x, param(params_, "pos"));
  for (int l = 0; l < config_.depth; ++l) x = block(l, x);
  x = ops::layer_norm(x, param(params_, "final/g"), param(params_, "final/b"));
  return ops::mean_rows(x);
}

Tensor ClassifierModel::label_logits(const Tensor& emb) const {
  return ops::linear(emb, param(params_, "label/w"), param(params_, "label/b"));
}

Tensor ClassifierModel::domain_logits(const Tensor& emb) const {
  return ops::linear(emb, param(params_, "domain/w"), param(params_, "domain/b"));
}

namespace {

Tensor stacked_embeddings(const ClassifierModel& model, const std::vector<Tensor>& features) {
  std::vector<Tensor> embs;
  embs.reserve(features.size());
  for (const Tensor& f : features) embs.push_back(model.encode(f));
  return ops::stack_rows(embs);
}

struct BatchGraph {
  Tensor label_logits;
  Tensor l_ce;
  Tensor l_dis;
  Tensor loss;
};

BatchGraph batch_graph(const ClassifierModel& model, const std::vector<Tensor>& features,
                       const std::vector<int>& labels, const std::vector<int>& domains,
                       double lambda) {
  Tensor embs = stacked_embeddings(model, features);
  BatchGraph g;
  g.label_logits = model.label_logits(embs);
  g.l_ce = ops::cross_entropy(g.label_logits, labels);
  // Reversal coefficient is fixed at 1; lambda enters as the loss weight so
  // the logged l_dis stays the plain discriminator loss.
  g.l_dis = ops::cross_entropy(model.domain_logits(ops::gradient_reverse(embs, 1.0f)), domains);
  g.loss = ops::add(g.l_ce, ops::scale(g.l_dis, static_cast<float>(lambda)));
  return g;
}

}  // namespace

LossBreakdown aft_loss(const ClassifierModel& model, const AftBatch& batch, double lambda) {
  const std::size_t n = batch.features.size();
  if (n == 0) throw ArgumentError("batch is empty");
  if (batch.labels.size() != n || batch.domains.size() != n) {
    throw ArgumentError("batch misaligned: " + std::to_string(n) + " features, " +
                        std::to_string(batch.labels.size()) + " labels, " +
                        std::to_string(batch.domains.size()) + " domains");
  }
  const ClassifierConfig& c = model.config();
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.labels[i] < 0 || batch.labels[i] >= c.n_label_classes) {
      throw ArgumentError("label " + std::to_string(batch.labels[i]) + " at index " +
                          std::to_string(i) + " out of range");
    }
    if (batch.domains[i] < 0 || batch.domains[i] >= c.n_domain_classes) {
      throw ArgumentError("domain " + std::to_string(batch.domains[i]) + " at index " +
                          std::to_string(i) + " out of range");
    }
  }
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw ArgumentError("lambda must be finite and >= 0, got " + std::to_string(lambda));
  }

  BatchGraph g = batch_graph(model, batch.features, batch.labels, batch.domains, lambda);
  g.loss.backward();
  LossBreakdown out;
  out.l_ce = static_cast<double>(g.l_ce.item());
  out.l_dis = static_cast<double>(g.l_dis.item());
  out.l_final = static_cast<double>(g.loss.item());
  out.lambda = lambda;
  return out;
}

Tensor predict(const ClassifierModel& model, const Tensor& features) {
  core::NoGradGuard no_grad;
  return model.label_logits(model.encode(features));
}

int argmax(const Tensor& logits) {
  if (!logits.defined() || logits.size() < 1) throw ArgumentError("argmax needs a non-empty tensor");
  return argmax_row(logits.data(), static_cast<int>(logits.size()));
}

std::string epoch_log_json(const EpochLog& log) {
  nlohmann::json j{{"epoch", log.epoch},   {"l_ce", log.l_ce},
                   {"l_dis", log.l_dis},   {"l_final", log.l_final},
                   {"lambda", log.lambda}, {"train_acc", log.train_acc},
                   {"se", log.se},         {"sp", log.sp},
                   {"score", log.score}};
  return j.dump() + "\n";
}

namespace {

Tensor load_feature(const std::string& dir, const std::string& id) {
  const std::string path = dir + "/" + dsp::cache_filename(id, "clf");
  if (!std::filesystem::exists(path)) {
    throw DataError("feature cache missing for record " + id + " (" + path + ")");
  }
  std::vector<Tensor> tensors = core::load_tensors(path);
  if (tensors.size() != 1) {
    throw DataError("feature cache for record " + id + " holds " +
                    std::to_string(tensors.size()) + " tensors, expected 1");
  }
  return tensors[0];
}

struct LoadedSplit {
  std::vector<Tensor> features;
  std::vector<int> labels;
  std::vector<int> domains;
};

}  // namespace

ClassifierTrainResult train_classifier(ClassifierModel& model,
                                       const std::vector<corpus::SampleRecord>& records,
                                       const std::string& feature_dir,
                                       const ClassifierTrainOptions& options, Rng& rng) {
  if (options.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (options.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(options.lr > 0.0)) throw ConfigError("lr must be > 0");

  std::vector<const corpus::SampleRecord*> train_recs, test_recs;
  for (const auto& r : records) {
    (r.split == corpus::Split::train ? train_recs : test_recs).push_back(&r);
  }
  if (train_recs.empty()) throw ArgumentError("manifest has no train-split records");

  // Feature loading is parallel; lowest-index exceptions win, so a missing
  // cache reports the same record on every run.
  LoadedSplit train, test;
  train.features.resize(train_recs.size());
  test.features.resize(test_recs.size());
  runtime::parallel_for(static_cast<std::int64_t>(train_recs.size()), [&](std::int64_t i) {
    train.features[static_cast<std::size_t>(i)] =
        load_feature(feature_dir, train_recs[static_cast<std::size_t>(i)]->id);
  });
  runtime::parallel_for(static_cast<std::int64_t>(test_recs.size()), [&](std::int64_t i) {
    test.features[static_cast<std::size_t>(i)] =
        load_feature(feature_dir, test_recs[static_cast<std::size_t>(i)]->id);
  });
  for (const auto* r : train_recs) {
    train.labels.push_back(static_cast<int>(r->label));
    train.domains.push_back(static_cast<int>(r->source));
  }
  for (const auto* r : test_recs) test.labels.push_back(static_cast<int>(r->label));

  core::Adam opt(model.params(), {options.lr, 0.9, 0.999, 1e-8});
  const std::size_t n_train = train_recs.size();
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});

  ClassifierTrainResult result;
  std::vector<std::vector<float>> best;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const double lam =
        options.adversarial
            ? lambda_schedule(static_cast<double>(epoch) / options.epochs, options.gamma)
            : 0.0;
    rng.shuffle(order);

    double sum_ce = 0.0, sum_dis = 0.0;
    std::int64_t hits = 0;
    for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t n = std::min(static_cast<std::size_t>(options.batch_size), n_train - start);
      std::vector<Tensor> bx;
      std::vector<int> by, bd;
      bx.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = order[start + i];
        bx.push_back(train.features[idx]);
        by.push_back(train.labels[idx]);
        bd.push_back(train.domains[idx]);
      }

      model.params().zero_grad();
      BatchGraph g = batch_graph(model, bx, by, bd, lam);
      g.loss.backward();
      opt.step();

      const float* logits = g.label_logits.data();
      const int cls = model.config().n_label_classes;
      for (std::size_t i = 0; i < n; ++i) {
        if (argmax_row(logits + static_cast<std::ptrdiff_t>(i) * cls, cls) == by[i]) ++hits;
      }
      sum_ce += static_cast<double>(g.l_ce.item()) * static_cast<double>(n);
      sum_dis += static_cast<double>(g.l_dis.item()) * static_cast<double>(n);
    }

    EpochLog log;
    log.epoch = epoch + 1;
    log.lambda = lam;
    log.l_ce = sum_ce / static_cast<double>(n_train);
    log.l_dis = sum_dis / static_cast<double>(n_train);
    log.l_final = log.l_ce + lam * log.l_dis;
    log.train_acc = 100.0 * static_cast<double>(hits) / static_cast<double>(n_train);

    if (!test_recs.empty()) {
      std::vector<int> preds(test_recs.size());
      runtime::parallel_for(static_cast<std::int64_t>(test_recs.size()), [&](std::int64_t i) {
        preds[static_cast<std::size_t>(i)] =
            argmax(predict(model, test.features[static_cast<std::size_t>(i)]));
      });
      const metrics::MetricsReport mr = metrics::icbhi_metrics(metrics::confusion(preds, test.labels));
      log.se = mr.se;
      log.sp = mr.sp;
      log.score = mr.score;
      if (result.best_epoch == 0 || log.score > result.best_score) {
        result.best_epoch = log.epoch;
        result.best_score = log.score;
        best.clear();
        for (const auto& p : model.params().params()) {
          best.emplace_back(p.tensor.data(), p.tensor.data() + p.tensor.size());
        }
      }
    }

    result.log.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
  }

  if (result.best_epoch > 0) {
    std::size_t i = 0;
    for (auto& p : model.params().params()) {
      std::copy(best[i].begin(), best[i].end(), p.tensor.data());
      ++i;
    }
  }
  return result;
}

metrics::ConfusionMatrix evaluate(const ClassifierModel& model,
                                  const std::vector<corpus::SampleRecord>& records,
                                  const std::string& feature_dir) {
  std::vector<Tensor> features(records.size());
  runtime::parallel_for(static_cast<std::int64_t>(records.size()), [&](std::int64_t i) {
    features[static_cast<std::size_t>(i)] = load_feature(feature_dir, records[static_cast<std::size_t>(i)].id);
  });
  std::vector<int> preds(records.size()), labels(records.size());
  runtime::parallel_for(static_cast<std::int64_t>(records.size()), [&](std::int64_t i) {
    preds[static_cast<std::size_t>(i)] = argmax(predict(model, features[static_cast<std::size_t>(i)]));
  });
  for (std::size_t i = 0; i < records.size(); ++i) labels[i] = static_cast<int>(records[i].label);
  return metrics::confusion(preds, labels);
}

void save_classifier(const std::string& path, const ClassifierModel& model) {
  std::vector<core::Parameter> entries = model.params().params();
  const ClassifierConfig& c = model.config();
  auto scalar = [&](const char* name, float v) {
    entries.push_back({name, Tensor({1}, {v})});
  };
  scalar("config/input_frames", static_cast<float>(c.input_frames));
  scalar("config/input_bins", static_cast<float>(c.input_bins));
  scalar("config/patch_time", static_cast<float>(c.patch_time));
  scalar("config/patch_freq", static_cast<float>(c.patch_freq));
  scalar("config/embed_dim", static_cast<float>(c.embed_dim));
  scalar("config/depth", static_cast<float>(c.depth));
  scalar("config/heads", static_cast<float>(c.heads));
  scalar("config/n_label_classes", static_cast<float>(c.n_label_classes));
  scalar("config/n_domain_classes", static_cast<float>(c.n_domain_classes));
  core::save_checkpoint(path, entries);
}

ClassifierModel load_classifier(const std::string& path) {
  const std::vector<core::Parameter> entries = core::load_checkpoint(path);
  std::map<std::string, const core::Parameter*> by_name;
  for (const auto& p : entries) by_name[p.name] = &p;

  auto want = [&](const std::string& name) -> const core::Parameter& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IntegrityError(path + ": checkpoint missing " + name);
    return *it->second;
  };
  auto scalar = [&](const std::string& name) {
    const core::Parameter& p = want(name);
    if (p.tensor.size() != 1) throw IntegrityError(path + ": " + name + " is not a scalar");
    return static_cast<int>(p.tensor[0]);
  };

  ClassifierConfig c;
  c.input_frames = scalar("config/input_frames");
  c.input_bins = scalar("config/input_bins");
  c.patch_time = scalar("config/patch_time");
  c.patch_freq = scalar("config/patch_freq");
  c.embed_dim = scalar("config/embed_dim");
  c.depth = scalar("config/depth");
  c.heads = scalar("config/heads");
  c.n_label_classes = scalar("config/n_label_classes");
  c.n_domain_classes = scalar("config/n_domain_classes");

  Rng rng(0);
  ClassifierModel model(c, rng);
  for (auto& slot : model.params().params()) {
    const core::Parameter& stored = want(slot.name);
    if (stored.tensor.shape() != slot.tensor.shape()) {
      throw IntegrityError(path + ": shape mismatch for " + slot.name);
    }
    std::copy(stored.tensor.data(), stored.tensor.data() + stored.tensor.size(),
              slot.tensor.data());
  }
  return model;
}

}  // namespace respiro::classifier
