#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "oracle.hpp"
#include "respiro/classifier.hpp"
#include "respiro/errors.hpp"
#include "respiro/features.hpp"
#include "respiro/ops.hpp"
#include "respiro/serialize.hpp"

using namespace respiro;
namespace clf = respiro::classifier;
namespace ops = respiro::core;
using core::Tensor;

namespace {

clf::ClassifierConfig tiny_config() {
  clf::ClassifierConfig c;
  c.input_frames = 6;
  c.input_bins = 8;
  c.patch_time = 3;
  c.patch_freq = 4;  // 2x2 patch grid
  c.embed_dim = 8;
  c.depth = 1;
  c.heads = 2;
  return c;
}

bool same_bytes(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

std::filesystem::path temp_file(const char* stem) {
  return std::filesystem::temp_directory_path() / stem;
}

std::filesystem::path temp_dir(const char* stem) {
  const auto dir = std::filesystem::temp_directory_path() / stem;
  std::filesystem::create_directories(dir);
  return dir;
}

void fill(Tensor& t, float v) { std::fill(t.data(), t.data() + t.size(), v); }

void zero_heads(clf::ClassifierModel& model) {
  for (const char* name : {"label/w", "label/b", "domain/w", "domain/b"}) {
    fill(*model.params().find(name), 0.0f);
  }
}

std::vector<std::vector<float>> grad_snapshot(const clf::ClassifierModel& model) {
  std::vector<std::vector<float>> out;
  for (const auto& p : const_cast<clf::ClassifierModel&>(model).params().params()) {
    out.push_back(p.tensor.has_grad()
                      ? p.tensor.grad()
                      : std::vector<float>(static_cast<std::size_t>(p.tensor.size()), 0.0f));
  }
  return out;
}

corpus::SampleRecord record(const std::string& id, corpus::Label label, corpus::Split split,
                            corpus::Source source) {
  return {id, "audio/" + id + ".wav", label, split, source};
}

void write_cache(const std::filesystem::path& dir, const std::string& id, const Tensor& t) {
  core::save_tensors((dir / dsp::cache_filename(id, "clf")).string(), {t});
}

// Class-shifted noise so the toy training task is learnable.
Tensor toy_features(int label, Rng& rng) {
  Tensor t = Tensor::randn({6, 8}, rng);
  for (std::int64_t i = 0; i < t.size(); ++i) {
    t.data()[i] = 0.4f * t.data()[i] + 0.7f * static_cast<float>(label);
  }
  return t;
}

}  // namespace

TEST_CASE("classifier config validation") {
  clf::ClassifierConfig c;
  c.validate();  // defaults describe a 501x128 input in 16x16 patches
  CHECK(c.patches_time() == 31);
  CHECK(c.patches_freq() == 8);
  CHECK(c.n_patches() == 248);

  clf::ClassifierConfig bad = c;
  bad.patch_time = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.input_frames = 9;  // smaller than one 16-frame patch
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.depth = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.embed_dim = 10;  // not a multiple of 4 heads
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.heads = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.n_label_classes = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  Rng rng(1);
  clf::ClassifierConfig invalid = tiny_config();
  invalid.depth = 0;
  CHECK_THROWS_AS(clf::ClassifierModel(invalid, rng), ConfigError);
}

TEST_CASE("lambda schedule endpoints and frozen points") {
  CHECK(clf::lambda_schedule(0.0) == 0.0);
  // 2/(1+e^(-g*p)) - 1 == tanh(g*p/2), so tanh gives independent references.
  CHECK(clf::lambda_schedule(1.0) == doctest::Approx(0.9999092042625952).epsilon(1e-12));
  CHECK(clf::lambda_schedule(0.5) == doctest::Approx(0.9866142981514305).epsilon(1e-12));
  CHECK(clf::lambda_schedule(0.2) == doctest::Approx(0.7615941559557646).epsilon(1e-12));
  CHECK(clf::lambda_schedule(1.0, 1.0) == doctest::Approx(0.4621171572600098).epsilon(1e-12));

  double prev = -1.0;
  for (int i = 0; i <= 20; ++i) {
    const double v = clf::lambda_schedule(0.05 * i);
    CHECK(v > prev);
    prev = v;
  }

  CHECK_THROWS_AS(clf::lambda_schedule(-0.01), ArgumentError);
  CHECK_THROWS_AS(clf::lambda_schedule(1.01), ArgumentError);
  CHECK_THROWS_AS(clf::lambda_schedule(std::nan("")), ArgumentError);
}

TEST_CASE("encode trims ragged edges and pins the patch grid") {
  Rng rng(7);
  clf::ClassifierModel model(tiny_config(), rng);

  Rng data_rng(8);
  const Tensor x = Tensor::randn({6, 8}, data_rng);
  const Tensor emb = model.encode(x);
  CHECK(emb.shape() == core::Shape{8});
  CHECK(same_bytes(emb, model.encode(x)));

  // A ragged input whose kept corner matches x encodes identically: the
  // partial last row/column falls outside every whole patch.
  Tensor ragged = Tensor::zeros({7, 9});
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 8; ++c) ragged.data()[r * 9 + c] = x[r * 8 + c];
  }
  for (int c = 0; c < 9; ++c) ragged.data()[6 * 9 + c] = 99.0f;
  CHECK(same_bytes(model.encode(ragged), emb));

  CHECK_THROWS_AS(model.encode(Tensor::zeros({48})), ShapeError);
  CHECK_THROWS_WITH_AS(model.encode(Tensor::zeros({2, 3})), doctest::Contains("patch"),
                       ArgumentError);
  // 9x8 trims to a 3x2 grid, but the position table is 2x2.
  CHECK_THROWS_AS(model.encode(Tensor::zeros({9, 8})), ShapeError);
}

TEST_CASE("encode gradients match finite differences") {
  Rng rng(11);
  clf::ClassifierModel model(tiny_config(), rng);

  Rng data_rng(12);
  Tensor x = Tensor::randn({6, 8}, data_rng);
  for (std::int64_t i = 0; i < x.size(); ++i) x.data()[i] *= 0.5f;
  const Tensor target = Tensor::randn({8}, data_rng);

  // Heads are not part of encode's graph, so they stay out of the probe.
  std::vector<Tensor> inputs{x};
  for (const auto& p : model.params().params()) {
    if (p.name.rfind("label/", 0) == 0 || p.name.rfind("domain/", 0) == 0) continue;
    inputs.push_back(p.tensor);
  }

  auto f = [&](const std::vector<Tensor>& in) {
    return ops::mse_loss(model.encode(in[0]), target);
  };
  // The loss sits near 1.0, so a 1e-3 step leaves the quotient at the f32
  // noise floor (~1.3e-4); 3e-3 clears it while curvature stays ~1e-6.
  CHECK(oracle::max_grad_rel_err(f, inputs, 3e-3) < 1e-4);
}

TEST_CASE("adversarial loss composes ce plus lambda dis") {
  Rng rng(21);
  clf::ClassifierModel model(tiny_config(), rng);

  Rng data_rng(22);
  clf::AftBatch batch;
  batch.features.push_back(Tensor::randn({6, 8}, data_rng));
  batch.labels = {2};
  batch.domains = {1};

  SUBCASE("uniform heads give the hand-computed losses") {
    zero_heads(model);
    const clf::LossBreakdown b = clf::aft_loss(model, batch, 1.0);
    CHECK(b.l_ce == doctest::Approx(1.3862943611198906).epsilon(1e-6));   // ln 4
    CHECK(b.l_dis == doctest::Approx(0.6931471805599453).epsilon(1e-6));  // ln 2
    CHECK(b.l_final == doctest::Approx(2.0794415416798357).epsilon(1e-6));  // ln 8
    CHECK(b.lambda == 1.0);
  }

  SUBCASE("decomposition identity within one float ulp") {
    for (int i = 0; i < 4; ++i) batch.features.push_back(Tensor::randn({6, 8}, data_rng));
    batch.labels = {2, 0, 3, 1, 0};
    batch.domains = {1, 0, 0, 1, 1};
    for (double lam : {0.0, 0.3, 0.7, 1.0}) {
      model.params().zero_grad();
      const clf::LossBreakdown b = clf::aft_loss(model, batch, lam);
      const float f = static_cast<float>(b.l_final);
      const double ulp = static_cast<double>(std::nextafterf(f, 1e30f)) - static_cast<double>(f);
      CHECK(std::abs(b.l_final - (b.l_ce + lam * b.l_dis)) <= ulp);
    }
  }

  SUBCASE("batch validation") {
    clf::AftBatch bad = batch;
    bad.labels = {2, 0};
    CHECK_THROWS_AS(clf::aft_loss(model, bad, 0.5), ArgumentError);

    bad = batch;
    bad.labels = {4};
    CHECK_THROWS_AS(clf::aft_loss(model, bad, 0.5), ArgumentError);

    bad = batch;
    bad.domains = {2};
    CHECK_THROWS_AS(clf::aft_loss(model, bad, 0.5), ArgumentError);

    bad = batch;
    bad.domains = {-1};
    CHECK_THROWS_AS(clf::aft_loss(model, bad, 0.5), ArgumentError);

    CHECK_THROWS_AS(clf::aft_loss(model, clf::AftBatch{}, 0.5), ArgumentError);
    CHECK_THROWS_AS(clf::aft_loss(model, batch, -0.1), ArgumentError);
  }
}

TEST_CASE("lambda zero reproduces plain classification gradients") {
  Rng rng(31);
  clf::ClassifierModel model(tiny_config(), rng);

  Rng data_rng(32);
  clf::AftBatch batch;
  for (int i = 0; i < 4; ++i) batch.features.push_back(Tensor::randn({6, 8}, data_rng));
  batch.labels = {0, 3, 1, 2};
  batch.domains = {0, 1, 1, 0};

  model.params().zero_grad();
  clf::aft_loss(model, batch, 0.0);
  const auto with_zero_lambda = grad_snapshot(model);

  model.params().zero_grad();
  std::vector<Tensor> embs;
  for (const auto& f : batch.features) embs.push_back(model.encode(f));
  ops::cross_entropy(model.label_logits(ops::stack_rows(embs)), batch.labels).backward();
  const auto plain = grad_snapshot(model);

  const auto& params = model.params().params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name.rfind("domain/", 0) == 0) {
      for (float g : with_zero_lambda[i]) CHECK(g == 0.0f);
    } else {
      CHECK(with_zero_lambda[i] == plain[i]);  // bitwise
    }
  }
}

TEST_CASE("adversarial gradients split as ce minus lambda dis") {
  Rng rng(41);
  clf::ClassifierModel model(tiny_config(), rng);
  const double lam = 0.6;

  Rng data_rng(42);
  clf::AftBatch batch;
  for (int i = 0; i < 3; ++i) batch.features.push_back(Tensor::randn({6, 8}, data_rng));
  batch.labels = {1, 0, 3};
  batch.domains = {1, 0, 1};

  model.params().zero_grad();
  clf::aft_loss(model, batch, lam);
  const auto combined = grad_snapshot(model);

  auto embed_stack = [&]() {
    std::vector<Tensor> embs;
    for (const auto& f : batch.features) embs.push_back(model.encode(f));
    return ops::stack_rows(embs);
  };
  model.params().zero_grad();
  ops::cross_entropy(model.label_logits(embed_stack()), batch.labels).backward();
  const auto ce_only = grad_snapshot(model);

  model.params().zero_grad();
  // Discriminator loss without the reversal op; its true gradient direction.
  ops::cross_entropy(model.domain_logits(embed_stack()), batch.domains).backward();
  const auto dis_only = grad_snapshot(model);
  model.params().zero_grad();

  const auto& params = model.params().params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params[i].name;
    for (std::size_t j = 0; j < combined[i].size(); ++j) {
      const double got = combined[i][j];
      double want = 0.0;
      if (name.rfind("label/", 0) == 0) {
        want = ce_only[i][j];
      } else if (name.rfind("domain/", 0) == 0) {
        want = lam * dis_only[i][j];  // reversal applies only below the head
      } else {
        want = ce_only[i][j] - lam * dis_only[i][j];
      }
      CHECK(std::abs(got - want) / std::max({1.0, std::abs(got), std::abs(want)}) < 1e-5);
    }
  }

  SUBCASE("numeric gradient at the embedding") {
    Tensor emb = Tensor::randn({1, 8}, data_rng);
    const std::vector<int> y{2};
    const std::vector<int> d{1};
    // The reversal is invisible to forward differencing, so the numeric
    // reference flips the sign of the discriminator term instead.
    auto composed = [&](const std::vector<Tensor>& in) {
      Tensor ce = ops::cross_entropy(model.label_logits(in[0]), y);
      Tensor dis = ops::cross_entropy(
          model.domain_logits(ops::gradient_reverse(in[0], 1.0f)), d);
      return ops::add(ce, ops::scale(dis, static_cast<float>(lam)));
    };
    auto surrogate = [&](const std::vector<Tensor>& in) {
      Tensor ce = ops::cross_entropy(model.label_logits(in[0]), y);
      Tensor dis = ops::cross_entropy(model.domain_logits(in[0]), d);
      return ops::add(ce, ops::scale(dis, -static_cast<float>(lam)));
    };
    CHECK(oracle::max_grad_rel_err_vs(composed, surrogate, {emb}, 3e-3) < 1e-4);
  }
}

TEST_CASE("prediction is deterministic and shift-invariant") {
  Rng rng(51);
  clf::ClassifierModel model(tiny_config(), rng);
  Rng data_rng(52);
  const Tensor x = Tensor::randn({6, 8}, data_rng);

  const Tensor logits = clf::predict(model, x);
  CHECK(logits.shape() == core::Shape{4});
  CHECK(same_bytes(logits, clf::predict(model, x)));

  const int before = clf::argmax(logits);
  Tensor& bias = *model.params().find("label/b");
  for (int i = 0; i < 4; ++i) bias.data()[i] += 3.25f;
  CHECK(clf::argmax(clf::predict(model, x)) == before);

  CHECK(clf::argmax(Tensor({4}, {1.0f, 1.0f, 1.0f, 0.0f})) == 0);  // ties pick the lowest
  CHECK(clf::argmax(Tensor({3}, {0.0f, 2.0f, 2.0f})) == 1);
  CHECK_THROWS_AS(clf::argmax(Tensor()), ArgumentError);
}

TEST_CASE("evaluate tallies predictions against record labels") {
  Rng rng(61);
  clf::ClassifierModel model(tiny_config(), rng);
  // Freeze the label head to always vote crackle.
  zero_heads(model);
  model.params().find("label/b")->data()[1] = 5.0f;

  const auto dir = temp_dir("clf_eval_cache");
  std::vector<corpus::SampleRecord> records;
  Rng data_rng(62);
  const corpus::Label all[] = {corpus::Label::normal, corpus::Label::crackle,
                               corpus::Label::wheeze, corpus::Label::both};
  for (int c = 0; c < 4; ++c) {
    const std::string id = "ev" + std::to_string(c);
    records.push_back(record(id, all[c], corpus::Split::test, corpus::Source::real));
    write_cache(dir, id, Tensor::randn({6, 8}, data_rng));
  }

  const metrics::ConfusionMatrix cm = clf::evaluate(model, records, dir.string());
  for (int c = 0; c < 4; ++c) {
    for (int p = 0; p < 4; ++p) CHECK(cm.counts[c][p] == (p == 1 ? 1 : 0));
  }

  records.push_back(record("ghost", corpus::Label::normal, corpus::Split::test,
                           corpus::Source::real));
  CHECK_THROWS_WITH_AS(clf::evaluate(model, records, dir.string()),
                       doctest::Contains("ghost"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training logs epochs and restores the best checkpoint") {
  const auto dir = temp_dir("clf_train_cache");
  std::vector<corpus::SampleRecord> records;
  Rng data_rng(71);
  const corpus::Label all[] = {corpus::Label::normal, corpus::Label::crackle,
                               corpus::Label::wheeze, corpus::Label::both};
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < 4; ++i) {
      const std::string id = "tr" + std::to_string(c) + "_" + std::to_string(i);
      const auto source = (c > 0 && i >= 2) ? corpus::Source::synthetic : corpus::Source::real;
      records.push_back(record(id, all[c], corpus::Split::train, source));
      write_cache(dir, id, toy_features(c, data_rng));
    }
    for (int i = 0; i < 2; ++i) {
      const std::string id = "te" + std::to_string(c) + "_" + std::to_string(i);
      records.push_back(record(id, all[c], corpus::Split::test, corpus::Source::real));
      write_cache(dir, id, toy_features(c, data_rng));
    }
  }

  clf::ClassifierTrainOptions options;
  options.epochs = 3;
  options.batch_size = 5;
  options.lr = 1e-3;
  int callbacks = 0;
  options.on_epoch = [&](const clf::EpochLog& log) {
    ++callbacks;
    CHECK(log.epoch == callbacks);
  };

  auto run = [&](bool adversarial, std::uint64_t seed) {
    callbacks = 0;
    options.adversarial = adversarial;
    Rng init(seed);
    clf::ClassifierModel model(tiny_config(), init);
    Rng shuffle(seed + 1);
    auto result = clf::train_classifier(model, records, dir.string(), options, shuffle);
    return std::make_pair(std::move(model), std::move(result));
  };

  auto [model, result] = run(true, 100);
  CHECK(callbacks == 3);
  REQUIRE(result.log.size() == 3);
  for (int e = 0; e < 3; ++e) {
    const clf::EpochLog& log = result.log[static_cast<std::size_t>(e)];
    CHECK(log.epoch == e + 1);
    CHECK(log.lambda == clf::lambda_schedule(e / 3.0));  // first epoch runs at 0
    CHECK(log.l_final == log.l_ce + log.lambda * log.l_dis);
    CHECK(log.l_ce > 0.0);
    CHECK(log.train_acc >= 0.0);
    CHECK(log.train_acc <= 100.0);
    CHECK(std::isfinite(log.score));
  }

  // best_epoch is the first argmax of the test Score.
  int expect_best = 1;
  for (int e = 1; e < 3; ++e) {
    if (result.log[static_cast<std::size_t>(e)].score >
        result.log[static_cast<std::size_t>(expect_best - 1)].score) {
      expect_best = e + 1;
    }
  }
  CHECK(result.best_epoch == expect_best);
  CHECK(result.best_score == result.log[static_cast<std::size_t>(expect_best - 1)].score);

  // The returned model is the best epoch's model, not the last one.
  std::vector<corpus::SampleRecord> test_records;
  for (const auto& r : records) {
    if (r.split == corpus::Split::test) test_records.push_back(r);
  }
  const metrics::MetricsReport mr =
      metrics::icbhi_metrics(clf::evaluate(model, test_records, dir.string()));
  CHECK(mr.score == result.best_score);

  SUBCASE("same seed reruns bitwise identically") {
    auto [model2, result2] = run(true, 100);
    REQUIRE(result2.log.size() == result.log.size());
    for (std::size_t e = 0; e < result.log.size(); ++e) {
      CHECK(result2.log[e].l_ce == result.log[e].l_ce);
      CHECK(result2.log[e].l_dis == result.log[e].l_dis);
      CHECK(result2.log[e].score == result.log[e].score);
    }
    const auto& a = model.params().params();
    const auto& b = model2.params().params();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_bytes(a[i].tensor, b[i].tensor));
  }

  SUBCASE("plain mode pins lambda to zero and diverges from aft") {
    auto [plain_model, plain] = run(false, 100);
    for (const auto& log : plain.log) {
      CHECK(log.lambda == 0.0);
      CHECK(log.l_final == log.l_ce);
    }
    bool differs = false;
    const auto& a = model.params().params();
    const auto& b = plain_model.params().params();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!same_bytes(a[i].tensor, b[i].tensor)) differs = true;
    }
    CHECK(differs);
  }

  SUBCASE("epoch log serializes as one json line") {
    const std::string line = clf::epoch_log_json(result.log[1]);
    CHECK(line.back() == '\n');
    CHECK(line.find('\n') == line.size() - 1);
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch").get<int>() == 2);
    CHECK(j.at("l_ce").get<double>() == result.log[1].l_ce);
    CHECK(j.at("l_dis").get<double>() == result.log[1].l_dis);
    CHECK(j.at("l_final").get<double>() == result.log[1].l_final);
    CHECK(j.at("lambda").get<double>() == result.log[1].lambda);
    CHECK(j.at("train_acc").get<double>() == result.log[1].train_acc);
    CHECK(j.at("se").get<double>() == result.log[1].se);
    CHECK(j.at("sp").get<double>() == result.log[1].sp);
    CHECK(j.at("score").get<double>() == result.log[1].score);
  }

  SUBCASE("error contracts") {
    Rng init(5);
    clf::ClassifierModel fresh(tiny_config(), init);
    Rng shuffle(6);

    std::vector<corpus::SampleRecord> ghost = records;
    ghost.push_back(record("ghost", corpus::Label::normal, corpus::Split::train,
                           corpus::Source::real));
    CHECK_THROWS_WITH_AS(clf::train_classifier(fresh, ghost, dir.string(), options, shuffle),
                         doctest::Contains("ghost"), DataError);

    CHECK_THROWS_AS(clf::train_classifier(fresh, test_records, dir.string(), options, shuffle),
                    ArgumentError);  // no train split

    clf::ClassifierTrainOptions bad = options;
    bad.epochs = 0;
    CHECK_THROWS_AS(clf::train_classifier(fresh, records, dir.string(), bad, shuffle),
                    ConfigError);
    bad = options;
    bad.batch_size = 0;
    CHECK_THROWS_AS(clf::train_classifier(fresh, records, dir.string(), bad, shuffle),
                    ConfigError);
  }

  std::filesystem::remove_all(dir);
}

TEST_CASE("classifier checkpoint round trip") {
  Rng rng(81);
  clf::ClassifierModel model(tiny_config(), rng);
  const auto path = temp_file("clf_roundtrip.rck");
  clf::save_classifier(path.string(), model);

  clf::ClassifierModel loaded = clf::load_classifier(path.string());
  CHECK(loaded.config().input_frames == 6);
  CHECK(loaded.config().input_bins == 8);
  CHECK(loaded.config().patch_time == 3);
  CHECK(loaded.config().patch_freq == 4);
  CHECK(loaded.config().embed_dim == 8);
  CHECK(loaded.config().depth == 1);
  CHECK(loaded.config().heads == 2);
  CHECK(loaded.config().n_label_classes == 4);
  CHECK(loaded.config().n_domain_classes == 2);

  const auto& a = model.params().params();
  const auto& b = loaded.params().params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(same_bytes(a[i].tensor, b[i].tensor));
  }

  Rng data_rng(82);
  const Tensor x = Tensor::randn({6, 8}, data_rng);
  CHECK(same_bytes(clf::predict(model, x), clf::predict(loaded, x)));
  std::filesystem::remove(path);

  SUBCASE("missing parameter entry") {
    const auto broken = temp_file("clf_missing.rck");
    clf::save_classifier(broken.string(), model);
    auto entries = respiro::core::load_checkpoint(broken.string());
    entries.erase(std::find_if(entries.begin(), entries.end(),
                               [](const auto& p) { return p.name == "blk0/attn/q/w"; }));
    respiro::core::save_checkpoint(broken.string(), entries);
    CHECK_THROWS_WITH_AS(clf::load_classifier(broken.string()),
                         doctest::Contains("blk0/attn/q/w"), IntegrityError);
    std::filesystem::remove(broken);
  }

  SUBCASE("shape mismatch") {
    const auto broken = temp_file("clf_badshape.rck");
    clf::save_classifier(broken.string(), model);
    auto entries = respiro::core::load_checkpoint(broken.string());
    auto it = std::find_if(entries.begin(), entries.end(),
                           [](const auto& p) { return p.name == "pos"; });
    REQUIRE(it != entries.end());
    it->tensor = Tensor::zeros({3, 8});
    respiro::core::save_checkpoint(broken.string(), entries);
    CHECK_THROWS_WITH_AS(clf::load_classifier(broken.string()), doctest::Contains("pos"),
                         IntegrityError);
    std::filesystem::remove(broken);
  }
}
