// Subprocess tests for the command-line tool. Each case works in its own
// scratch directory; the binary path comes in through RESPIRO_CLI_PATH.
#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "respiro/audio.hpp"
#include "respiro/classifier.hpp"
#include "respiro/corpus.hpp"
#include "respiro/diffusion.hpp"
#include "respiro/features.hpp"
#include "respiro/rng.hpp"
#include "respiro/serialize.hpp"
#include "respiro/tensor.hpp"
#include "respiro/vocoder.hpp"

using namespace respiro;
using core::Tensor;
namespace clf = respiro::classifier;
using nlohmann::json;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
}

// Runs the CLI from inside `workdir` so relative manifest paths resolve.
CliResult run_cli(const std::filesystem::path& workdir, const std::string& args) {
  const auto out_file = workdir / ".cli_stdout";
  const auto err_file = workdir / ".cli_stderr";
  const std::string cmd = "cd '" + workdir.string() + "' && '" + RESPIRO_CLI_PATH + "' " + args +
                          " > '" + out_file.string() + "' 2> '" + err_file.string() + "'";
  const int rc = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = (rc >= 0 && WIFEXITED(rc)) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

std::filesystem::path fresh_dir(const char* stem) {
  const auto dir = std::filesystem::temp_directory_path() / stem;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

dsp::Waveform sine(double freq, double seconds = 0.5, int rate = 16000) {
  dsp::Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    w.samples[i] = 0.5f * static_cast<float>(
                              std::sin(2.0 * 3.14159265358979 * freq * static_cast<double>(i) / rate));
  }
  return w;
}

corpus::SampleRecord record(const std::string& id, corpus::Label label, corpus::Split split,
                            corpus::Source source) {
  return {id, "audio/" + id + ".wav", label, split, source};
}

clf::ClassifierConfig tiny_clf_config() {
  clf::ClassifierConfig c;
  c.input_frames = 6;
  c.input_bins = 8;
  c.patch_time = 3;
  c.patch_freq = 4;
  c.embed_dim = 8;
  c.depth = 1;
  c.heads = 2;
  return c;
}

// Class-shifted noise, learnable in a couple of epochs.
Tensor toy_features(int label, Rng& rng) {
  Tensor t = Tensor::randn({6, 8}, rng);
  for (std::int64_t i = 0; i < t.size(); ++i) {
    t.data()[i] = 0.4f * t.data()[i] + 0.7f * static_cast<float>(label);
  }
  return t;
}

const char* kTinyClfConfig = R"({
  "classifier": {"input_frames": 6, "input_bins": 8, "patch_time": 3, "patch_freq": 4,
                 "embed_dim": 8, "depth": 1, "heads": 2,
                 "epochs": 3, "batch_size": 5, "lr": 1e-3},
  "seeds": [0, 1]
})";

}  // namespace

TEST_CASE("cli usage and config errors exit 1") {
  const auto dir = fresh_dir("cli_usage");
  write_file(dir / "m.jsonl", "");

  CHECK(run_cli(dir, "").exit_code == 1);
  CHECK(run_cli(dir, "bogus-subcommand").exit_code == 1);
  CHECK(run_cli(dir, "--help").exit_code == 0);
  CHECK(run_cli(dir, "featurize --manifest m.jsonl --pipeline bogus --out x").exit_code == 1);
  CHECK(run_cli(dir, "featurize --pipeline classifier --out x").exit_code == 1);

  write_file(dir / "bad_key.json", R"({"dsp": {"sample_rat": 8000}})");
  const CliResult unknown =
      run_cli(dir, "featurize --config bad_key.json --manifest m.jsonl --pipeline classifier --out x");
  CHECK(unknown.exit_code == 1);
  CHECK(unknown.err.find("sample_rat") != std::string::npos);

  write_file(dir / "bad_type.json", R"({"seeds": "zero"})");
  CHECK(run_cli(dir, "featurize --config bad_type.json --manifest m.jsonl --pipeline classifier "
                     "--out x")
            .exit_code == 1);

  write_file(dir / "bad_syntax.json", "{nope");
  CHECK(run_cli(dir, "featurize --config bad_syntax.json --manifest m.jsonl --pipeline classifier "
                     "--out x")
            .exit_code == 1);
}

TEST_CASE("featurize writes caches idempotently and lists failures") {
  const auto dir = fresh_dir("cli_featurize");
  std::filesystem::create_directories(dir / "audio");
  const std::vector<corpus::SampleRecord> records = {
      record("a", corpus::Label::normal, corpus::Split::train, corpus::Source::real),
      record("b", corpus::Label::crackle, corpus::Split::train, corpus::Source::real),
      record("c", corpus::Label::wheeze, corpus::Split::test, corpus::Source::real),
  };
  dsp::save_wav((dir / "audio/a.wav").string(), sine(220.0));
  dsp::save_wav((dir / "audio/b.wav").string(), sine(330.0));
  dsp::save_wav((dir / "audio/c.wav").string(), sine(440.0));
  corpus::save_manifest((dir / "m.jsonl").string(), records);
  write_file(dir / "cfg.json",
             R"({"dsp": {"vocoder_seconds": 0.5, "classifier_seconds": 0.5}})");

  CliResult r = run_cli(dir, "featurize --config cfg.json --manifest m.jsonl "
                             "--pipeline classifier --out cache");
  CHECK(r.exit_code == 0);
  json j = json::parse(r.out);
  CHECK(j["written"] == 3);
  CHECK(j["skipped"] == 0);
  CHECK(j["failed"] == 0);
  CHECK(std::filesystem::exists(dir / "cache/run.config.json"));

  // A 0.5 s clip at 16 kHz: center framing at hop 160 gives 51 frames.
  const auto cached = core::load_tensors((dir / "cache" / dsp::cache_filename("a", "clf")).string());
  REQUIRE(cached.size() == 1);
  CHECK(cached[0].dim(0) == 51);
  CHECK(cached[0].dim(1) == 128);

  // Second run finds every cache newer than its audio.
  r = run_cli(dir, "featurize --config cfg.json --manifest m.jsonl --pipeline classifier "
                   "--out cache");
  CHECK(r.exit_code == 0);
  j = json::parse(r.out);
  CHECK(j["written"] == 0);
  CHECK(j["skipped"] == 3);

  // Corrupting one file (and bumping its mtime past the cache) re-runs just
  // that record, which now fails.
  write_file(dir / "audio/b.wav", "RIFFgarbage");
  const auto cache_time =
      std::filesystem::last_write_time(dir / "cache" / dsp::cache_filename("b", "clf"));
  std::filesystem::last_write_time(dir / "audio/b.wav", cache_time + std::chrono::seconds(2));
  r = run_cli(dir, "featurize --config cfg.json --manifest m.jsonl --pipeline classifier "
                   "--out cache");
  CHECK(r.exit_code == 2);
  j = json::parse(r.out);
  CHECK(j["written"] == 0);
  CHECK(j["skipped"] == 2);
  CHECK(j["failed"] == 1);
  CHECK(r.err.find("b") != std::string::npos);

  // The vocoder pipeline writes its own cache family.
  corpus::save_manifest((dir / "m_voc.jsonl").string(), {records[0]});
  r = run_cli(dir, "featurize --config cfg.json --manifest m_voc.jsonl --pipeline vocoder "
                   "--out vcache");
  CHECK(r.exit_code == 0);
  const auto mel = core::load_tensors((dir / "vcache" / dsp::cache_filename("a", "vocmel")).string());
  REQUIRE(mel.size() == 1);
  CHECK(mel[0].dim(0) == 31);  // floor(8000 / 256) non-center frames
  CHECK(mel[0].dim(1) == 80);
}

TEST_CASE("mix emits the ratio row and fails on pool shortfall") {
  const auto dir = fresh_dir("cli_mix");
  std::vector<corpus::SampleRecord> real;
  const auto real_train = [&](corpus::Label label, int count) {
    for (int i = 0; i < count; ++i) {
      real.push_back(record("r_" + std::string(corpus::to_string(label)) + "_" + std::to_string(i),
                            label, corpus::Split::train, corpus::Source::real));
    }
  };
  real_train(corpus::Label::normal, 4);
  real_train(corpus::Label::crackle, 3);
  real_train(corpus::Label::wheeze, 2);
  real_train(corpus::Label::both, 1);
  real.push_back(record("r_test", corpus::Label::normal, corpus::Split::test,
                        corpus::Source::real));

  std::vector<corpus::SampleRecord> pool;
  const auto synth = [&](corpus::Label label, int count) {
    for (int i = 0; i < count; ++i) {
      pool.push_back(record("p_" + std::string(corpus::to_string(label)) + "_" + std::to_string(i),
                            label, corpus::Split::train, corpus::Source::synthetic));
    }
  };
  synth(corpus::Label::crackle, 1);
  synth(corpus::Label::wheeze, 2);
  synth(corpus::Label::both, 3);
  corpus::save_manifest((dir / "real.jsonl").string(), real);
  corpus::save_manifest((dir / "pool.jsonl").string(), pool);

  CliResult r = run_cli(dir, "mix --real-manifest real.jsonl --synth-manifest pool.jsonl --n 4 "
                             "--out mixed.jsonl");
  CHECK(r.exit_code == 0);
  json j = json::parse(r.out);
  CHECK(j["n"] == 4);
  CHECK(j["added"]["normal"] == 0);
  CHECK(j["added"]["crackle"] == 1);
  CHECK(j["added"]["wheeze"] == 2);
  CHECK(j["added"]["both"] == 3);
  CHECK(j["train_total"] == 16);
  CHECK(j["records"] == 17);
  const std::vector<double> row = j["synth_ratio_pct"].get<std::vector<double>>();
  REQUIRE(row.size() == 4);
  CHECK(row[0] == doctest::Approx(0.0));
  CHECK(row[1] == doctest::Approx(25.0));
  CHECK(row[2] == doctest::Approx(50.0));
  CHECK(row[3] == doctest::Approx(75.0));

  // The written manifest hits the target in every class, real records first.
  const auto mixed = corpus::load_manifest((dir / "mixed.jsonl").string());
  const auto stats = corpus::dataset_stats(mixed);
  for (int c = 0; c < corpus::kNumLabels; ++c) {
    CHECK(stats.class_count(static_cast<corpus::Label>(c), corpus::Split::train) == 4);
  }
  CHECK(std::filesystem::exists(dir / "mixed.jsonl.config.json"));

  // Reruns rewrite the same bytes.
  const std::string bytes = slurp(dir / "mixed.jsonl");
  CHECK(run_cli(dir, "mix --real-manifest real.jsonl --synth-manifest pool.jsonl --n 4 "
                     "--out mixed.jsonl")
            .exit_code == 0);
  CHECK(slurp(dir / "mixed.jsonl") == bytes);

  // normal has no synthetic pool, so n=6 cannot be satisfied.
  r = run_cli(dir, "mix --real-manifest real.jsonl --synth-manifest pool.jsonl --n 6 "
                   "--out mixed6.jsonl");
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("normal") != std::string::npos);

  CHECK(run_cli(dir, "mix --real-manifest real.jsonl --synth-manifest pool.jsonl --n 0 "
                     "--out mixed0.jsonl")
            .exit_code == 1);
}

TEST_CASE("generate writes requested counts deterministically") {
  const auto dir = fresh_dir("cli_generate");
  std::filesystem::create_directories(dir / "audio");

  vocoder::VocoderConfig vc;
  vc.residual_layers = 2;
  vc.residual_channels = 4;
  vc.dilation_cycle = 2;
  vc.step_embed_dim = 8;
  Rng rng(3);
  const vocoder::VocoderModel model(vc, rng);
  const auto schedule = diffusion::linear_schedule(8, 1e-4, 0.05);
  vocoder::save_vocoder((dir / "voc.rck").string(), model, schedule);

  const std::vector<corpus::SampleRecord> records = {
      record("c0", corpus::Label::crackle, corpus::Split::train, corpus::Source::real),
      record("c1", corpus::Label::crackle, corpus::Split::train, corpus::Source::real),
      record("w0", corpus::Label::wheeze, corpus::Split::train, corpus::Source::real),
      record("t0", corpus::Label::wheeze, corpus::Split::test, corpus::Source::real),
  };
  dsp::save_wav((dir / "audio/c0.wav").string(), sine(250.0));
  dsp::save_wav((dir / "audio/c1.wav").string(), sine(350.0));
  dsp::save_wav((dir / "audio/w0.wav").string(), sine(450.0));
  dsp::save_wav((dir / "audio/t0.wav").string(), sine(550.0));
  corpus::save_manifest((dir / "m.jsonl").string(), records);
  write_file(dir / "cfg.json", R"({"dsp": {"vocoder_seconds": 0.5}})");

  // Three crackles round-robin over a two-record pool; one wheeze.
  CliResult r = run_cli(dir, "generate --config cfg.json --checkpoint voc.rck --manifest m.jsonl "
                             "--per-class-counts 0,3,1,0 --out syn");
  CHECK(r.exit_code == 0);
  json j = json::parse(r.out);
  CHECK(j["written"] == 4);
  CHECK(j["per_class"]["crackle"] == 3);
  CHECK(j["per_class"]["wheeze"] == 1);

  const auto synth = corpus::load_manifest((dir / "syn/manifest.jsonl").string());
  REQUIRE(synth.size() == 4);
  CHECK(synth[0].id == "syn_crackle_0");
  CHECK(synth[2].id == "syn_crackle_2");
  CHECK(synth[3].id == "syn_wheeze_0");
  for (const auto& s : synth) {
    CHECK(s.source == corpus::Source::synthetic);
    CHECK(s.split == corpus::Split::train);
    CHECK(std::filesystem::exists(dir / s.path));
  }

  // Same seed, same bytes; a different seed diverges.
  const std::string first = slurp(dir / "syn/syn_crackle_0.wav");
  CHECK(run_cli(dir, "generate --config cfg.json --checkpoint voc.rck --manifest m.jsonl "
                     "--per-class-counts 0,3,1,0 --out syn")
            .exit_code == 0);
  CHECK(slurp(dir / "syn/syn_crackle_0.wav") == first);
  CHECK(run_cli(dir, "generate --config cfg.json --checkpoint voc.rck --manifest m.jsonl "
                     "--per-class-counts 0,3,1,0 --seed 5 --out syn5")
            .exit_code == 0);
  CHECK(slurp(dir / "syn5/syn_crackle_0.wav") != first);

  // Zero everywhere is a valid request for an empty manifest.
  r = run_cli(dir, "generate --config cfg.json --checkpoint voc.rck --manifest m.jsonl "
                   "--per-class-counts 0,0,0,0 --out syn0");
  CHECK(r.exit_code == 0);
  CHECK(json::parse(r.out)["written"] == 0);
  CHECK(corpus::load_manifest((dir / "syn0/manifest.jsonl").string()).empty());

  // No normal training records to condition on.
  r = run_cli(dir, "generate --config cfg.json --checkpoint voc.rck --manifest m.jsonl "
                   "--per-class-counts 1,0,0,0 --out synx");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("normal") != std::string::npos);

  CHECK(run_cli(dir, "generate --config cfg.json --checkpoint voc.rck --manifest m.jsonl "
                     "--per-class-counts 1,2,3 --out synx")
            .exit_code == 1);
}

TEST_CASE("train-clf aggregates seeds with reproducible outputs") {
  const auto dir = fresh_dir("cli_train_clf");
  std::filesystem::create_directories(dir / "cache");

  Rng data_rng(71);
  std::vector<corpus::SampleRecord> records;
  for (int c = 0; c < corpus::kNumLabels; ++c) {
    for (int i = 0; i < 4; ++i) {
      const auto source = (c > 0 && i >= 2) ? corpus::Source::synthetic : corpus::Source::real;
      records.push_back(record("tr" + std::to_string(c) + std::to_string(i),
                               static_cast<corpus::Label>(c), corpus::Split::train, source));
    }
    for (int i = 0; i < 2; ++i) {
      records.push_back(record("te" + std::to_string(c) + std::to_string(i),
                               static_cast<corpus::Label>(c), corpus::Split::test,
                               corpus::Source::real));
    }
  }
  for (const auto& rec : records) {
    core::save_tensors((dir / "cache" / dsp::cache_filename(rec.id, "clf")).string(),
                       {toy_features(static_cast<int>(rec.label), data_rng)});
  }
  corpus::save_manifest((dir / "m.jsonl").string(), records);
  write_file(dir / "cfg.json", kTinyClfConfig);

  CliResult r = run_cli(dir, "train-clf --config cfg.json --manifest m.jsonl --feature-dir cache "
                             "--out run1");
  CHECK(r.exit_code == 0);
  json agg = json::parse(r.out);
  CHECK(agg["seeds"] == 2);
  CHECK(std::isfinite(agg["score"].get<double>()));
  CHECK(r.out == slurp(dir / "run1/report.json"));

  for (const char* name : {"run.config.json", "seed0.rck", "seed0.log.jsonl", "seed0.report.json",
                           "seed1.rck", "seed1.log.jsonl", "seed1.report.json"}) {
    CHECK(std::filesystem::exists(dir / "run1" / name));
  }

  // Three epochs logged, adversarial weight starting at zero.
  std::ifstream log(dir / "run1/seed0.log.jsonl");
  std::string line;
  std::vector<json> epochs;
  while (std::getline(log, line)) epochs.push_back(json::parse(line));
  REQUIRE(epochs.size() == 3);
  CHECK(epochs[0]["epoch"] == 1);
  CHECK(epochs[0]["lambda"] == 0.0);
  CHECK(epochs[2]["lambda"].get<double>() > 0.9);

  // The aggregate is the mean of the per-seed reports.
  const json s0 = json::parse(slurp(dir / "run1/seed0.report.json"));
  const json s1 = json::parse(slurp(dir / "run1/seed1.report.json"));
  CHECK(agg["score"].get<double>() ==
        doctest::Approx((s0["score"].get<double>() + s1["score"].get<double>()) / 2)
            .epsilon(1e-12));

  // Rerun and parallel-seed runs are byte-identical.
  CHECK(run_cli(dir, "train-clf --config cfg.json --manifest m.jsonl --feature-dir cache "
                     "--out run2")
            .exit_code == 0);
  CHECK(run_cli(dir, "train-clf --config cfg.json --manifest m.jsonl --feature-dir cache "
                     "--parallel-seeds --out run3")
            .exit_code == 0);
  for (const char* name : {"report.json", "seed0.rck", "seed1.rck", "seed0.log.jsonl",
                           "seed1.log.jsonl"}) {
    CHECK(slurp(dir / "run1" / name) == slurp(dir / "run2" / name));
    CHECK(slurp(dir / "run1" / name) == slurp(dir / "run3" / name));
  }

  // Plain fine-tuning pins the weight at zero and trains differently.
  CHECK(run_cli(dir, "train-clf --config cfg.json --manifest m.jsonl --feature-dir cache "
                     "--no-aft --seeds 0 --out run4")
            .exit_code == 0);
  std::ifstream plain_log(dir / "run4/seed0.log.jsonl");
  while (std::getline(plain_log, line)) CHECK(json::parse(line)["lambda"] == 0.0);
  CHECK(slurp(dir / "run4/seed0.rck") != slurp(dir / "run1/seed0.rck"));
  const json snapshot = json::parse(slurp(dir / "run4/run.config.json"));
  CHECK(snapshot["classifier"]["adversarial"] == false);
  CHECK(snapshot["seeds"] == json::array({0}));

  CHECK(run_cli(dir, "train-clf --config cfg.json --manifest m.jsonl --feature-dir cache "
                     "--seeds -1 --out runx")
            .exit_code == 1);
  CHECK(run_cli(dir, "train-clf --config cfg.json --manifest m.jsonl --feature-dir missing "
                     "--out runx")
            .exit_code == 2);
}

TEST_CASE("eval reports a perfect fixture at score 100") {
  const auto dir = fresh_dir("cli_eval");
  std::filesystem::create_directories(dir / "cache");

  // Labels are defined as whatever the checkpoint predicts, making the
  // fixture perfect by construction.
  Rng init_rng(7);
  const clf::ClassifierModel model(tiny_clf_config(), init_rng);
  clf::save_classifier((dir / "clf.rck").string(), model);

  Rng feat_rng(8);
  std::vector<corpus::SampleRecord> records;
  std::array<int, corpus::kNumLabels> have{};
  for (int i = 0; i < 400; ++i) {
    const Tensor f = Tensor::randn({6, 8}, feat_rng);
    const int pred = clf::argmax(clf::predict(model, f));
    const std::string id = "e" + std::to_string(i);
    records.push_back(record(id, static_cast<corpus::Label>(pred), corpus::Split::test,
                             corpus::Source::real));
    core::save_tensors((dir / "cache" / dsp::cache_filename(id, "clf")).string(), {f});
    if (++have[static_cast<std::size_t>(pred)] >= 2 &&
        *std::min_element(have.begin(), have.end()) >= 2) {
      break;
    }
  }
  REQUIRE(*std::min_element(have.begin(), have.end()) >= 2);
  corpus::save_manifest((dir / "m.jsonl").string(), records);

  CliResult r = run_cli(dir, "eval --checkpoint clf.rck --manifest m.jsonl --feature-dir cache "
                             "--out report");
  CHECK(r.exit_code == 0);
  const json j = json::parse(r.out);
  CHECK(j["sp"] == 100.0);
  CHECK(j["se"] == 100.0);
  CHECK(j["score"] == 100.0);
  CHECK(j["seeds"] == 1);
  for (const char* cls : {"normal", "crackle", "wheeze", "both"}) {
    CHECK(j["per_class"][cls] == 100.0);
  }

  CHECK(slurp(dir / "report/report.json") == r.out);
  CHECK(slurp(dir / "report/confusion.csv").find("normal") != std::string::npos);
  CHECK(slurp(dir / "report/confusion.pgm").substr(0, 2) == "P5");
  CHECK(std::filesystem::exists(dir / "report/run.config.json"));

  // Reruns reproduce the report byte for byte.
  const CliResult again =
      run_cli(dir, "eval --checkpoint clf.rck --manifest m.jsonl --feature-dir cache");
  CHECK(again.exit_code == 0);
  CHECK(again.out == r.out);

  // Train-only manifests have nothing to score; missing checkpoints are a
  // data error.
  corpus::save_manifest((dir / "train_only.jsonl").string(),
                        {record("e0", corpus::Label::normal, corpus::Split::train,
                                corpus::Source::real)});
  CHECK(run_cli(dir, "eval --checkpoint clf.rck --manifest train_only.jsonl --feature-dir cache")
            .exit_code == 1);
  CHECK(run_cli(dir, "eval --checkpoint nope.rck --manifest m.jsonl --feature-dir cache")
            .exit_code == 2);
}

TEST_CASE("spectrogram-dump pairs real and synthetic records") {
  const auto dir = fresh_dir("cli_dump");
  std::filesystem::create_directories(dir / "audio");
  const std::vector<corpus::SampleRecord> records = {
      record("r0", corpus::Label::wheeze, corpus::Split::train, corpus::Source::real),
      record("r1", corpus::Label::crackle, corpus::Split::test, corpus::Source::real),
      record("s_w", corpus::Label::wheeze, corpus::Split::train, corpus::Source::synthetic),
      record("s_w2", corpus::Label::wheeze, corpus::Split::train, corpus::Source::synthetic),
      record("s_c", corpus::Label::crackle, corpus::Split::train, corpus::Source::synthetic),
  };
  for (const auto& rec : records) {
    dsp::save_wav((dir / rec.path).string(), sine(200.0 + 40.0 * static_cast<int>(rec.label)));
  }
  corpus::save_manifest((dir / "m.jsonl").string(), records);
  write_file(dir / "cfg.json", R"({"dsp": {"vocoder_seconds": 0.5}})");

  CliResult r = run_cli(dir, "spectrogram-dump --config cfg.json --manifest m.jsonl "
                             "--ids r0,r1 --out specs");
  CHECK(r.exit_code == 0);
  const json j = json::parse(r.out);
  CHECK(j["written"] == 4);
  REQUIRE(j["pairs"].size() == 2);
  CHECK(j["pairs"][0]["id"] == "r0");
  CHECK(j["pairs"][0]["synthetic_id"] == "s_w");  // first wheeze in id order
  CHECK(j["pairs"][1]["id"] == "r1");
  CHECK(j["pairs"][1]["synthetic_id"] == "s_c");
  for (const char* name : {"r0.real.pgm", "r0.synthetic.pgm", "r1.real.pgm", "r1.synthetic.pgm"}) {
    CHECK(slurp(dir / "specs" / name).substr(0, 2) == "P5");
  }

  CliResult missing = run_cli(dir, "spectrogram-dump --config cfg.json --manifest m.jsonl "
                                   "--ids ghost --out specs2");
  CHECK(missing.exit_code == 2);
  CHECK(missing.err.find("ghost") != std::string::npos);

  CHECK(run_cli(dir, "spectrogram-dump --config cfg.json --manifest m.jsonl --ids s_w "
                     "--out specs3")
            .exit_code == 2);

  // No synthetic normals to pair with.
  corpus::save_manifest((dir / "m2.jsonl").string(),
                        {record("r2", corpus::Label::normal, corpus::Split::train,
                                corpus::Source::real)});
  dsp::save_wav((dir / "audio/r2.wav").string(), sine(180.0));
  const CliResult unpaired = run_cli(dir, "spectrogram-dump --config cfg.json --manifest m2.jsonl "
                                          "--ids r2 --out specs4");
  CHECK(unpaired.exit_code == 2);
  CHECK(unpaired.err.find("normal") != std::string::npos);
}
