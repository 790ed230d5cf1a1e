// Command-line front end. Wires manifests, feature caches, and checkpoints
// through the library; stdout carries exactly one JSON document per run and
// everything else (progress, per-file failures) goes to stderr.
//
// Exit codes: 0 success, 1 usage/config, 2 data, 3 capacity/integrity,
// 4 numeric failure during training.

#include <unistd.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "respiro/audio.hpp"
#include "respiro/classifier.hpp"
#include "respiro/corpus.hpp"
#include "respiro/diffusion.hpp"
#include "respiro/errors.hpp"
#include "respiro/features.hpp"
#include "respiro/metrics.hpp"
#include "respiro/rng.hpp"
#include "respiro/runtime.hpp"
#include "respiro/serialize.hpp"
#include "respiro/tensor.hpp"
#include "respiro/vocoder.hpp"

using namespace respiro;
namespace fs = std::filesystem;
using nlohmann::json;
// Insertion-ordered documents keep the emitted JSON readable.
using ojson = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Run configuration. One JSON document drives every subcommand; flags override
// individual fields, and the fully resolved document is written beside each
// run's outputs.

struct DspSection {
  int sample_rate = 16000;
  double vocoder_seconds = 4.0;
  double classifier_seconds = 5.0;
};

struct DiffusionSection {
  int train_steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::vector<double> fast_ladder = diffusion::default_fast_ladder();
};

struct VocoderSection {
  vocoder::VocoderConfig model;
  int train_steps = 2000;
  int batch_size = 16;
  double lr = 1e-4;
};

struct ClassifierSection {
  classifier::ClassifierConfig model;
  int epochs = 50;
  int batch_size = 32;
  double lr = 5e-5;
  double gamma = 10.0;
  bool adversarial = true;
};

struct CorpusSection {
  std::string manifest;
  std::string feature_dir;
};

struct RunConfig {
  DspSection dsp;
  DiffusionSection diffusion;
  VocoderSection vocoder;
  ClassifierSection classifier;
  CorpusSection corpus;
  std::vector<int> seeds = {0, 1, 2, 3, 4};
  std::string output_dir = "out";
};

// Reads known keys from one JSON object and rejects everything else, so a
// typo'd config fails loudly instead of silently using a default.
class SectionReader {
 public:
  SectionReader(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + " must be a JSON object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + " has the wrong type");
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError("unknown config key " + name_ + "." + it.key());
      }
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  json dsp = json::object(), diff = json::object(), voc = json::object(),
       clf = json::object(), corp = json::object();

  SectionReader root(j, "config");
  root.read("dsp", dsp);
  root.read("diffusion", diff);
  root.read("vocoder", voc);
  root.read("classifier", clf);
  root.read("corpus", corp);
  root.read("seeds", cfg.seeds);
  root.read("output_dir", cfg.output_dir);
  root.finish();

  {
    SectionReader r(dsp, "dsp");
    r.read("sample_rate", cfg.dsp.sample_rate);
    r.read("vocoder_seconds", cfg.dsp.vocoder_seconds);
    r.read("classifier_seconds", cfg.dsp.classifier_seconds);
    r.finish();
  }
  {
    SectionReader r(diff, "diffusion");
    r.read("train_steps", cfg.diffusion.train_steps);
    r.read("beta_start", cfg.diffusion.beta_start);
    r.read("beta_end", cfg.diffusion.beta_end);
    r.read("fast_ladder", cfg.diffusion.fast_ladder);
    r.finish();
  }
  {
    SectionReader r(voc, "vocoder");
    r.read("residual_layers", cfg.vocoder.model.residual_layers);
    r.read("residual_channels", cfg.vocoder.model.residual_channels);
    r.read("kernel_size", cfg.vocoder.model.kernel_size);
    r.read("dilation_cycle", cfg.vocoder.model.dilation_cycle);
    r.read("hop", cfg.vocoder.model.hop);
    r.read("n_mels", cfg.vocoder.model.n_mels);
    r.read("step_embed_dim", cfg.vocoder.model.step_embed_dim);
    r.read("train_steps", cfg.vocoder.train_steps);
    r.read("batch_size", cfg.vocoder.batch_size);
    r.read("lr", cfg.vocoder.lr);
    r.finish();
  }
  {
    SectionReader r(clf, "classifier");
    r.read("input_frames", cfg.classifier.model.input_frames);
    r.read("input_bins", cfg.classifier.model.input_bins);
    r.read("patch_time", cfg.classifier.model.patch_time);
    r.read("patch_freq", cfg.classifier.model.patch_freq);
    r.read("embed_dim", cfg.classifier.model.embed_dim);
    r.read("depth", cfg.classifier.model.depth);
    r.read("heads", cfg.classifier.model.heads);
    r.read("n_label_classes", cfg.classifier.model.n_label_classes);
    r.read("n_domain_classes", cfg.classifier.model.n_domain_classes);
    r.read("epochs", cfg.classifier.epochs);
    r.read("batch_size", cfg.classifier.batch_size);
    r.read("lr", cfg.classifier.lr);
    r.read("gamma", cfg.classifier.gamma);
    r.read("adversarial", cfg.classifier.adversarial);
    r.finish();
  }
  {
    SectionReader r(corp, "corpus");
    r.read("manifest", cfg.corpus.manifest);
    r.read("feature_dir", cfg.corpus.feature_dir);
    r.finish();
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  try {
    return parse_run_config(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

ojson run_config_json(const RunConfig& cfg) {
  ojson j;
  j["dsp"] = {{"sample_rate", cfg.dsp.sample_rate},
              {"vocoder_seconds", cfg.dsp.vocoder_seconds},
              {"classifier_seconds", cfg.dsp.classifier_seconds}};
  j["diffusion"] = {{"train_steps", cfg.diffusion.train_steps},
                    {"beta_start", cfg.diffusion.beta_start},
                    {"beta_end", cfg.diffusion.beta_end},
                    {"fast_ladder", cfg.diffusion.fast_ladder}};
  j["vocoder"] = {{"residual_layers", cfg.vocoder.model.residual_layers},
                  {"residual_channels", cfg.vocoder.model.residual_channels},
                  {"kernel_size", cfg.vocoder.model.kernel_size},
                  {"dilation_cycle", cfg.vocoder.model.dilation_cycle},
                  {"hop", cfg.vocoder.model.hop},
                  {"n_mels", cfg.vocoder.model.n_mels},
                  {"step_embed_dim", cfg.vocoder.model.step_embed_dim},
                  {"train_steps", cfg.vocoder.train_steps},
                  {"batch_size", cfg.vocoder.batch_size},
                  {"lr", cfg.vocoder.lr}};
  j["classifier"] = {{"input_frames", cfg.classifier.model.input_frames},
                     {"input_bins", cfg.classifier.model.input_bins},
                     {"patch_time", cfg.classifier.model.patch_time},
                     {"patch_freq", cfg.classifier.model.patch_freq},
                     {"embed_dim", cfg.classifier.model.embed_dim},
                     {"depth", cfg.classifier.model.depth},
                     {"heads", cfg.classifier.model.heads},
                     {"n_label_classes", cfg.classifier.model.n_label_classes},
                     {"n_domain_classes", cfg.classifier.model.n_domain_classes},
                     {"epochs", cfg.classifier.epochs},
                     {"batch_size", cfg.classifier.batch_size},
                     {"lr", cfg.classifier.lr},
                     {"gamma", cfg.classifier.gamma},
                     {"adversarial", cfg.classifier.adversarial}};
  j["corpus"] = {{"manifest", cfg.corpus.manifest},
                 {"feature_dir", cfg.corpus.feature_dir}};
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  return j;
}

// ---------------------------------------------------------------------------
// Small shared helpers.

void write_text_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

// The resolved config lands beside each run's outputs: inside directory
// outputs, suffixed beside file outputs.
void snapshot_config_in_dir(const RunConfig& cfg, const std::string& dir) {
  write_text_file((fs::path(dir) / "run.config.json").string(),
                  run_config_json(cfg).dump(2) + "\n");
}

void snapshot_config_beside(const RunConfig& cfg, const std::string& file) {
  write_text_file(file + ".config.json", run_config_json(cfg).dump(2) + "\n");
}

void emit(const ojson& j) { std::cout << j.dump(2) << "\n"; }

dsp::Waveform load_fixed(const std::string& path, int sample_rate, double seconds) {
  dsp::Waveform w = dsp::load_wav(path);
  w = dsp::resample(w, sample_rate);
  return dsp::fix_duration(w, seconds);
}

core::Tensor waveform_tensor(const dsp::Waveform& w) {
  return core::Tensor({static_cast<int>(w.samples.size())}, w.samples);
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = text.find(',', start);
    const std::string token =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ArgumentError(what + " must be a comma-separated integer list, got \"" + text + "\"");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = text.find(',', start);
    std::string token =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!token.empty()) out.push_back(std::move(token));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

double window_mean(const std::vector<double>& xs, std::size_t begin, std::size_t end) {
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) sum += xs[i];
  return end > begin ? sum / static_cast<double>(end - begin) : 0.0;
}

ojson per_class_object(const std::array<std::int64_t, corpus::kNumLabels>& values) {
  ojson j;
  for (int c = 0; c < corpus::kNumLabels; ++c) {
    j[corpus::to_string(static_cast<corpus::Label>(c))] = values[static_cast<std::size_t>(c)];
  }
  return j;
}

// ---------------------------------------------------------------------------
// featurize

struct FeaturizeArgs {
  std::string config, manifest, pipeline, out;
};

int cmd_featurize(const FeaturizeArgs& a) {
  const RunConfig cfg = load_run_config(a.config);
  const bool voc = a.pipeline == "vocoder";
  const std::string tag = voc ? "vocmel" : "clf";
  const double seconds = voc ? cfg.dsp.vocoder_seconds : cfg.dsp.classifier_seconds;
  const std::string out_dir = a.out.empty() ? cfg.output_dir + "/features" : a.out;

  const auto records = corpus::load_manifest(a.manifest);
  fs::create_directories(out_dir);

  enum Outcome { kWritten, kSkipped, kFailed };
  std::vector<int> outcome(records.size(), kFailed);
  std::vector<std::string> reason(records.size());

  runtime::parallel_for(static_cast<std::int64_t>(records.size()), [&](std::int64_t i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    const fs::path cache = fs::path(out_dir) / dsp::cache_filename(r.id, tag);
    try {
      // A cache at least as new as its audio is reused; a failed stat falls
      // through to load_wav, which reports the real problem.
      std::error_code audio_ec, cache_ec;
      const auto audio_time = fs::last_write_time(r.path, audio_ec);
      if (!audio_ec && fs::exists(cache)) {
        const auto cache_time = fs::last_write_time(cache, cache_ec);
        if (!cache_ec && cache_time >= audio_time) {
          outcome[static_cast<std::size_t>(i)] = kSkipped;
          return;
        }
      }
      const dsp::Waveform w = load_fixed(r.path, cfg.dsp.sample_rate, seconds);
      const core::Tensor feat = voc ? dsp::vocoder_mel(w) : dsp::classifier_features(w);
      core::save_tensors(cache.string(), {feat});
      outcome[static_cast<std::size_t>(i)] = kWritten;
    } catch (const std::exception& e) {
      reason[static_cast<std::size_t>(i)] = e.what();
    }
  });

  std::int64_t written = 0, skipped = 0, failed = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    switch (outcome[i]) {
      case kWritten: ++written; break;
      case kSkipped: ++skipped; break;
      default:
        ++failed;
        std::cerr << records[i].id << ": " << reason[i] << "\n";
    }
  }

  snapshot_config_in_dir(cfg, out_dir);
  emit({{"written", written}, {"skipped", skipped}, {"failed", failed}});
  return failed > 0 ? 2 : 0;
}

// ---------------------------------------------------------------------------
// train-vocoder

struct TrainVocoderArgs {
  std::string config, manifest, out;
  int steps = -1;  // <0: keep the config value
};

int cmd_train_vocoder(const TrainVocoderArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.manifest.empty()) cfg.corpus.manifest = a.manifest;
  if (a.steps > 0) cfg.vocoder.train_steps = a.steps;
  if (cfg.corpus.manifest.empty()) {
    throw ConfigError("no manifest: set corpus.manifest in the config or pass --manifest");
  }
  if (cfg.seeds.empty()) throw ConfigError("seeds must not be empty");
  const std::string out_path = a.out.empty() ? cfg.output_dir + "/vocoder.rck" : a.out;

  const auto records = corpus::load_manifest(cfg.corpus.manifest);
  std::vector<const corpus::SampleRecord*> train;
  for (const auto& r : records) {
    if (r.split == corpus::Split::train && r.source == corpus::Source::real) train.push_back(&r);
  }
  if (train.empty()) throw ArgumentError("manifest has no real train-split records");
  std::sort(train.begin(), train.end(),
            [](const auto* x, const auto* y) { return x->id < y->id; });

  std::vector<vocoder::TrainSample> data(train.size());
  const int hop = dsp::vocoder_mel_config().hop_length;
  runtime::parallel_for(static_cast<std::int64_t>(train.size()), [&](std::int64_t i) {
    dsp::Waveform w = load_fixed(train[static_cast<std::size_t>(i)]->path, cfg.dsp.sample_rate,
                                 cfg.dsp.vocoder_seconds);
    const core::Tensor mel = dsp::vocoder_mel(w);
    // Non-center frames cover floor(len/hop) hops; drop the remainder so the
    // waveform and the upsampled conditioner line up.
    w.samples.resize(static_cast<std::size_t>(mel.dim(0)) * static_cast<std::size_t>(hop));
    data[static_cast<std::size_t>(i)] = {waveform_tensor(w), mel};
  });

  const auto schedule = diffusion::linear_schedule(cfg.diffusion.train_steps,
                                                   cfg.diffusion.beta_start,
                                                   cfg.diffusion.beta_end);
  Rng rng(static_cast<std::uint64_t>(cfg.seeds[0]));
  vocoder::VocoderModel model(cfg.vocoder.model, rng);

  vocoder::VocoderTrainOptions opt;
  opt.steps = cfg.vocoder.train_steps;
  opt.batch_size = cfg.vocoder.batch_size;
  opt.lr = cfg.vocoder.lr;
  opt.on_step = [&](int step, double loss) {
    if (step == 1 || step % 100 == 0 || step == opt.steps) {
      std::cerr << "step " << step << "/" << opt.steps << " loss " << loss << "\n";
    }
  };
  const auto result = vocoder::train_vocoder(model, schedule, data, opt, rng);

  if (const fs::path parent = fs::path(out_path).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  vocoder::save_vocoder(out_path, model, schedule);
  snapshot_config_beside(cfg, out_path);

  const std::size_t n = result.losses.size();
  const std::size_t w = std::min<std::size_t>(50, n);
  emit({{"checkpoint", out_path},
        {"steps_run", result.steps_run},
        {"train_records", train.size()},
        {"first_window_loss", window_mean(result.losses, 0, w)},
        {"last_window_loss", window_mean(result.losses, n - w, n)}});
  return 0;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::string config, checkpoint, manifest, counts, out;
  std::int64_t seed = -1;  // <0: use the config's first seed
};

int cmd_generate(const GenerateArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  const std::string out_dir = a.out.empty() ? cfg.output_dir + "/synthetic" : a.out;

  const std::vector<int> counts = parse_int_list(a.counts, "--per-class-counts");
  if (counts.size() != corpus::kNumLabels ||
      std::any_of(counts.begin(), counts.end(), [](int c) { return c < 0; })) {
    throw ArgumentError(
        "--per-class-counts must be four non-negative integers: normal,crackle,wheeze,both");
  }
  const std::int64_t seed = a.seed >= 0 ? a.seed : (cfg.seeds.empty() ? 0 : cfg.seeds[0]);
  cfg.seeds = {static_cast<int>(seed)};  // the snapshot records the seed actually used

  auto [model, schedule] = vocoder::load_vocoder(a.checkpoint);
  const auto fast = diffusion::build_fast_schedule(schedule, cfg.diffusion.fast_ladder);

  const auto records = corpus::load_manifest(a.manifest);
  std::array<std::vector<const corpus::SampleRecord*>, corpus::kNumLabels> pools;
  for (const auto& r : records) {
    if (r.split == corpus::Split::train && r.source == corpus::Source::real) {
      pools[static_cast<std::size_t>(r.label)].push_back(&r);
    }
  }
  for (auto& pool : pools) {
    std::sort(pool.begin(), pool.end(),
              [](const auto* x, const auto* y) { return x->id < y->id; });
  }

  // Conditioning mels cycle over the real training records of each class, in
  // sorted-id order; every sample draws from its own forked stream so the set
  // of files is independent of worker scheduling.
  struct Job {
    int cls;
    int index;
    const corpus::SampleRecord* src;
    Rng rng;
  };
  Rng base(static_cast<std::uint64_t>(seed));
  std::vector<Job> jobs;
  for (int c = 0; c < corpus::kNumLabels; ++c) {
    const auto& pool = pools[static_cast<std::size_t>(c)];
    if (counts[static_cast<std::size_t>(c)] > 0 && pool.empty()) {
      throw DataError(std::string("no real train-split ") +
                      corpus::to_string(static_cast<corpus::Label>(c)) +
                      " records to condition on");
    }
    for (int i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) {
      jobs.push_back({c, i, pool[static_cast<std::size_t>(i) % pool.size()],
                      base.fork(static_cast<std::uint64_t>(jobs.size()))});
    }
  }

  // One mel per distinct conditioning record, shared across jobs.
  std::map<std::string, std::size_t> mel_index;
  std::vector<const corpus::SampleRecord*> sources;
  for (const auto& job : jobs) {
    if (mel_index.emplace(job.src->id, sources.size()).second) sources.push_back(job.src);
  }
  std::vector<core::Tensor> mels(sources.size());
  runtime::parallel_for(static_cast<std::int64_t>(sources.size()), [&](std::int64_t i) {
    const dsp::Waveform w = load_fixed(sources[static_cast<std::size_t>(i)]->path,
                                       cfg.dsp.sample_rate, cfg.dsp.vocoder_seconds);
    mels[static_cast<std::size_t>(i)] = dsp::vocoder_mel(w);
  });

  fs::create_directories(out_dir);
  std::vector<corpus::SampleRecord> synth(jobs.size());
  runtime::parallel_for(static_cast<std::int64_t>(jobs.size()), [&](std::int64_t i) {
    Job& job = jobs[static_cast<std::size_t>(i)];
    const core::Tensor& mel = mels[mel_index.at(job.src->id)];
    const dsp::Waveform wav =
        vocoder::generate(model, mel, schedule, job.rng, &fast, cfg.dsp.sample_rate);
    const std::string id = std::string("syn_") +
                           corpus::to_string(static_cast<corpus::Label>(job.cls)) + "_" +
                           std::to_string(job.index);
    const fs::path wav_path = fs::path(out_dir) / (id + ".wav");
    dsp::save_wav(wav_path.string(), wav);
    synth[static_cast<std::size_t>(i)] = {id, wav_path.string(),
                                          static_cast<corpus::Label>(job.cls),
                                          corpus::Split::train, corpus::Source::synthetic};
  });

  const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
  corpus::save_manifest(manifest_path, synth);
  snapshot_config_in_dir(cfg, out_dir);

  std::array<std::int64_t, corpus::kNumLabels> per_class{};
  for (int c = 0; c < corpus::kNumLabels; ++c) {
    per_class[static_cast<std::size_t>(c)] = counts[static_cast<std::size_t>(c)];
  }
  emit({{"written", jobs.size()},
        {"per_class", per_class_object(per_class)},
        {"manifest", manifest_path}});
  return 0;
}

// ---------------------------------------------------------------------------
// mix

struct MixArgs {
  std::string config, real_manifest, synth_manifest, out;
  int n = 0;
};

int cmd_mix(const MixArgs& a) {
  const RunConfig cfg = load_run_config(a.config);
  if (a.n < 1) throw ArgumentError("--n must be >= 1");
  const auto real = corpus::load_manifest(a.real_manifest);
  const auto synth = corpus::load_manifest(a.synth_manifest);
  const auto mixed = corpus::build_mixed(real, synth, {a.n});

  const std::string out_path =
      a.out.empty() ? cfg.output_dir + "/mixed-" + std::to_string(a.n) + ".jsonl" : a.out;
  if (const fs::path parent = fs::path(out_path).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  corpus::save_manifest(out_path, mixed.records);
  snapshot_config_beside(cfg, out_path);

  std::vector<double> ratio_row;
  for (int c = 0; c < corpus::kNumLabels; ++c) {
    ratio_row.push_back(round2(mixed.stats.synth_ratio_pct(static_cast<corpus::Label>(c))));
  }
  emit({{"manifest", out_path},
        {"n", a.n},
        {"records", mixed.records.size()},
        {"train_total", mixed.stats.split_total(corpus::Split::train)},
        {"added", per_class_object(mixed.added)},
        {"synth_ratio_pct", ratio_row}});
  return 0;
}

// ---------------------------------------------------------------------------
// train-clf

struct TrainClfArgs {
  std::string config, manifest, feature_dir, out, seeds;
  bool aft = true;
  bool aft_set = false;
  bool parallel_seeds = false;
  int epochs = -1;  // <0: keep the config value
};

int cmd_train_clf(const TrainClfArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.manifest.empty()) cfg.corpus.manifest = a.manifest;
  if (!a.feature_dir.empty()) cfg.corpus.feature_dir = a.feature_dir;
  if (a.epochs > 0) cfg.classifier.epochs = a.epochs;
  if (a.aft_set) cfg.classifier.adversarial = a.aft;
  if (!a.seeds.empty()) cfg.seeds = parse_int_list(a.seeds, "--seeds");

  if (cfg.corpus.manifest.empty()) {
    throw ConfigError("no manifest: set corpus.manifest in the config or pass --manifest");
  }
  if (cfg.corpus.feature_dir.empty()) {
    throw ConfigError("no feature dir: set corpus.feature_dir in the config or pass --feature-dir");
  }
  if (cfg.seeds.empty()) throw ConfigError("seeds must not be empty");
  for (const int s : cfg.seeds) {
    if (s < 0) throw ConfigError("seeds must be non-negative, got " + std::to_string(s));
  }
  const std::string out_dir = a.out.empty() ? cfg.output_dir + "/classifier" : a.out;

  const auto records = corpus::load_manifest(cfg.corpus.manifest);
  std::vector<corpus::SampleRecord> test_records;
  for (const auto& r : records) {
    if (r.split == corpus::Split::test) test_records.push_back(r);
  }
  if (test_records.empty()) throw ArgumentError("manifest has no test-split records to score");
  fs::create_directories(out_dir);

  const std::size_t k = cfg.seeds.size();
  std::vector<metrics::MetricsReport> reports(k);
  std::vector<int> best_epochs(static_cast<std::size_t>(k), 0);

  const auto run_seed = [&](std::int64_t si) {
    const int seed = cfg.seeds[static_cast<std::size_t>(si)];
    const std::string stem = out_dir + "/seed" + std::to_string(seed);

    Rng rng(static_cast<std::uint64_t>(seed));
    classifier::ClassifierModel model(cfg.classifier.model, rng);

    std::ofstream log(stem + ".log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) throw IoError("cannot open " + stem + ".log.jsonl for writing");

    classifier::ClassifierTrainOptions opt;
    opt.epochs = cfg.classifier.epochs;
    opt.batch_size = cfg.classifier.batch_size;
    opt.lr = cfg.classifier.lr;
    opt.adversarial = cfg.classifier.adversarial;
    opt.gamma = cfg.classifier.gamma;
    opt.on_epoch = [&](const classifier::EpochLog& el) {
      log << classifier::epoch_log_json(el);
      log.flush();
      std::cerr << "seed " << seed << " epoch " << el.epoch << "/" << opt.epochs << " score "
                << el.score << "\n";
    };
    const auto result =
        classifier::train_classifier(model, records, cfg.corpus.feature_dir, opt, rng);
    if (!log) throw IoError("write failed for " + stem + ".log.jsonl");

    // The model comes back at its best-Score epoch; checkpoint and report it.
    classifier::save_classifier(stem + ".rck", model);
    const auto cm = classifier::evaluate(model, test_records, cfg.corpus.feature_dir);
    reports[static_cast<std::size_t>(si)] = metrics::icbhi_metrics(cm);
    best_epochs[static_cast<std::size_t>(si)] = result.best_epoch;
    write_text_file(stem + ".report.json",
                    metrics::report_json(reports[static_cast<std::size_t>(si)]));
  };

  if (a.parallel_seeds) {
    runtime::parallel_for(static_cast<std::int64_t>(k), run_seed);
  } else {
    for (std::size_t si = 0; si < k; ++si) run_seed(static_cast<std::int64_t>(si));
  }

  const auto aggregate = metrics::aggregate_seeds(reports);
  const std::string report = metrics::report_json(aggregate);
  write_text_file(out_dir + "/report.json", report);
  snapshot_config_in_dir(cfg, out_dir);

  for (std::size_t si = 0; si < k; ++si) {
    std::cerr << "seed " << cfg.seeds[si] << " best epoch " << best_epochs[si] << " score "
              << reports[si].score << "\n";
  }
  std::cout << report;
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string config, checkpoint, manifest, feature_dir, out;
};

int cmd_eval(const EvalArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.manifest.empty()) cfg.corpus.manifest = a.manifest;
  if (!a.feature_dir.empty()) cfg.corpus.feature_dir = a.feature_dir;
  if (cfg.corpus.manifest.empty()) {
    throw ConfigError("no manifest: set corpus.manifest in the config or pass --manifest");
  }
  if (cfg.corpus.feature_dir.empty()) {
    throw ConfigError("no feature dir: set corpus.feature_dir in the config or pass --feature-dir");
  }

  const classifier::ClassifierModel model = classifier::load_classifier(a.checkpoint);
  const auto records = corpus::load_manifest(cfg.corpus.manifest);
  std::vector<corpus::SampleRecord> test_records;
  for (const auto& r : records) {
    if (r.split == corpus::Split::test) test_records.push_back(r);
  }
  if (test_records.empty()) throw ArgumentError("manifest has no test-split records");

  const auto cm = classifier::evaluate(model, test_records, cfg.corpus.feature_dir);
  const std::string report = metrics::report_json(metrics::icbhi_metrics(cm));

  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text_file(a.out + "/report.json", report);
    metrics::write_confusion_csv(a.out + "/confusion.csv", cm);
    metrics::write_confusion_pgm(a.out + "/confusion.pgm", cm);
    snapshot_config_in_dir(cfg, a.out);
  }
  std::cout << report;
  return 0;
}

// ---------------------------------------------------------------------------
// spectrogram-dump

struct SpectrogramDumpArgs {
  std::string config, manifest, ids, out;
};

int cmd_spectrogram_dump(const SpectrogramDumpArgs& a) {
  const RunConfig cfg = load_run_config(a.config);
  const std::vector<std::string> ids = split_csv(a.ids);
  if (ids.empty()) throw ArgumentError("--ids must list at least one record id");
  const std::string out_dir = a.out.empty() ? cfg.output_dir + "/spectrograms" : a.out;

  const auto records = corpus::load_manifest(a.manifest);
  std::map<std::string, const corpus::SampleRecord*> by_id;
  std::array<std::vector<const corpus::SampleRecord*>, corpus::kNumLabels> synth_pools;
  for (const auto& r : records) {
    by_id.emplace(r.id, &r);
    if (r.source == corpus::Source::synthetic) {
      synth_pools[static_cast<std::size_t>(r.label)].push_back(&r);
    }
  }
  for (auto& pool : synth_pools) {
    std::sort(pool.begin(), pool.end(),
              [](const auto* x, const auto* y) { return x->id < y->id; });
  }

  // Each requested real record pairs with the first synthetic record of the
  // same class.
  struct Pair {
    const corpus::SampleRecord* real;
    const corpus::SampleRecord* synth;
  };
  std::vector<Pair> pairs;
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("manifest has no record with id " + id);
    const corpus::SampleRecord* rec = it->second;
    if (rec->source != corpus::Source::real) {
      throw DataError("record " + id + " is synthetic; pass real record ids");
    }
    const auto& pool = synth_pools[static_cast<std::size_t>(rec->label)];
    if (pool.empty()) {
      throw DataError(std::string("no synthetic ") + corpus::to_string(rec->label) +
                      " records in the manifest to pair with " + id);
    }
    pairs.push_back({rec, pool[0]});
  }

  fs::create_directories(out_dir);
  runtime::parallel_for(static_cast<std::int64_t>(pairs.size()), [&](std::int64_t i) {
    const Pair& p = pairs[static_cast<std::size_t>(i)];
    const auto mel = [&](const corpus::SampleRecord* r) {
      return dsp::vocoder_mel(load_fixed(r->path, cfg.dsp.sample_rate, cfg.dsp.vocoder_seconds));
    };
    dsp::write_pgm(mel(p.real), (fs::path(out_dir) / (p.real->id + ".real.pgm")).string());
    dsp::write_pgm(mel(p.synth), (fs::path(out_dir) / (p.real->id + ".synthetic.pgm")).string());
  });

  snapshot_config_in_dir(cfg, out_dir);
  ojson pair_list = ojson::array();
  for (const Pair& p : pairs) {
    pair_list.push_back({{"id", p.real->id},
                         {"synthetic_id", p.synth->id},
                         {"real_pgm", p.real->id + ".real.pgm"},
                         {"synthetic_pgm", p.real->id + ".synthetic.pgm"}});
  }
  emit({{"written", 2 * pairs.size()}, {"out_dir", out_dir}, {"pairs", pair_list}});
  return 0;
}

// ---------------------------------------------------------------------------

int fail(int code, const std::string& message) {
  std::cerr << "error: " << message << "\n";
  return code;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const CapacityError& e) {
    return fail(3, e.what());
  } catch (const IntegrityError& e) {
    return fail(3, e.what());
  } catch (const TrainingError& e) {
    return fail(4, e.what());
  } catch (const ConfigError& e) {
    return fail(1, e.what());
  } catch (const ArgumentError& e) {
    return fail(1, e.what());
  } catch (const Error& e) {
    return fail(2, e.what());
  } catch (const std::exception& e) {
    return fail(2, e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "respiro: respiratory-sound augmentation pipeline (diffusion vocoder, "
      "dataset mixing, adversarial classifier)"};
  app.require_subcommand(1);

  FeaturizeArgs fz;
  auto* fz_cmd = app.add_subcommand("featurize", "Extract feature caches for manifest records");
  fz_cmd->add_option("--config", fz.config, "Run-config JSON")->check(CLI::ExistingFile);
  fz_cmd->add_option("--manifest", fz.manifest, "JSON-lines manifest")->required();
  fz_cmd->add_option("--pipeline", fz.pipeline, "Feature pipeline")
      ->required()
      ->check(CLI::IsMember({"vocoder", "classifier"}));
  fz_cmd->add_option("--out", fz.out, "Cache directory (default <output_dir>/features)");

  TrainVocoderArgs tv;
  auto* tv_cmd = app.add_subcommand("train-vocoder", "Train the diffusion vocoder on real "
                                                     "train-split records");
  tv_cmd->add_option("--config", tv.config, "Run-config JSON")->check(CLI::ExistingFile);
  tv_cmd->add_option("--manifest", tv.manifest, "Manifest override for corpus.manifest");
  tv_cmd->add_option("--steps", tv.steps, "Training steps override")
      ->check(CLI::PositiveNumber);
  tv_cmd->add_option("--out", tv.out, "Checkpoint path (default <output_dir>/vocoder.rck)");

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Sample synthetic WAVs from a vocoder "
                                                 "checkpoint");
  gen_cmd->add_option("--config", gen.config, "Run-config JSON")->check(CLI::ExistingFile);
  gen_cmd->add_option("--checkpoint", gen.checkpoint, "Vocoder checkpoint")->required();
  gen_cmd->add_option("--manifest", gen.manifest, "Manifest of real records to condition on")
      ->required();
  gen_cmd->add_option("--per-class-counts", gen.counts,
                      "Samples per class: normal,crackle,wheeze,both")
      ->required();
  gen_cmd->add_option("--seed", gen.seed, "Sampling seed (default: first config seed)")
      ->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--out", gen.out, "Output directory (default <output_dir>/synthetic)");

  MixArgs mx;
  auto* mx_cmd = app.add_subcommand("mix", "Build a Mixed-N manifest with real priority");
  mx_cmd->add_option("--config", mx.config, "Run-config JSON")->check(CLI::ExistingFile);
  mx_cmd->add_option("--real-manifest", mx.real_manifest, "Real-record manifest")->required();
  mx_cmd->add_option("--synth-manifest", mx.synth_manifest, "Synthetic-pool manifest")
      ->required();
  mx_cmd->add_option("--n", mx.n, "Per-class target size")->required()
      ->check(CLI::PositiveNumber);
  mx_cmd->add_option("--out", mx.out, "Output manifest (default <output_dir>/mixed-<n>.jsonl)");

  TrainClfArgs tc;
  auto* tc_cmd = app.add_subcommand("train-clf", "Train the classifier across seeds and "
                                                 "aggregate test scores");
  tc_cmd->add_option("--config", tc.config, "Run-config JSON")->check(CLI::ExistingFile);
  tc_cmd->add_option("--manifest", tc.manifest, "Manifest override for corpus.manifest");
  tc_cmd->add_option("--feature-dir", tc.feature_dir,
                     "Feature-cache override for corpus.feature_dir");
  auto* aft_opt = tc_cmd->add_flag("--aft,!--no-aft", tc.aft,
                                   "Adversarial fine-tuning (default on)");
  tc_cmd->add_option("--seeds", tc.seeds, "Comma-separated seed list override");
  tc_cmd->add_option("--epochs", tc.epochs, "Epoch override")->check(CLI::PositiveNumber);
  tc_cmd->add_flag("--parallel-seeds", tc.parallel_seeds, "Run seeds in parallel");
  tc_cmd->add_option("--out", tc.out, "Output directory (default <output_dir>/classifier)");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Score a classifier checkpoint on the test split");
  ev_cmd->add_option("--config", ev.config, "Run-config JSON")->check(CLI::ExistingFile);
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "Classifier checkpoint")->required();
  ev_cmd->add_option("--manifest", ev.manifest, "Manifest override for corpus.manifest");
  ev_cmd->add_option("--feature-dir", ev.feature_dir,
                     "Feature-cache override for corpus.feature_dir");
  ev_cmd->add_option("--out", ev.out, "Optional report directory");

  SpectrogramDumpArgs sd;
  auto* sd_cmd = app.add_subcommand("spectrogram-dump", "Write paired real/synthetic "
                                                        "mel-spectrogram images");
  sd_cmd->add_option("--config", sd.config, "Run-config JSON")->check(CLI::ExistingFile);
  sd_cmd->add_option("--manifest", sd.manifest, "Manifest holding real and synthetic records")
      ->required();
  sd_cmd->add_option("--ids", sd.ids, "Comma-separated real record ids")->required();
  sd_cmd->add_option("--out", sd.out, "Output directory (default <output_dir>/spectrograms)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  tc.aft_set = aft_opt->count() > 0;

  return run_guarded([&]() -> int {
    if (fz_cmd->parsed()) return cmd_featurize(fz);
    if (tv_cmd->parsed()) return cmd_train_vocoder(tv);
    if (gen_cmd->parsed()) return cmd_generate(gen);
    if (mx_cmd->parsed()) return cmd_mix(mx);
    if (tc_cmd->parsed()) return cmd_train_clf(tc);
    if (ev_cmd->parsed()) return cmd_eval(ev);
    if (sd_cmd->parsed()) return cmd_spectrogram_dump(sd);
    return 0;
  });
}
