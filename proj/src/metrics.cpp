#include "respiro/metrics.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "respiro/errors.hpp"

namespace respiro::metrics {

using corpus::kNumLabels;
using corpus::Label;
using nlohmann::json;

std::int64_t ConfusionMatrix::row_total(int true_class) const {
  if (true_class < 0 || true_class >= kNumLabels) {
    throw ArgumentError("class index " + std::to_string(true_class) + " outside [0, 4)");
  }
  std::int64_t total = 0;
  for (std::int64_t v : counts[static_cast<std::size_t>(true_class)]) total += v;
  return total;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t total = 0;
  for (int c = 0; c < kNumLabels; ++c) total += row_total(c);
  return total;
}

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) {
    throw ArgumentError("prediction count " + std::to_string(preds.size()) +
                        " does not match label count " + std::to_string(labels.size()));
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kNumLabels) {
      throw ArgumentError("label " + std::to_string(labels[i]) + " at index " +
                          std::to_string(i) + " outside [0, 4)");
    }
    if (preds[i] < 0 || preds[i] >= kNumLabels) {
      throw ArgumentError("prediction " + std::to_string(preds[i]) + " at index " +
                          std::to_string(i) + " outside [0, 4)");
    }
    ++cm.counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
  }
  return cm;
}

MetricsReport icbhi_metrics(const ConfusionMatrix& cm) {
  const std::int64_t normal_total = cm.row_total(0);
  std::int64_t abnormal_total = 0;
  std::int64_t abnormal_correct = 0;
  for (int c = 1; c < kNumLabels; ++c) {
    abnormal_total += cm.row_total(c);
    abnormal_correct += cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
  }
  if (normal_total == 0) {
    throw ArgumentError("specificity undefined: no normal samples in the confusion matrix");
  }
  if (abnormal_total == 0) {
    throw ArgumentError("sensitivity undefined: no abnormal samples in the confusion matrix");
  }

  MetricsReport r;
  r.sp = 100.0 * static_cast<double>(cm.counts[0][0]) / static_cast<double>(normal_total);
  r.se = 100.0 * static_cast<double>(abnormal_correct) / static_cast<double>(abnormal_total);
  r.score = (r.sp + r.se) / 2.0;
  for (int c = 0; c < kNumLabels; ++c) {
    const std::int64_t row = cm.row_total(c);
    r.per_class_acc[static_cast<std::size_t>(c)] =
        row == 0 ? 0.0
                 : 100.0 *
                       static_cast<double>(
                           cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]) /
                       static_cast<double>(row);
  }
  return r;
}

MetricsReport aggregate_seeds(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ArgumentError("no seed reports to aggregate");
  const auto k = static_cast<double>(reports.size());

  MetricsReport out;
  for (const auto& r : reports) {
    out.sp += r.sp;
    out.se += r.se;
    out.score += r.score;
    for (int c = 0; c < kNumLabels; ++c) {
      out.per_class_acc[static_cast<std::size_t>(c)] += r.per_class_acc[static_cast<std::size_t>(c)];
    }
  }
  out.sp /= k;
  out.se /= k;
  out.score /= k;
  for (auto& acc : out.per_class_acc) acc /= k;
  out.n_seeds = static_cast<int>(reports.size());

  if (reports.size() >= 2) {
    double sp_ss = 0.0, se_ss = 0.0, score_ss = 0.0;
    for (const auto& r : reports) {
      sp_ss += (r.sp - out.sp) * (r.sp - out.sp);
      se_ss += (r.se - out.se) * (r.se - out.se);
      score_ss += (r.score - out.score) * (r.score - out.score);
    }
    out.sp_std = std::sqrt(sp_ss / (k - 1.0));
    out.se_std = std::sqrt(se_ss / (k - 1.0));
    out.score_std = std::sqrt(score_ss / (k - 1.0));
  }
  return out;
}

std::string report_json(const MetricsReport& report) {
  json doc;
  doc["sp"] = report.sp;
  doc["se"] = report.se;
  doc["score"] = report.score;
  json per_class;
  for (int c = 0; c < kNumLabels; ++c) {
    per_class[corpus::to_string(static_cast<Label>(c))] =
        report.per_class_acc[static_cast<std::size_t>(c)];
  }
  doc["per_class"] = per_class;
  doc["seeds"] = report.n_seeds;
  doc["std"] = {{"sp", report.sp_std}, {"se", report.se_std}, {"score", report.score_std}};
  return doc.dump(2) + "\n";
}

namespace {

void write_atomic(const std::string& path, const std::string& payload, bool binary) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

}  // namespace

void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm) {
  std::string payload = "true\\pred";
  for (int c = 0; c < kNumLabels; ++c) {
    payload += ",";
    payload += corpus::to_string(static_cast<Label>(c));
  }
  payload += "\n";
  for (int r = 0; r < kNumLabels; ++r) {
    payload += corpus::to_string(static_cast<Label>(r));
    for (int c = 0; c < kNumLabels; ++c) {
      payload += "," + std::to_string(cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
    }
    payload += "\n";
  }
  write_atomic(path, payload, false);
}

void write_confusion_pgm(const std::string& path, const ConfusionMatrix& cm) {
  std::int64_t peak = 0;
  for (int r = 0; r < kNumLabels; ++r) {
    for (int c = 0; c < kNumLabels; ++c) {
      peak = std::max(peak, cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
    }
  }
  std::string payload = "P5\n4 4\n255\n";
  for (int r = 0; r < kNumLabels; ++r) {
    for (int c = 0; c < kNumLabels; ++c) {
      const std::int64_t v = cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      const unsigned char px =
          peak == 0 ? 0
                    : static_cast<unsigned char>(std::lround(
                          255.0 * static_cast<double>(v) / static_cast<double>(peak)));
      payload.push_back(static_cast<char>(px));
    }
  }
  write_atomic(path, payload, true);
}

}  // namespace respiro::metrics
