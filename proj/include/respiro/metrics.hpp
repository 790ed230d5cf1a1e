#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "respiro/corpus.hpp"

namespace respiro::metrics {

struct ConfusionMatrix {
  // counts[true][predicted], class order (normal, crackle, wheeze, both).
  std::array<std::array<std::int64_t, corpus::kNumLabels>, corpus::kNumLabels> counts{};

  std::int64_t row_total(int true_class) const;
  std::int64_t total() const;
};

// preds/labels aligned, values in [0,4).
ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels);

struct MetricsReport {
  // Percentages. score = (sp + se) / 2 by construction.
  double sp = 0.0;
  double se = 0.0;
  double score = 0.0;
  std::array<double, corpus::kNumLabels> per_class_acc{};
  int n_seeds = 1;
  // Sample standard deviation across seeds; zero for a single report.
  double sp_std = 0.0;
  double se_std = 0.0;
  double score_std = 0.0;
};

// sp = normal-row accuracy; se = pooled diagonal accuracy of the three
// abnormal rows; score = their mean. Rows with no samples on either side of
// that divide make the corresponding rate undefined -> ArgumentError.
MetricsReport icbhi_metrics(const ConfusionMatrix& cm);

// Mean across seed reports; sample std (ddof=1) for k >= 2.
MetricsReport aggregate_seeds(const std::vector<MetricsReport>& reports);

// {"sp","se","score","per_class":{...},"seeds":k,"std":{...}}, 2 spaces of
// indentation, trailing newline.
std::string report_json(const MetricsReport& report);

// Named CSV (header row/column) and a brightness-by-count heat image,
// rows top-to-bottom in class order. Both stage to a temp file and rename.
void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm);
void write_confusion_pgm(const std::string& path, const ConfusionMatrix& cm);

}  // namespace respiro::metrics
