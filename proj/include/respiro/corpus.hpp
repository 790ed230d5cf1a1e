#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace respiro::corpus {

// Class order is fixed; it is the row/column order of every table and
// confusion matrix downstream.
enum class Label : int { normal = 0, crackle = 1, wheeze = 2, both = 3 };
enum class Split : int { train = 0, test = 1 };
enum class Source : int { real = 0, synthetic = 1 };

constexpr int kNumLabels = 4;

const char* to_string(Label label);
const char* to_string(Split split);
const char* to_string(Source source);
Label label_from_string(const std::string& s);    // ArgumentError on unknown
Split split_from_string(const std::string& s);    // ArgumentError on unknown
Source source_from_string(const std::string& s);  // ArgumentError on unknown

struct SampleRecord {
  std::string id;
  std::string path;
  Label label = Label::normal;
  Split split = Split::train;
  Source source = Source::real;

  bool operator==(const SampleRecord&) const = default;
};

// JSON-lines manifest, one record per line with exactly the fields
// {"id","path","label","split","source"}. Malformed lines raise ParseError
// with the 1-based line number; duplicate ids and synthetic test records
// raise IntegrityError naming the id. Blank lines are skipped.
std::vector<SampleRecord> load_manifest(const std::string& path);

// Writes the same format (staged to a temp file, then renamed).
void save_manifest(const std::string& path, const std::vector<SampleRecord>& records);

struct DatasetStats {
  // counts[class][split][source]
  std::array<std::array<std::array<std::int64_t, 2>, 2>, kNumLabels> counts{};

  std::int64_t count(Label c, Split s, Source src) const;
  std::int64_t class_count(Label c, Split s) const;  // both sources
  std::int64_t split_total(Split s) const;
  // Class share of its split, percent; 0 when the split is empty.
  double class_share_pct(Label c, Split s) const;
  // Train-split synthetic share, percent: synth/(real+synth)*100.
  double synth_ratio_pct(Label c) const;
};

DatasetStats dataset_stats(const std::vector<SampleRecord>& records);

struct MixPolicy {
  int n_target = 1;  // target samples per class ("Mixed-N")
};

struct MixedDataset {
  std::vector<SampleRecord> records;
  DatasetStats stats;
  // Synthetic records added per class (train split).
  std::array<std::int64_t, kNumLabels> added{};
};

// Real-priority mixing: every real record is kept (train and test); each
// class then receives max(0, N - real_train_count) synthetic records from
// the pool, drawn in sorted-id order. A class whose pool cannot cover the
// shortfall raises CapacityError naming the class and the missing count.
MixedDataset build_mixed(const std::vector<SampleRecord>& real,
                         const std::vector<SampleRecord>& synth_pool, const MixPolicy& policy);

// Synthetic-ratio percentages (rounded to 2 decimals) per class and target
// size, from the real-priority formula: table[class][target_index].
std::array<std::vector<double>, kNumLabels> synth_ratio_table(
    const std::array<std::int64_t, kNumLabels>& real_train_counts,
    const std::vector<int>& n_targets);

// The published respiratory-cycle counts of the corpus this tool targets
// (train normal/crackle/wheeze/both, then test).
const std::array<std::int64_t, kNumLabels>& icbhi_train_counts();
const std::array<std::int64_t, kNumLabels>& icbhi_test_counts();

// The Mixed-N ladder used across experiments.
const std::vector<int>& mixed_targets();

}  // namespace respiro::corpus
