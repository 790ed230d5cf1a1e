#include "respiro/corpus.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "respiro/errors.hpp"

namespace respiro::corpus {

using nlohmann::json;

const char* to_string(Label label) {
  switch (label) {
    case Label::normal: return "normal";
    case Label::crackle: return "crackle";
    case Label::wheeze: return "wheeze";
    case Label::both: return "both";
  }
  throw ArgumentError("unknown label value " + std::to_string(static_cast<int>(label)));
}

const char* to_string(Split split) {
  return split == Split::train ? "train" : "test";
}

const char* to_string(Source source) {
  return source == Source::real ? "real" : "synthetic";
}

Label label_from_string(const std::string& s) {
  if (s == "normal") return Label::normal;
  if (s == "crackle") return Label::crackle;
  if (s == "wheeze") return Label::wheeze;
  if (s == "both") return Label::both;
  throw ArgumentError("unknown label \"" + s + "\"");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ArgumentError("unknown split \"" + s + "\"");
}

Source source_from_string(const std::string& s) {
  if (s == "real") return Source::real;
  if (s == "synthetic") return Source::synthetic;
  throw ArgumentError("unknown source \"" + s + "\"");
}

namespace {

bool blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

SampleRecord parse_record(const std::string& line, std::int64_t line_no) {
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!doc.is_object()) {
    throw ParseError("manifest line " + std::to_string(line_no) + ": record is not an object");
  }
  static const std::set<std::string> kFields = {"id", "path", "label", "split", "source"};
  for (const auto& [key, value] : doc.items()) {
    (void)value;
    if (kFields.count(key) == 0) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": unknown field \"" + key +
                       "\"");
    }
  }
  SampleRecord r;
  try {
    r.id = doc.at("id").get<std::string>();
    r.path = doc.at("path").get<std::string>();
    r.label = label_from_string(doc.at("label").get<std::string>());
    r.split = split_from_string(doc.at("split").get<std::string>());
    r.source = source_from_string(doc.at("source").get<std::string>());
  } catch (const json::exception& e) {
    throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
  } catch (const ArgumentError& e) {
    throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what());
  }
  if (r.id.empty()) {
    throw ParseError("manifest line " + std::to_string(line_no) + ": empty id");
  }
  return r;
}

}  // namespace

std::vector<SampleRecord> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);

  std::vector<SampleRecord> records;
  std::set<std::string> seen;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    SampleRecord r = parse_record(line, line_no);
    if (!seen.insert(r.id).second) {
      throw IntegrityError("duplicate sample id \"" + r.id + "\" in " + path);
    }
    if (r.split == Split::test && r.source == Source::synthetic) {
      throw IntegrityError("synthetic record \"" + r.id + "\" in the test split of " + path);
    }
    records.push_back(std::move(r));
  }
  if (in.bad()) throw IoError("read failed for manifest " + path);
  return records;
}

void save_manifest(const std::string& path, const std::vector<SampleRecord>& records) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    for (const auto& r : records) {
      json doc;
      doc["id"] = r.id;
      doc["path"] = r.path;
      doc["label"] = to_string(r.label);
      doc["split"] = to_string(r.split);
      doc["source"] = to_string(r.source);
      out << doc.dump() << "\n";
    }
    out.flush();
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::int64_t DatasetStats::count(Label c, Split s, Source src) const {
  return counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)]
               [static_cast<std::size_t>(src)];
}

std::int64_t DatasetStats::class_count(Label c, Split s) const {
  return count(c, s, Source::real) + count(c, s, Source::synthetic);
}

std::int64_t DatasetStats::split_total(Split s) const {
  std::int64_t total = 0;
  for (int c = 0; c < kNumLabels; ++c) total += class_count(static_cast<Label>(c), s);
  return total;
}

double DatasetStats::class_share_pct(Label c, Split s) const {
  const std::int64_t total = split_total(s);
  if (total == 0) return 0.0;
  return 100.0 * static_cast<double>(class_count(c, s)) / static_cast<double>(total);
}

double DatasetStats::synth_ratio_pct(Label c) const {
  const std::int64_t real = count(c, Split::train, Source::real);
  const std::int64_t synth = count(c, Split::train, Source::synthetic);
  if (real + synth == 0) return 0.0;
  return 100.0 * static_cast<double>(synth) / static_cast<double>(real + synth);
}

DatasetStats dataset_stats(const std::vector<SampleRecord>& records) {
  DatasetStats stats;
  for (const auto& r : records) {
    ++stats.counts[static_cast<std::size_t>(r.label)][static_cast<std::size_t>(r.split)]
                  [static_cast<std::size_t>(r.source)];
  }
  return stats;
}

MixedDataset build_mixed(const std::vector<SampleRecord>& real,
                         const std::vector<SampleRecord>& synth_pool, const MixPolicy& policy) {
  if (policy.n_target < 1) throw ArgumentError("mix target must be >= 1");
  for (const auto& r : real) {
    if (r.source != Source::real) {
      throw IntegrityError("record \"" + r.id + "\" in the real manifest is tagged synthetic");
    }
  }

  std::array<std::int64_t, kNumLabels> real_train{};
  for (const auto& r : real) {
    if (r.split == Split::train) ++real_train[static_cast<std::size_t>(r.label)];
  }

  // Per class, the eligible pool entries in sorted-id order.
  std::array<std::vector<const SampleRecord*>, kNumLabels> pool;
  for (const auto& r : synth_pool) {
    if (r.source != Source::synthetic) {
      throw IntegrityError("record \"" + r.id + "\" in the synthetic pool is tagged real");
    }
    if (r.split == Split::test) {
      throw IntegrityError("synthetic record \"" + r.id + "\" is assigned to the test split");
    }
    pool[static_cast<std::size_t>(r.label)].push_back(&r);
  }
  for (auto& entries : pool) {
    std::sort(entries.begin(), entries.end(),
              [](const SampleRecord* a, const SampleRecord* b) { return a->id < b->id; });
  }

  MixedDataset out;
  out.records = real;  // every real record survives, in input order
  for (int c = 0; c < kNumLabels; ++c) {
    const std::int64_t need = std::max<std::int64_t>(0, policy.n_target - real_train[static_cast<std::size_t>(c)]);
    const auto& entries = pool[static_cast<std::size_t>(c)];
    if (need > static_cast<std::int64_t>(entries.size())) {
      throw CapacityError("class " + std::string(to_string(static_cast<Label>(c))) + ": need " +
                          std::to_string(need) + " synthetic samples, pool has " +
                          std::to_string(entries.size()) + " (short " +
                          std::to_string(need - static_cast<std::int64_t>(entries.size())) + ")");
    }
    for (std::int64_t i = 0; i < need; ++i) out.records.push_back(*entries[static_cast<std::size_t>(i)]);
    out.added[static_cast<std::size_t>(c)] = need;
  }
  out.stats = dataset_stats(out.records);
  return out;
}

std::array<std::vector<double>, kNumLabels> synth_ratio_table(
    const std::array<std::int64_t, kNumLabels>& real_train_counts,
    const std::vector<int>& n_targets) {
  std::array<std::vector<double>, kNumLabels> table;
  for (int c = 0; c < kNumLabels; ++c) {
    table[static_cast<std::size_t>(c)].reserve(n_targets.size());
    for (int n : n_targets) {
      if (n < 1) throw ArgumentError("mix target must be >= 1");
      const std::int64_t real = real_train_counts[static_cast<std::size_t>(c)];
      const std::int64_t synth = std::max<std::int64_t>(0, n - real);
      const double pct =
          synth == 0 ? 0.0
                     : 100.0 * static_cast<double>(synth) / static_cast<double>(real + synth);
      table[static_cast<std::size_t>(c)].push_back(std::round(pct * 100.0) / 100.0);
    }
  }
  return table;
}

const std::array<std::int64_t, kNumLabels>& icbhi_train_counts() {
  static const std::array<std::int64_t, kNumLabels> counts = {2063, 1215, 501, 363};
  return counts;
}

const std::array<std::int64_t, kNumLabels>& icbhi_test_counts() {
  static const std::array<std::int64_t, kNumLabels> counts = {1579, 649, 385, 143};
  return counts;
}

const std::vector<int>& mixed_targets() {
  static const std::vector<int> targets = {500, 800, 1000, 1500, 2000, 3000, 5000};
  return targets;
}

}  // namespace respiro::corpus
