#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "respiro/errors.hpp"
#include "respiro/metrics.hpp"
#include "respiro/rng.hpp"

using respiro::ArgumentError;
using respiro::Rng;
namespace metrics = respiro::metrics;
using metrics::ConfusionMatrix;
using metrics::MetricsReport;

namespace {

std::filesystem::path temp_file(const char* stem) {
  return std::filesystem::temp_directory_path() / stem;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

TEST_CASE("confusion matrix accumulation") {
  SUBCASE("perfect predictions land on the diagonal") {
    const std::vector<int> labels = {0, 1, 2, 3, 0, 2};
    const auto cm = metrics::confusion(labels, labels);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        const std::int64_t expected = r == c ? (r == 0 || r == 2 ? 2 : 1) : 0;
        CHECK(cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] == expected);
      }
    }
    CHECK(cm.total() == 6);
  }

  SUBCASE("single misprediction") {
    const auto cm = metrics::confusion({0}, {3});
    CHECK(cm.counts[3][0] == 1);
    CHECK(cm.total() == 1);
    CHECK(cm.row_total(3) == 1);
    CHECK(cm.row_total(0) == 0);
  }

  SUBCASE("invariant under sample permutation") {
    Rng rng(5);
    std::vector<int> preds, labels;
    for (int i = 0; i < 200; ++i) {
      preds.push_back(static_cast<int>(rng.uniform_int(0, 3)));
      labels.push_back(static_cast<int>(rng.uniform_int(0, 3)));
    }
    const auto cm = metrics::confusion(preds, labels);

    std::vector<std::size_t> order(preds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<int> preds_shuffled, labels_shuffled;
    for (std::size_t i : order) {
      preds_shuffled.push_back(preds[i]);
      labels_shuffled.push_back(labels[i]);
    }
    const auto cm_shuffled = metrics::confusion(preds_shuffled, labels_shuffled);
    CHECK(cm.counts == cm_shuffled.counts);
  }

  SUBCASE("rejects misaligned or out-of-range input") {
    CHECK_THROWS_AS(metrics::confusion({0, 1}, {0}), ArgumentError);
    CHECK_THROWS_AS(metrics::confusion({4}, {0}), ArgumentError);
    CHECK_THROWS_AS(metrics::confusion({0}, {-1}), ArgumentError);
    CHECK_THROWS_AS(metrics::confusion({0}, {4}), ArgumentError);
  }
}

TEST_CASE("specificity, sensitivity, and score") {
  SUBCASE("perfect classifier scores 100 everywhere") {
    ConfusionMatrix cm;
    cm.counts[0][0] = 10;
    cm.counts[1][1] = 5;
    cm.counts[2][2] = 3;
    cm.counts[3][3] = 2;
    const auto r = metrics::icbhi_metrics(cm);
    CHECK(r.sp == 100.0);
    CHECK(r.se == 100.0);
    CHECK(r.score == 100.0);
    for (double acc : r.per_class_acc) CHECK(acc == 100.0);
  }

  SUBCASE("all-normal predictor") {
    ConfusionMatrix cm;
    cm.counts[0][0] = 10;
    cm.counts[1][0] = 5;
    cm.counts[2][0] = 3;
    cm.counts[3][0] = 2;
    const auto r = metrics::icbhi_metrics(cm);
    CHECK(r.sp == 100.0);
    CHECK(r.se == 0.0);
    CHECK(r.score == 50.0);
  }

  SUBCASE("hand-counted mixed matrix") {
    // normal 8/10, crackle 3/5, wheeze 1/3, both 1/2.
    ConfusionMatrix cm;
    cm.counts[0] = {8, 1, 1, 0};
    cm.counts[1] = {1, 3, 1, 0};
    cm.counts[2] = {1, 1, 1, 0};
    cm.counts[3] = {0, 1, 0, 1};
    const auto r = metrics::icbhi_metrics(cm);
    CHECK(r.sp == doctest::Approx(80.0));
    CHECK(r.se == doctest::Approx(50.0));  // (3+1+1)/10
    CHECK(r.score == doctest::Approx(65.0));
    CHECK(r.per_class_acc[0] == doctest::Approx(80.0));
    CHECK(r.per_class_acc[1] == doctest::Approx(60.0));
    CHECK(r.per_class_acc[2] == doctest::Approx(100.0 / 3.0));
    CHECK(r.per_class_acc[3] == doctest::Approx(50.0));
  }

  SUBCASE("degenerate rows are rejected") {
    ConfusionMatrix no_normal;
    no_normal.counts[1][1] = 3;
    CHECK_THROWS_WITH_AS(metrics::icbhi_metrics(no_normal), doctest::Contains("specificity"),
                         ArgumentError);

    ConfusionMatrix no_abnormal;
    no_abnormal.counts[0][0] = 3;
    CHECK_THROWS_WITH_AS(metrics::icbhi_metrics(no_abnormal), doctest::Contains("sensitivity"),
                         ArgumentError);
  }

  SUBCASE("score identity and per-class decomposition on random matrices") {
    Rng rng(17);
    for (int trial = 0; trial < 25; ++trial) {
      ConfusionMatrix cm;
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
          cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
              rng.uniform_int(r == c ? 1 : 0, 20);  // keep every row populated
        }
      }
      const auto r = metrics::icbhi_metrics(cm);
      CHECK(r.score == (r.sp + r.se) / 2.0);

      // se is the count-weighted mean of the abnormal per-class accuracies.
      double weighted = 0.0;
      std::int64_t abnormal = 0;
      for (int c = 1; c < 4; ++c) {
        weighted += r.per_class_acc[static_cast<std::size_t>(c)] *
                    static_cast<double>(cm.row_total(c));
        abnormal += cm.row_total(c);
      }
      CHECK(r.se == doctest::Approx(weighted / static_cast<double>(abnormal)).epsilon(1e-12));
    }
  }
}

TEST_CASE("seed aggregation") {
  MetricsReport base;
  base.sp = 80.0;
  base.se = 50.0;
  base.score = 65.0;
  base.per_class_acc = {80.0, 60.0, 100.0 / 3.0, 50.0};

  SUBCASE("identical reports have zero spread") {
    const auto agg = metrics::aggregate_seeds({base, base, base});
    CHECK(agg.n_seeds == 3);
    CHECK(agg.sp == doctest::Approx(80.0));
    CHECK(agg.se == doctest::Approx(50.0));
    CHECK(agg.score == doctest::Approx(65.0));
    CHECK(agg.sp_std == doctest::Approx(0.0));
    CHECK(agg.se_std == doctest::Approx(0.0));
    CHECK(agg.score_std == doctest::Approx(0.0));
    CHECK(agg.per_class_acc[2] == doctest::Approx(100.0 / 3.0));
  }

  SUBCASE("two scores spread by the sample deviation") {
    MetricsReport a, b;
    a.sp = a.se = a.score = 60.0;
    b.sp = b.se = b.score = 62.0;
    const auto agg = metrics::aggregate_seeds({a, b});
    CHECK(agg.score == doctest::Approx(61.0));
    CHECK(agg.score_std == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(agg.sp_std == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(agg.n_seeds == 2);
  }

  SUBCASE("single report aggregates to itself") {
    const auto agg = metrics::aggregate_seeds({base});
    CHECK(agg.n_seeds == 1);
    CHECK(agg.sp == base.sp);
    CHECK(agg.score_std == 0.0);
  }

  SUBCASE("empty input is rejected") {
    CHECK_THROWS_AS(metrics::aggregate_seeds({}), ArgumentError);
  }
}

TEST_CASE("metrics report serialization") {
  MetricsReport r;
  r.sp = 80.0;
  r.se = 50.0;
  r.score = 65.0;
  r.per_class_acc = {80.0, 60.0, 30.0, 50.0};
  r.n_seeds = 5;
  r.sp_std = 1.5;
  r.se_std = 2.5;
  r.score_std = 1.25;

  const std::string text = metrics::report_json(r);
  CHECK(text.back() == '\n');
  const auto doc = nlohmann::json::parse(text);
  CHECK(doc.at("sp").get<double>() == doctest::Approx(80.0));
  CHECK(doc.at("se").get<double>() == doctest::Approx(50.0));
  CHECK(doc.at("score").get<double>() == doctest::Approx(65.0));
  CHECK(doc.at("seeds").get<int>() == 5);
  CHECK(doc.at("per_class").at("normal").get<double>() == doctest::Approx(80.0));
  CHECK(doc.at("per_class").at("crackle").get<double>() == doctest::Approx(60.0));
  CHECK(doc.at("per_class").at("wheeze").get<double>() == doctest::Approx(30.0));
  CHECK(doc.at("per_class").at("both").get<double>() == doctest::Approx(50.0));
  CHECK(doc.at("std").at("score").get<double>() == doctest::Approx(1.25));
  CHECK(doc.at("std").at("sp").get<double>() == doctest::Approx(1.5));
}

TEST_CASE("confusion matrix artifacts") {
  ConfusionMatrix cm;
  cm.counts[0] = {8, 1, 1, 0};
  cm.counts[1] = {1, 3, 1, 0};
  cm.counts[2] = {1, 1, 1, 0};
  cm.counts[3] = {0, 1, 0, 1};

  SUBCASE("csv carries named rows and columns") {
    const auto path = temp_file("cm.csv");
    metrics::write_confusion_csv(path.string(), cm);
    const std::string expected =
        "true\\pred,normal,crackle,wheeze,both\n"
        "normal,8,1,1,0\n"
        "crackle,1,3,1,0\n"
        "wheeze,1,1,1,0\n"
        "both,0,1,0,1\n";
    CHECK(read_file(path) == expected);
    std::filesystem::remove(path);
  }

  SUBCASE("heat image scales counts against the peak cell") {
    const auto path = temp_file("cm.pgm");
    metrics::write_confusion_pgm(path.string(), cm);
    const std::string data = read_file(path);
    const std::string header = "P5\n4 4\n255\n";
    REQUIRE(data.size() == header.size() + 16);
    CHECK(data.substr(0, header.size()) == header);
    const auto px = [&](int r, int c) {
      return static_cast<unsigned char>(data[header.size() + static_cast<std::size_t>(r * 4 + c)]);
    };
    CHECK(px(0, 0) == 255);  // peak count 8
    CHECK(px(1, 1) == 96);   // round(255*3/8)
    CHECK(px(0, 3) == 0);
    CHECK(px(3, 1) == 32);   // round(255*1/8)
    std::filesystem::remove(path);
  }

  SUBCASE("empty matrix writes a black image") {
    const auto path = temp_file("cm_empty.pgm");
    metrics::write_confusion_pgm(path.string(), ConfusionMatrix{});
    const std::string data = read_file(path);
    for (std::size_t i = std::string("P5\n4 4\n255\n").size(); i < data.size(); ++i) {
      CHECK(data[i] == 0);
    }
    std::filesystem::remove(path);
  }
}
