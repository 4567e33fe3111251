#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "memeclf/errors.hpp"
#include "memeclf/metrics.hpp"
#include "memeclf/protocol.hpp"
#include "memeclf/report.hpp"
#include "memeclf/rng.hpp"

using namespace memeclf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("memeclf_test_eval_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Straight from the definitions, one class at a time.
struct Oracle {
  double precision_macro, recall_micro, f1_micro, f1_macro, f1_weighted;
};

Oracle oracle(const std::vector<int>& pred, const std::vector<int>& truth) {
  auto ratio = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
  double p[2], r[2], f[2], support[2];
  double correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
  for (int c = 0; c < 2; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tp += pred[i] == c && truth[i] == c;
      fp += pred[i] == c && truth[i] != c;
      fn += pred[i] != c && truth[i] == c;
    }
    p[c] = ratio(tp, tp + fp);
    r[c] = ratio(tp, tp + fn);
    f[c] = ratio(2 * p[c] * r[c], p[c] + r[c]);
    support[c] = tp + fn;
  }
  const double n = static_cast<double>(pred.size());
  const double acc = correct / n;
  return {(p[0] + p[1]) / 2, acc, acc, (f[0] + f[1]) / 2, (f[0] * support[0] + f[1] * support[1]) / n};
}

void check_against_oracle(const std::vector<int>& pred, const std::vector<int>& truth) {
  const MetricsReport m = metrics_from_predictions(pred, truth);
  const Oracle o = oracle(pred, truth);
  CHECK(std::abs(m.precision - o.precision_macro) <= 1e-12);
  CHECK(std::abs(m.recall - o.recall_micro) <= 1e-12);
  CHECK(std::abs(m.f1_micro - o.f1_micro) <= 1e-12);
  CHECK(std::abs(m.f1_macro - o.f1_macro) <= 1e-12);
  CHECK(std::abs(m.f1_weighted - o.f1_weighted) <= 1e-12);
}

std::vector<int> labels_of(Index zeros, Index ones, std::uint64_t seed) {
  std::vector<int> out(static_cast<std::size_t>(zeros), 0);
  out.insert(out.end(), static_cast<std::size_t>(ones), 1);
  RngStream rng(seed);
  rng.shuffle(out);
  return out;
}

MetricsReport row(double loss, double p, double r, double f1m, double f1M, double f1w) {
  MetricsReport m;
  m.loss = loss;
  m.precision = p;
  m.recall = r;
  m.f1_micro = f1m;
  m.f1_macro = f1M;
  m.f1_weighted = f1w;
  return m;
}

}  // namespace

TEST_SUITE("confusion and metrics") {
  TEST_CASE("confusion counts") {
    const ConfusionMatrix c = confusion({1, 1, 0, 0, 1}, {1, 0, 0, 1, 1});
    CHECK(c == ConfusionMatrix{2, 1, 1, 1});
    CHECK(c.n() == 5);
    CHECK_THROWS_AS(confusion({1}, {1, 0}), ShapeError);
    CHECK_THROWS_AS(confusion({2}, {1}), ValidationError);
  }

  TEST_CASE("all-correct predictions score 1 everywhere") {
    const MetricsReport m = metrics_from_predictions({0, 1, 1, 0}, {0, 1, 1, 0});
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f1_micro == 1.0);
    CHECK(m.f1_macro == 1.0);
    CHECK(m.f1_weighted == 1.0);
  }

  TEST_CASE("predicting only class 1 against [1, 0]") {
    const MetricsReport m = metrics_from_predictions({1, 1}, {1, 0});
    // class 1: P 1/2, R 1, F1 2/3; class 0: all zero
    CHECK(m.f1_macro == doctest::Approx(1.0 / 3.0));
    CHECK(m.f1_weighted == doctest::Approx(1.0 / 3.0));
    CHECK(m.precision == doctest::Approx(0.25));
    CHECK(m.recall == doctest::Approx(0.5));
    CHECK(m.per_class[0].precision == 0.0);
  }

  TEST_CASE("threshold 0.5 is inclusive and the loss passes through") {
    const MetricsReport m = compute_metrics({0.5, 0.49, 0.9}, {1, 0, 1}, 0.123);
    CHECK(m.counts == ConfusionMatrix{2, 0, 0, 1});
    CHECK(m.loss == 0.123);
  }

  TEST_CASE("micro and weighted precision variants") {
    const MetricsReport micro = metrics_from_predictions({1, 1, 0}, {1, 0, 0}, 0.0, Average::Micro);
    CHECK(micro.precision == doctest::Approx(2.0 / 3.0));
    const MetricsReport weighted = metrics_from_predictions({1, 1, 0}, {1, 0, 0}, 0.0, Average::Weighted);
    // class 0: P 1 (support 2); class 1: P 1/2 (support 1)
    CHECK(weighted.precision == doctest::Approx((2.0 * 1.0 + 0.5) / 3.0));
  }

  TEST_CASE("exhaustive agreement with the per-class oracle for n <= 6") {
    for (int n = 1; n <= 6; ++n) {
      for (int tmask = 0; tmask < (1 << n); ++tmask) {
        for (int pmask = 0; pmask < (1 << n); ++pmask) {
          std::vector<int> t, p;
          for (int i = 0; i < n; ++i) {
            t.push_back((tmask >> i) & 1);
            p.push_back((pmask >> i) & 1);
          }
          check_against_oracle(p, t);
        }
      }
    }
  }

  TEST_CASE("random n = 200 cases agree with the oracle") {
    RngStream rng(17);
    for (int k = 0; k < 200; ++k) {
      std::vector<int> t, p;
      for (int i = 0; i < 200; ++i) {
        t.push_back(rng.bernoulli(0.4));
        p.push_back(rng.bernoulli(0.5));
      }
      check_against_oracle(p, t);
    }
  }

  TEST_CASE("empty input is rejected") { CHECK_THROWS_AS(metrics_from_predictions({}, {}), ShapeError); }
}

TEST_SUITE("aggregation") {
  TEST_CASE("median of odd and even counts") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({0.6, 0.8}) == doctest::Approx(0.7));
    CHECK(median({5.0}) == 5.0);
    CHECK_THROWS(median({}));
  }

  TEST_CASE("five-run table: per-metric medians") {
    const std::vector<MetricsReport> runs = {
        row(0.6607, 0.6617, 0.6629, 0.6629, 0.6620, 0.6620),
        row(0.6610, 0.5804, 0.6124, 0.6124, 0.5930, 0.5930),
        row(0.6599, 0.6347, 0.6236, 0.6236, 0.6270, 0.6270),
        row(0.6593, 0.6124, 0.6208, 0.6208, 0.6160, 0.6160),
        row(0.6705, 0.6174, 0.6208, 0.6208, 0.6180, 0.6180),
    };
    const MetricsReport m = aggregate_median(runs);
    CHECK(m.loss == 0.6607);
    CHECK(m.precision == 0.6174);
    CHECK(m.recall == 0.6208);
    CHECK(m.f1_micro == 0.6208);
    CHECK(m.f1_macro == 0.6180);
    CHECK(m.f1_weighted == 0.6180);
  }

  TEST_CASE("a single report is its own median and mean") {
    const MetricsReport r = row(0.1, 0.2, 0.3, 0.3, 0.4, 0.5);
    CHECK(aggregate_median({r}).f1_macro == 0.4);
    CHECK(aggregate_mean({r}).f1_weighted == 0.5);
  }

  TEST_CASE("median is invariant under permutation") {
    RngStream rng(3);
    std::vector<MetricsReport> runs;
    for (int i = 0; i < 7; ++i) runs.push_back(row(rng.uniform(), rng.uniform(), 0, 0, 0, rng.uniform()));
    const MetricsReport base = aggregate_median(runs);
    for (int k = 0; k < 20; ++k) {
      rng.shuffle(runs);
      CHECK(aggregate_median(runs) == base);
    }
  }

  TEST_CASE("rule names parse") {
    CHECK(parse_aggregate_rule("median") == AggregateRule::Median);
    CHECK(parse_aggregate_rule("mean") == AggregateRule::Mean);
    CHECK_THROWS_AS(parse_aggregate_rule("mode"), ConfigError);
    CHECK(aggregate({row(1, 0, 0, 0, 0, 0), row(2, 0, 0, 0, 0, 0)}, AggregateRule::Mean).loss == 1.5);
  }
}

TEST_SUITE("split and folds") {
  TEST_CASE("953 records split 765 / 94 / 94") {
    const auto labels = labels_of(545, 408, 1);
    const SplitPlan s = split_train_val_test(labels, {}, 0);
    CHECK(s.train.size() == 765);
    CHECK(s.val.size() == 94);
    CHECK(s.test.size() == 94);
  }

  TEST_CASE("953 records, K = 5: holdout 95 and folds 172,172,172,171,171") {
    const auto labels = labels_of(545, 408, 1);
    const FoldPlan p = kfold_plan(labels, 5, 0.1, 0);
    CHECK(p.holdout.size() == 95);
    std::vector<std::size_t> sizes;
    for (const auto& f : p.folds) sizes.push_back(f.size());
    CHECK(sizes == std::vector<std::size_t>{172, 172, 172, 171, 171});
  }

  TEST_CASE("953 records, K = 10: eight folds of 86 and two of 85") {
    const FoldPlan p = kfold_plan(labels_of(545, 408, 1), 10, 0.1, 0);
    std::vector<std::size_t> sizes;
    for (const auto& f : p.folds) sizes.push_back(f.size());
    CHECK(std::count(sizes.begin(), sizes.end(), 86u) == 8);
    CHECK(std::count(sizes.begin(), sizes.end(), 85u) == 2);
  }

  TEST_CASE("random triples: folds and holdout partition the corpus") {
    RngStream rng(99);
    for (int trial = 0; trial < 60; ++trial) {
      const Index k = 2 + static_cast<Index>(rng.uniform_index(9));
      const Index zeros = k + 1 + static_cast<Index>(rng.uniform_index(200));
      const Index ones = k + 1 + static_cast<Index>(rng.uniform_index(200));
      const double ratio = rng.uniform(0.0, 0.3);
      const auto labels = labels_of(zeros, ones, rng.next_u64());
      const FoldPlan p = kfold_plan(labels, k, ratio, rng.next_u64());
      const auto n = labels.size();
      CHECK(p.holdout.size() == static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9)));
      std::vector<int> seen(n, 0);
      for (auto i : p.holdout) seen[i]++;
      std::size_t lo = n, hi = 0;
      for (const auto& f : p.folds) {
        CHECK(std::is_sorted(f.begin(), f.end()));
        lo = std::min(lo, f.size());
        hi = std::max(hi, f.size());
        for (auto i : f) seen[i]++;
      }
      CHECK(hi - lo <= 1);
      CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
      // per-class fold sizes also differ by at most one
      for (int c = 0; c < 2; ++c) {
        std::size_t clo = n, chi = 0;
        for (const auto& f : p.folds) {
          const auto cnt = static_cast<std::size_t>(
              std::count_if(f.begin(), f.end(), [&](std::size_t i) { return labels[i] == c; }));
          clo = std::min(clo, cnt);
          chi = std::max(chi, cnt);
        }
        CHECK(chi - clo <= 1);
      }
    }
  }

  TEST_CASE("random splits partition the corpus and keep class quotas") {
    RngStream rng(5);
    for (int trial = 0; trial < 60; ++trial) {
      const Index zeros = 3 + static_cast<Index>(rng.uniform_index(300));
      const Index ones = 3 + static_cast<Index>(rng.uniform_index(300));
      const auto labels = labels_of(zeros, ones, rng.next_u64());
      const SplitPlan s = split_train_val_test(labels, {}, rng.next_u64());
      std::vector<int> seen(labels.size(), 0);
      for (const auto* part : {&s.train, &s.val, &s.test}) {
        CHECK(std::is_sorted(part->begin(), part->end()));
        for (auto i : *part) seen[i]++;
      }
      CHECK(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
      const auto floor_of = [](Index c) { return static_cast<std::size_t>(std::floor(0.1 * c + 1e-9)); };
      CHECK(s.val.size() == floor_of(zeros) + floor_of(ones));
      CHECK(s.test.size() == floor_of(zeros) + floor_of(ones));
    }
  }

  TEST_CASE("same seed, same plan; different seed, different plan") {
    const auto labels = labels_of(100, 80, 2);
    CHECK(kfold_plan(labels, 5, 0.1, 4).folds == kfold_plan(labels, 5, 0.1, 4).folds);
    CHECK_FALSE(kfold_plan(labels, 5, 0.1, 4).folds == kfold_plan(labels, 5, 0.1, 5).folds);
    CHECK(split_train_val_test(labels, {}, 4).test == split_train_val_test(labels, {}, 4).test);
  }

  TEST_CASE("classes too small for the request are rejected") {
    CHECK_THROWS_AS(kfold_plan(labels_of(3, 50, 1), 5, 0.1, 0), ValidationError);
    CHECK_THROWS_AS(split_train_val_test(labels_of(2, 50, 1), {}, 0), ValidationError);
    CHECK_THROWS_AS(kfold_plan(labels_of(30, 30, 1), 1, 0.1, 0), ValidationError);
  }

  TEST_CASE("ratios must be positive and sum to one") {
    SplitRatios r{0.7, 0.1, 0.1};
    CHECK_THROWS_AS(r.validate(), ConfigError);
    CHECK_NOTHROW(SplitRatios{}.validate());
  }
}

TEST_SUITE("report") {
  TEST_CASE("five runs give six table rows in the fixed column order") {
    std::vector<RunRecord> runs;
    std::vector<MetricsReport> reports;
    for (int i = 0; i < 5; ++i) {
      const MetricsReport m = row(0.1 * i, 0.5, 0.6, 0.6, 0.55, 0.56);
      reports.push_back(m);
      runs.push_back({"run" + std::to_string(i + 1), static_cast<std::uint64_t>(i), m, nullptr});
    }
    const std::string csv = table_csv(runs, aggregate_median(reports));
    std::istringstream in(csv);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 7);
    CHECK(lines[0] == "run,loss,precision,recall,f1_micro,f1_macro,f1_weighted");
    CHECK(lines[1].rfind("run1,0.000000,", 0) == 0);
    CHECK(lines[6].rfind("median,0.200000,", 0) == 0);
  }

  TEST_CASE("report.json round trips the metrics at six decimals") {
    const fs::path dir = scratch("report");
    MetricsReport m = row(0.12345678, 0.5, 0.6, 0.6, 0.55, 1.0 / 3.0);
    m.counts = {3, 1, 2, 4};
    m.n = 10;
    ReportInput in;
    in.command = "train";
    in.profile = "desk";
    in.config = {{"eval.runs", 1}};
    in.runs.push_back({"run1", 0, m, nullptr});
    in.aggregate = m;
    emit_report(in, dir.string());
    const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
    CHECK(j["report_version"] == kReportVersion);
    CHECK(j["profile"] == "desk");
    CHECK(j["aggregate_rule"] == "per-metric median");
    CHECK(j["config"]["eval.runs"] == 1);
    CHECK(j["seeds"] == nlohmann::json::array({0}));
    const MetricsReport back = metrics_from_json(j["aggregate"]);
    CHECK(back.loss == round6(m.loss));
    CHECK(back.f1_weighted == round6(1.0 / 3.0));
    CHECK(back.counts == m.counts);
    CHECK(fs::exists(dir / "table.csv"));
    CHECK_FALSE(j["fidelity_notes"].empty());
  }

  TEST_CASE("round6") {
    CHECK(round6(0.1234565) == doctest::Approx(0.123457).epsilon(1e-12));
    CHECK(round6(-2.0000004) == -2.0);
  }
}
