#include <doctest.h>

#include <random>

#include "atgraph/anomaly.hpp"
#include "support/anomaly_oracle.hpp"
#include "support/test_support.hpp"

TEST_SUITE_BEGIN("anomaly");

using namespace atgraph;
using atgraph::testing::TempDir;
using atgraph::testing::date;
using atgraph::testing::oracle_classify;
using atgraph::testing::slurp;
using atgraph::testing::ts;

namespace {

Did user(int i) { return Did("did:plc:u" + std::to_string(i)); }

std::vector<DailyCount> day_of_counts(const char* day, const std::vector<std::int64_t>& counts) {
  std::vector<DailyCount> out;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out.push_back(DailyCount{date(day), user(static_cast<int>(i)), counts[i]});
  }
  return out;
}

std::size_t count_of(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("worked example: four quiet users and one burst") {
  const auto counts = day_of_counts("2023-08-02", {1, 1, 1, 1, 10});
  const DayStats stats = day_stats(counts);
  CHECK(stats.n_users == 5);
  CHECK(stats.mean == doctest::Approx(2.8));
  CHECK(stats.std == doctest::Approx(3.6));
  CHECK(zscore(10, stats) == doctest::Approx(2.0));
  CHECK(zscore(1, stats) == doctest::Approx(-0.5));

  const std::vector<double> z = {-0.5, -0.5, -0.5, -0.5, 2.0};
  CHECK(percentile_threshold(z) == doctest::Approx(1.9));

  const auto labels = classify_day(counts);
  REQUIRE(labels.size() == 5);
  for (int i = 0; i < 4; ++i) {
    CHECK(labels[i].label == Label::Regular);
  }
  CHECK(labels[4].label == Label::Anomalous);
  CHECK(labels[4].z == doctest::Approx(2.0));
}

TEST_CASE("percentile interpolation") {
  const std::vector<double> v = {4, 1, 3, 2};
  CHECK(percentile_threshold(v, 50) == doctest::Approx(2.5));
  CHECK(percentile_threshold(v, 99) == doctest::Approx(3.97));
  const std::vector<double> one = {7};
  CHECK(percentile_threshold(one, 99) == 7);
  CHECK_THROWS_AS(percentile_threshold(std::vector<double>{}, 99), std::invalid_argument);
  CHECK_THROWS_AS(percentile_threshold(v, 0), std::invalid_argument);
  CHECK_THROWS_AS(percentile_threshold(v, 100), std::invalid_argument);
}

TEST_CASE("degenerate days are all regular") {
  for (const auto& counts : {std::vector<std::int64_t>{5}, std::vector<std::int64_t>{3, 3, 3, 3}}) {
    const auto labels = classify_day(day_of_counts("2023-08-02", counts));
    for (const auto& l : labels) {
      CHECK(l.label == Label::Regular);
      CHECK_FALSE(l.z);
    }
    const auto c = day_of_counts("2023-08-02", counts);
    CHECK_FALSE(day_stats(c).threshold_z);
    CHECK_THROWS_AS(zscore(3, day_stats(c)), AnomalyError);
  }
}

TEST_CASE("ties at the threshold are regular") {
  // Two users share the top count; the percentile falls between them.
  const auto labels = classify_day(day_of_counts("2023-08-02", {1, 1, 1, 9, 9}));
  for (const auto& l : labels) {
    CHECK(l.label == Label::Regular);
  }
}

TEST_CASE("property: agrees with a brute-force oracle") {
  std::mt19937 rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    std::uniform_int_distribution<int> size(1, 60);
    std::geometric_distribution<int> count(0.3);
    std::vector<std::int64_t> counts(static_cast<std::size_t>(size(rng)));
    for (auto& c : counts) {
      c = 1 + count(rng);
    }
    const double p = trial % 3 == 0 ? 99.0 : std::uniform_real_distribution<double>(1, 99.9)(rng);
    const auto labels = classify_day(day_of_counts("2023-08-02", counts), p);
    const auto oracle = oracle_classify(std::vector<double>(counts.begin(), counts.end()), p);
    REQUIRE(labels.size() == counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
      CHECK((labels[i].label == Label::Anomalous) == oracle.anomalous[i]);
      if (oracle.degenerate) {
        CHECK_FALSE(labels[i].z);
      } else {
        REQUIRE(labels[i].z);
        CHECK(*labels[i].z == doctest::Approx(oracle.z[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("property: labels equal a percentile cut on raw counts") {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> size(2, 80);
    std::poisson_distribution<int> count(4.0);
    std::vector<double> values(static_cast<std::size_t>(size(rng)));
    for (auto& v : values) {
      v = 1 + count(rng);
    }
    const ValueLabels got = label_values(values);
    if (!got.threshold_z) {
      continue;
    }
    const double cut = percentile_threshold(values);
    for (std::size_t i = 0; i < values.size(); ++i) {
      CHECK((got.labels[i] == Label::Anomalous) == (values[i] > cut));
    }
  }
}

TEST_CASE("property: labels are invariant under positive affine maps") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> size(1, 50);
    std::uniform_int_distribution<int> count(1, 12);
    std::vector<double> values(static_cast<std::size_t>(size(rng)));
    for (auto& v : values) {
      v = count(rng);
    }
    const double a = std::uniform_real_distribution<double>(0.1, 50)(rng);
    const double b = std::uniform_real_distribution<double>(-100, 100)(rng);
    std::vector<double> mapped;
    for (double v : values) {
      mapped.push_back(a * v + b);
    }
    CHECK(label_values(values).labels == label_values(mapped).labels);
  }
}

TEST_CASE("at most ceil((1 - p/100) n) users are anomalous on a day") {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> size(2, 500);
    std::uniform_int_distribution<int> count(1, 1000);
    std::vector<double> values(static_cast<std::size_t>(size(rng)));
    for (auto& v : values) {
      v = count(rng);
    }
    const auto labels = label_values(values).labels;
    const auto flagged = std::count(labels.begin(), labels.end(), Label::Anomalous);
    CHECK(static_cast<double>(flagged) <= std::ceil(0.01 * static_cast<double>(values.size())));
  }
}

TEST_CASE("aggregate_daily groups by UTC day and user") {
  const std::vector<BlockRow> blocks = {
      BlockRow{user(1), user(2), "a", ts("2023-08-01T23:59:59Z")},
      BlockRow{user(1), user(3), "b", ts("2023-08-02T00:00:01Z")},
      BlockRow{user(1), user(4), "c", ts("2023-08-02T10:00:00Z")},
      BlockRow{user(0), user(4), "d", ts("2023-08-02T11:00:00Z")},
      BlockRow{user(0), user(4), "e", ts("2023-09-01T00:00:00Z")},
  };
  const auto counts = aggregate_daily(blocks, DateRange{date("2023-08-01"), date("2023-08-31")});
  REQUIRE(counts.size() == 3);
  CHECK(counts[0] == DailyCount{date("2023-08-01"), user(1), 1});
  CHECK(counts[1] == DailyCount{date("2023-08-02"), user(0), 1});
  CHECK(counts[2] == DailyCount{date("2023-08-02"), user(1), 2});
}

TEST_CASE("classify_counts normalizes per day") {
  std::vector<DailyCount> counts = day_of_counts("2023-08-02", {1, 1, 1, 1, 10});
  // The same burst size on a busy day is unremarkable.
  for (const auto& c : day_of_counts("2023-08-03", {10, 10, 10, 10, 10})) {
    counts.push_back(c);
  }
  const Classification result = classify_counts(counts);
  REQUIRE(result.stats.size() == 2);
  CHECK(result.stats[0].day == date("2023-08-02"));
  CHECK(result.stats[1].threshold_z == std::nullopt);
  std::size_t anomalous = 0;
  for (const auto& l : result.labels) {
    anomalous += l.label == Label::Anomalous ? 1 : 0;
  }
  CHECK(anomalous == 1);
}

TEST_CASE("reports round-trip and are byte-stable") {
  std::vector<DailyCount> counts = day_of_counts("2023-08-02", {1, 1, 1, 1, 10});
  counts.push_back(DailyCount{date("2023-08-03"), user(0), 4});
  const Classification result = classify_counts(counts);

  TempDir a;
  TempDir b;
  const auto paths = emit_report(result, a.path());
  REQUIRE(paths.size() == 2);
  emit_report(result, b.path());
  CHECK(slurp(a / "anomalies.csv") == slurp(b / "anomalies.csv"));
  CHECK(slurp(a / "day_stats.csv") == slurp(b / "day_stats.csv"));

  const std::string text = slurp(a / "anomalies.csv");
  CHECK(text.starts_with("day,did,block_count,zscore,label\n"));
  CHECK(text.find("2023-08-02,did:plc:u4,10,2.000000,anomalous\n") != std::string::npos);
  CHECK(text.find("2023-08-03,did:plc:u0,4,,regular\n") != std::string::npos);

  const auto back = read_anomalies(a / "anomalies.csv");
  REQUIRE(back.size() == result.labels.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].did == result.labels[i].did);
    CHECK(back[i].count == result.labels[i].count);
    CHECK(back[i].label == result.labels[i].label);
  }

  atgraph::testing::write_text(a / "bad.csv", "day,did,block_count,zscore,label\n2023-08-02,x,1,,odd\n");
  try {
    read_anomalies(a / "bad.csv");
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("scatter plot has one marker per labeled user-day") {
  std::vector<DailyCount> counts = day_of_counts("2023-08-02", {1, 1, 1, 1, 10});
  for (const auto& c : day_of_counts("2023-08-04", {2, 3})) {
    counts.push_back(c);
  }
  const Classification result = classify_counts(counts);
  const std::string svg = render_scatter_svg(result.labels);
  CHECK(svg.find("<svg") != std::string::npos);
  // On the two-user day the larger count sits above the interpolated cut.
  CHECK(count_of(svg, "<circle class=\"anomalous\"") == 2);
  CHECK(count_of(svg, "<circle class=\"regular\"") == 5);
  CHECK(svg == render_scatter_svg(result.labels));

  const std::string empty = render_scatter_svg({});
  CHECK(count_of(empty, "<circle") == 0);
  CHECK(empty.find("anomalous") != std::string::npos);

  TempDir dir;
  render_scatter(result.labels, dir / "plot.svg");
  CHECK(slurp(dir / "plot.svg") == svg);
}

TEST_SUITE_END();
