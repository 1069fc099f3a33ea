#include "atgraph/anomaly.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace atgraph {
namespace {

struct Moments {
  double mean = 0.0;
  double std = 0.0;
};

// Two-pass population moments. Identical values give std == 0 exactly, even
// when their sum is not representable.
Moments moments(std::span<const double> values) {
  Moments m;
  if (values.empty()) {
    return m;
  }
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  if (*lo == *hi) {
    m.mean = *lo;
    return m;
  }
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) {
    const double d = v - m.mean;
    ss += d * d;
  }
  m.std = std::sqrt(ss / n);
  return m;
}

std::vector<double> as_values(std::span<const DailyCount> counts) {
  std::vector<double> values;
  values.reserve(counts.size());
  for (const DailyCount& c : counts) {
    values.push_back(static_cast<double>(c.count));
  }
  return values;
}

}  // namespace

std::string_view to_string(Label label) noexcept {
  return label == Label::Anomalous ? "anomalous" : "regular";
}

std::optional<Label> label_from_string(std::string_view text) noexcept {
  if (text == "anomalous") {
    return Label::Anomalous;
  }
  if (text == "regular") {
    return Label::Regular;
  }
  return std::nullopt;
}

std::vector<DailyCount> aggregate_daily(std::span<const BlockRow> blocks,
                                        const DateRange& window) {
  std::map<std::pair<Date, std::string>, std::int64_t> tally;
  for (const BlockRow& b : blocks) {
    const Date day = day_of(b.created_at);
    if (window.contains(day)) {
      ++tally[{day, b.blocker.str()}];
    }
  }
  std::vector<DailyCount> out;
  out.reserve(tally.size());
  for (const auto& [key, count] : tally) {
    out.push_back(DailyCount{key.first, Did(key.second), count});
  }
  return out;
}

double percentile_threshold(std::span<const double> values, double p) {
  if (values.empty()) {
    throw std::invalid_argument("percentile of an empty sequence");
  }
  if (!(p > 0.0 && p < 100.0)) {
    throw std::invalid_argument(fmt::format("percentile {} outside (0, 100)", p));
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.size() == 1) {
    return sorted.front();
  }
  const double rank = static_cast<double>(sorted.size() - 1) * p / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const double frac = rank - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) {
    return sorted[lo];
  }
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double zscore(double count, const DayStats& stats) {
  if (!(stats.std > 0.0)) {
    throw AnomalyError("z-score undefined: standard deviation is zero");
  }
  return (count - stats.mean) / stats.std;
}

ValueLabels label_values(std::span<const double> values, double p) {
  if (!(p > 0.0 && p < 100.0)) {
    throw std::invalid_argument(fmt::format("percentile {} outside (0, 100)", p));
  }
  ValueLabels out;
  const Moments m = moments(values);
  out.mean = m.mean;
  out.std = m.std;
  out.z.assign(values.size(), std::nullopt);
  out.labels.assign(values.size(), Label::Regular);
  if (values.size() < 2 || !(m.std > 0.0)) {
    return out;
  }
  std::vector<double> zs;
  zs.reserve(values.size());
  for (double v : values) {
    zs.push_back((v - m.mean) / m.std);
  }
  const double threshold = percentile_threshold(zs, p);
  out.threshold_z = threshold;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    out.z[i] = zs[i];
    if (zs[i] > threshold) {
      out.labels[i] = Label::Anomalous;
    }
  }
  return out;
}

DayStats day_stats(std::span<const DailyCount> counts) {
  if (counts.empty()) {
    throw std::invalid_argument("day_stats needs at least one count");
  }
  const std::vector<double> values = as_values(counts);
  const ValueLabels labeled = label_values(values);
  return DayStats{counts.front().day, counts.size(), labeled.mean, labeled.std,
                  labeled.threshold_z};
}

std::vector<LabeledUserDay> classify_day(std::span<const DailyCount> counts, double p) {
  const std::vector<double> values = as_values(counts);
  const ValueLabels labeled = label_values(values, p);
  std::vector<LabeledUserDay> out;
  out.reserve(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out.push_back(LabeledUserDay{counts[i].day, counts[i].did, counts[i].count, labeled.z[i],
                                 labeled.labels[i]});
  }
  return out;
}

Classification classify_counts(std::span<const DailyCount> counts, double p) {
  std::vector<DailyCount> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end(), [](const DailyCount& a, const DailyCount& b) {
    return a.day != b.day ? a.day < b.day : a.did < b.did;
  });

  Classification result;
  result.labels.reserve(sorted.size());
  for (auto first = sorted.begin(); first != sorted.end();) {
    const auto last = std::find_if(first, sorted.end(),
                                   [&](const DailyCount& c) { return c.day != first->day; });
    const std::span<const DailyCount> day(&*first, static_cast<std::size_t>(last - first));
    const std::vector<double> values = as_values(day);
    const ValueLabels labeled = label_values(values, p);
    result.stats.push_back(
        DayStats{first->day, day.size(), labeled.mean, labeled.std, labeled.threshold_z});
    for (std::size_t i = 0; i < day.size(); ++i) {
      result.labels.push_back(LabeledUserDay{day[i].day, day[i].did, day[i].count,
                                             labeled.z[i], labeled.labels[i]});
    }
    first = last;
  }
  return result;
}

Classification classify_blocks(std::span<const BlockRow> blocks, const DateRange& window,
                               double p) {
  const std::vector<DailyCount> counts = aggregate_daily(blocks, window);
  return classify_counts(counts, p);
}

Classification classify_range(const std::filesystem::path& data_dir, const DateRange& window,
                              double p) {
  window.validate();
  const std::vector<BlockRow> blocks = read_rows<BlockRow>(data_dir, window);
  return classify_blocks(blocks, window, p);
}

}  // namespace atgraph
