#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "atgraph/records.hpp"
#include "atgraph/store.hpp"
#include "atgraph/time.hpp"
#include "atgraph/types.hpp"

namespace atgraph {

inline constexpr double kDefaultPercentile = 99.0;

// Blocks issued by one user on one UTC day. Only days with count >= 1 exist.
struct DailyCount {
  Date day;
  Did did;
  std::int64_t count = 0;

  friend bool operator==(const DailyCount&, const DailyCount&) = default;
};

struct DayStats {
  Date day;
  std::size_t n_users = 0;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::optional<double> threshold_z;
};

enum class Label { Regular, Anomalous };

std::string_view to_string(Label label) noexcept;
std::optional<Label> label_from_string(std::string_view text) noexcept;

struct LabeledUserDay {
  Date day;
  Did did;
  std::int64_t count = 0;
  std::optional<double> z;
  Label label = Label::Regular;
};

class AnomalyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Output sorted by (day, did). Rows outside `window` are dropped.
std::vector<DailyCount> aggregate_daily(std::span<const BlockRow> blocks,
                                        const DateRange& window = {});

// Mean and population std of one day's counts; the day is taken from the
// first entry. Requires a non-empty span.
DayStats day_stats(std::span<const DailyCount> counts);

// (count - mean) / std. Throws AnomalyError when std is zero.
double zscore(double count, const DayStats& stats);

// Linear-interpolation percentile: on ascending values, rank
// r = (n - 1) * p / 100 and t = v[floor r] + frac(r) * (v[floor r + 1] - v[floor r]).
// Throws std::invalid_argument for empty input or p outside (0, 100).
double percentile_threshold(std::span<const double> values, double p = kDefaultPercentile);

// Labels for one day's population of values, in input order. On degenerate
// days (fewer than two values or zero spread) every value is regular and
// no z-score is reported.
struct ValueLabels {
  double mean = 0.0;
  double std = 0.0;
  std::optional<double> threshold_z;
  std::vector<std::optional<double>> z;
  std::vector<Label> labels;
};
ValueLabels label_values(std::span<const double> values, double p = kDefaultPercentile);

// All counts must share one day. Output in input order.
std::vector<LabeledUserDay> classify_day(std::span<const DailyCount> counts,
                                         double p = kDefaultPercentile);

struct Classification {
  std::vector<LabeledUserDay> labels;  // sorted by (day, did)
  std::vector<DayStats> stats;         // one per day, ascending
};

// aggregate_daily then classify_day per day.
Classification classify_counts(std::span<const DailyCount> counts, double p = kDefaultPercentile);
Classification classify_blocks(std::span<const BlockRow> blocks, const DateRange& window,
                               double p = kDefaultPercentile);
// Reads blocks.csv under `data_dir` (absent file: empty result).
Classification classify_range(const std::filesystem::path& data_dir, const DateRange& window,
                              double p = kDefaultPercentile);

// Writes anomalies.csv and day_stats.csv into `out_dir`; returns both paths.
std::vector<std::filesystem::path> emit_report(const Classification& result,
                                               const std::filesystem::path& out_dir);

// Parses an anomalies.csv produced by emit_report. Errors name the line.
std::vector<LabeledUserDay> read_anomalies(const std::filesystem::path& path);

// Deterministic self-contained SVG: x = day, y = block count, one circle per
// labeled user-day (class "anomalous" in red, "regular" in blue).
std::string render_scatter_svg(std::span<const LabeledUserDay> labels);
void render_scatter(std::span<const LabeledUserDay> labels, const std::filesystem::path& out_path);

}  // namespace atgraph
