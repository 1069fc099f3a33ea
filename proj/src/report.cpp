#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "atgraph/anomaly.hpp"
#include "atgraph/csv.hpp"

namespace atgraph {
namespace {

namespace fs = std::filesystem;

const CsvRow kAnomaliesHeader = {"day", "did", "block_count", "zscore", "label"};
const CsvRow kDayStatsHeader = {"day", "n_users", "mean", "std", "threshold_z"};

std::string fixed6(double v) {
  std::string s = fmt::format("{:.6f}", v);
  if (s == "-0.000000") {
    s.erase(0, 1);
  }
  return s;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw AnomalyError("cannot write " + path.string());
  }
  out << content;
  out.flush();
  if (!out) {
    throw AnomalyError("write failed: " + path.string());
  }
}

// Upper axis bound: 1, 2 or 5 times a power of ten, at least `v`.
double nice_ceiling(double v) {
  if (v <= 1.0) {
    return 1.0;
  }
  const double mag = std::pow(10.0, std::floor(std::log10(v)));
  for (double step : {1.0, 2.0, 5.0, 10.0}) {
    if (step * mag >= v) {
      return step * mag;
    }
  }
  return 10.0 * mag;
}

}  // namespace

std::vector<fs::path> emit_report(const Classification& result, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    throw AnomalyError("cannot create " + out_dir.string() + ": " + ec.message());
  }

  std::vector<const LabeledUserDay*> rows;
  rows.reserve(result.labels.size());
  for (const LabeledUserDay& l : result.labels) {
    rows.push_back(&l);
  }
  std::sort(rows.begin(), rows.end(), [](const LabeledUserDay* a, const LabeledUserDay* b) {
    return a->day != b->day ? a->day < b->day : a->did < b->did;
  });

  std::string anomalies = format_csv_row(kAnomaliesHeader);
  for (const LabeledUserDay* l : rows) {
    anomalies += format_csv_row({format_date(l->day), l->did.str(), std::to_string(l->count),
                                 l->z ? fixed6(*l->z) : std::string(),
                                 std::string(to_string(l->label))});
  }

  std::vector<const DayStats*> days;
  for (const DayStats& s : result.stats) {
    days.push_back(&s);
  }
  std::sort(days.begin(), days.end(),
            [](const DayStats* a, const DayStats* b) { return a->day < b->day; });
  std::string stats = format_csv_row(kDayStatsHeader);
  for (const DayStats* s : days) {
    stats += format_csv_row({format_date(s->day), std::to_string(s->n_users), fixed6(s->mean),
                             fixed6(s->std),
                             s->threshold_z ? fixed6(*s->threshold_z) : std::string()});
  }

  const fs::path anomalies_path = out_dir / "anomalies.csv";
  const fs::path stats_path = out_dir / "day_stats.csv";
  write_file(anomalies_path, anomalies);
  write_file(stats_path, stats);
  return {anomalies_path, stats_path};
}

std::vector<LabeledUserDay> read_anomalies(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw AnomalyError("cannot open " + path.string());
  }
  const std::string name = path.filename().string();
  CsvReader reader(in);
  CsvRow row;
  std::vector<LabeledUserDay> out;
  try {
    if (!reader.next(row) || row != kAnomaliesHeader) {
      throw AnomalyError(name + " line 1: missing or wrong header");
    }
    while (reader.next(row)) {
      const auto bad = [&](std::string_view what) {
        return AnomalyError(fmt::format("{} line {}: {}", name, reader.line(), what));
      };
      if (row.size() != kAnomaliesHeader.size()) {
        throw bad(fmt::format("expected 5 fields, found {}", row.size()));
      }
      const auto day = parse_date(row[0]);
      if (!day) {
        throw bad("bad day '" + row[0] + "'");
      }
      auto did = Did::parse(row[1]);
      if (!did) {
        throw bad("bad did '" + row[1] + "'");
      }
      std::int64_t count = 0;
      std::size_t used = 0;
      try {
        count = std::stoll(row[2], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != row[2].size() || count < 1) {
        throw bad("bad block_count '" + row[2] + "'");
      }
      std::optional<double> z;
      if (!row[3].empty()) {
        try {
          z = std::stod(row[3], &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used == 0 || used != row[3].size()) {
          throw bad("bad zscore '" + row[3] + "'");
        }
      }
      const auto label = label_from_string(row[4]);
      if (!label) {
        throw bad("bad label '" + row[4] + "'");
      }
      out.push_back(LabeledUserDay{*day, std::move(*did), count, z, *label});
    }
  } catch (const CsvError& e) {
    throw AnomalyError(name + " " + e.what());
  }
  return out;
}

std::string render_scatter_svg(std::span<const LabeledUserDay> labels) {
  constexpr double kWidth = 960;
  constexpr double kHeight = 540;
  constexpr double kLeft = 70;
  constexpr double kRight = 180;
  constexpr double kTop = 40;
  constexpr double kBottom = 70;
  constexpr double kPlotW = kWidth - kLeft - kRight;
  constexpr double kPlotH = kHeight - kTop - kBottom;
  constexpr std::string_view kRed = "#d62728";
  constexpr std::string_view kBlue = "#1f77b4";

  std::string svg;
  svg += fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{0}\" "
      "height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n",
      kWidth, kHeight);
  svg += fmt::format(
      "<style>.regular{{fill:{};fill-opacity:0.6}} .anomalous{{fill:{}}} "
      "text{{font-family:sans-serif;font-size:12px}}</style>\n",
      kBlue, kRed);
  svg += fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n",
                     kWidth, kHeight);
  svg += fmt::format(
      "<text x=\"{:.2f}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">Daily blocks per "
      "user: anomalous vs regular</text>\n",
      kLeft + kPlotW / 2);

  // Axes.
  svg += "<g id=\"axes\" stroke=\"#333333\" stroke-width=\"1\">\n";
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\"/>\n", kLeft,
                     kTop + kPlotH, kLeft + kPlotW);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\"/>\n", kLeft, kTop,
                     kTop + kPlotH);
  svg += "</g>\n";
  svg += fmt::format(
      "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">Day (UTC)</text>\n",
      kLeft + kPlotW / 2, kHeight - 12);
  svg += fmt::format(
      "<text x=\"16\" y=\"{0:.2f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      "{0:.2f})\">Blocks issued</text>\n",
      kTop + kPlotH / 2);

  if (!labels.empty()) {
    Date first_day = labels.front().day;
    Date last_day = labels.front().day;
    std::int64_t max_count = 0;
    for (const LabeledUserDay& l : labels) {
      first_day = std::min(first_day, l.day);
      last_day = std::max(last_day, l.day);
      max_count = std::max(max_count, l.count);
    }
    const auto n_days = static_cast<std::size_t>((last_day - first_day).count()) + 1;
    const double y_max = nice_ceiling(static_cast<double>(max_count));
    const auto x_of = [&](Date d) {
      const double idx = static_cast<double>((d - first_day).count());
      return kLeft + (idx + 0.5) * kPlotW / static_cast<double>(n_days);
    };
    const auto y_of = [&](double v) { return kTop + kPlotH * (1.0 - v / y_max); };

    svg += "<g id=\"ticks\">\n";
    const std::size_t day_step = std::max<std::size_t>(1, (n_days + 9) / 10);
    for (std::size_t i = 0; i < n_days; i += day_step) {
      const Date d = first_day + std::chrono::days(static_cast<int>(i));
      const double x = x_of(d);
      svg += fmt::format(
          "<line x1=\"{0:.2f}\" y1=\"{1}\" x2=\"{0:.2f}\" y2=\"{2}\" stroke=\"#333333\"/>"
          "<text x=\"{0:.2f}\" y=\"{3}\" text-anchor=\"end\" transform=\"rotate(-35 {0:.2f} "
          "{3})\">{4}</text>\n",
          x, kTop + kPlotH, kTop + kPlotH + 5, kTop + kPlotH + 18, format_date(d));
    }
    for (int i = 0; i <= 5; ++i) {
      const double v = y_max * i / 5.0;
      const double y = y_of(v);
      svg += fmt::format(
          "<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"#333333\"/>"
          "<text x=\"{3}\" y=\"{4:.2f}\" text-anchor=\"end\">{5:g}</text>\n",
          kLeft - 5, y, kLeft, kLeft - 8, y + 4, v);
    }
    svg += "</g>\n";

    // Regular markers first so anomalous ones stay on top.
    svg += "<g id=\"markers\">\n";
    for (Label pass : {Label::Regular, Label::Anomalous}) {
      const std::string_view color = pass == Label::Anomalous ? kRed : kBlue;
      for (const LabeledUserDay& l : labels) {
        if (l.label != pass) {
          continue;
        }
        svg += fmt::format(
            "<circle class=\"{}\" cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n",
            to_string(pass), x_of(l.day), y_of(static_cast<double>(l.count)), color);
      }
    }
    svg += "</g>\n";
  }

  const double lx = kLeft + kPlotW + 20;
  svg += "<g id=\"legend\">\n";
  svg += fmt::format(
      "<rect x=\"{0}\" y=\"{1}\" width=\"10\" height=\"10\" fill=\"{2}\"/>"
      "<text x=\"{3}\" y=\"{4}\">anomalous</text>\n",
      lx, kTop + 10, kRed, lx + 16, kTop + 19);
  svg += fmt::format(
      "<rect x=\"{0}\" y=\"{1}\" width=\"10\" height=\"10\" fill=\"{2}\"/>"
      "<text x=\"{3}\" y=\"{4}\">regular</text>\n",
      lx, kTop + 30, kBlue, lx + 16, kTop + 39);
  svg += "</g>\n</svg>\n";
  return svg;
}

void render_scatter(std::span<const LabeledUserDay> labels, const fs::path& out_path) {
  if (out_path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(out_path.parent_path(), ec);
  }
  write_file(out_path, render_scatter_svg(labels));
}

}  // namespace atgraph
