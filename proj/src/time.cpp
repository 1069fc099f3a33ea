#include "atgraph/time.hpp"

#include <fmt/format.h>

namespace atgraph {
namespace {

using namespace std::chrono;

// Reads exactly `width` decimal digits starting at `pos`.
std::optional<int> read_digits(std::string_view text, std::size_t pos,
                               std::size_t width) {
  if (pos + width > text.size()) {
    return std::nullopt;
  }
  int value = 0;
  for (std::size_t i = pos; i < pos + width; ++i) {
    const char c = text[i];
    if (c < '0' || c > '9') {
      return std::nullopt;
    }
    value = value * 10 + (c - '0');
  }
  return value;
}

std::optional<Date> parse_ymd(std::string_view text) {
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') {
    return std::nullopt;
  }
  const auto y = read_digits(text, 0, 4);
  const auto m = read_digits(text, 5, 2);
  const auto d = read_digits(text, 8, 2);
  if (!y || !m || !d) {
    return std::nullopt;
  }
  const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*m)},
                           day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) {
    return std::nullopt;
  }
  return sys_days{ymd};
}

}  // namespace

std::optional<Timestamp> parse_timestamp(std::string_view text) {
  const auto date = parse_ymd(text);
  if (!date || text.size() < 19) {
    return std::nullopt;
  }
  const char sep = text[10];
  if (sep != 'T' && sep != 't' && sep != ' ') {
    return std::nullopt;
  }
  if (text[13] != ':' || text[16] != ':') {
    return std::nullopt;
  }
  const auto hh = read_digits(text, 11, 2);
  const auto mm = read_digits(text, 14, 2);
  const auto ss = read_digits(text, 17, 2);
  if (!hh || !mm || !ss || *hh > 23 || *mm > 59 || *ss > 59) {
    return std::nullopt;
  }

  std::size_t pos = 19;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    const std::size_t frac_begin = pos;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      ++pos;
    }
    if (pos == frac_begin) {
      return std::nullopt;
    }
  }

  seconds offset{0};
  if (pos < text.size()) {
    const char tz = text[pos];
    if (tz == 'Z' || tz == 'z') {
      ++pos;
    } else if (tz == '+' || tz == '-') {
      const auto oh = read_digits(text, pos + 1, 2);
      if (!oh) {
        return std::nullopt;
      }
      std::size_t next = pos + 3;
      std::optional<int> om;
      if (next < text.size() && text[next] == ':') {
        om = read_digits(text, next + 1, 2);
        next += 3;
      } else {
        om = read_digits(text, next, 2);
        next += 2;
      }
      if (!om || *oh > 23 || *om > 59) {
        return std::nullopt;
      }
      offset = hours{*oh} + minutes{*om};
      if (tz == '-') {
        offset = -offset;
      }
      pos = next;
    } else {
      return std::nullopt;
    }
  }
  if (pos != text.size()) {
    return std::nullopt;
  }

  const Timestamp local = *date + hours{*hh} + minutes{*mm} + seconds{*ss};
  return local - offset;
}

std::string format_timestamp(Timestamp ts) {
  const Date day = day_of(ts);
  const year_month_day ymd{day};
  const hh_mm_ss<seconds> tod{ts - day};
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}Z",
                     static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()),
                     static_cast<unsigned>(ymd.day()), tod.hours().count(),
                     tod.minutes().count(), tod.seconds().count());
}

std::optional<Date> parse_date(std::string_view text) {
  if (text.size() != 10) {
    return std::nullopt;
  }
  return parse_ymd(text);
}

std::string format_date(Date day) {
  const year_month_day ymd{day};
  return fmt::format("{:04}-{:02}-{:02}", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()),
                     static_cast<unsigned>(ymd.day()));
}

Timestamp now_utc() { return floor<seconds>(system_clock::now()); }

}  // namespace atgraph
