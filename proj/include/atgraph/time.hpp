#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace atgraph {

// UTC instant with whole-second precision.
using Timestamp = std::chrono::sys_seconds;
// UTC calendar day.
using Date = std::chrono::sys_days;

// Accepts RFC 3339 / ISO 8601 date-times (`2023-08-02T10:00:00.123+02:00`),
// normalizing to UTC and truncating sub-second digits. A missing offset is
// read as UTC.
std::optional<Timestamp> parse_timestamp(std::string_view text);

// `YYYY-MM-DDTHH:MM:SSZ`
std::string format_timestamp(Timestamp ts);

// `YYYY-MM-DD`
std::optional<Date> parse_date(std::string_view text);
std::string format_date(Date day);

inline Date day_of(Timestamp ts) { return std::chrono::floor<std::chrono::days>(ts); }

Timestamp now_utc();

}  // namespace atgraph
