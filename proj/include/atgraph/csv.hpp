#pragma once

#include <cstddef>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

namespace atgraph {

using CsvRow = std::vector<std::string>;

// RFC 4180 with LF record terminators. Fields containing a comma, quote, CR
// or LF are quoted; embedded quotes are doubled.
std::string format_csv_row(const CsvRow& row);

class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t line, const std::string& what);

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Accepts LF or CRLF terminators and quoted fields spanning lines.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {}

  // Returns false at end of input. Throws CsvError on malformed quoting.
  bool next(CsvRow& row);

  // 1-based line on which the most recently returned record started.
  std::size_t line() const noexcept { return record_line_; }

 private:
  std::istream& in_;
  std::size_t current_line_ = 1;
  std::size_t record_line_ = 0;
};

}  // namespace atgraph
