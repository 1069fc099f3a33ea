#include "atgraph/csv.hpp"

#include <fmt/format.h>

namespace atgraph {

std::string format_csv_row(const CsvRow& row) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i > 0) {
      out.push_back(',');
    }
    const std::string& field = row[i];
    if (field.find_first_of(",\"\r\n") == std::string::npos) {
      out += field;
      continue;
    }
    out.push_back('"');
    for (char c : field) {
      if (c == '"') {
        out.push_back('"');
      }
      out.push_back(c);
    }
    out.push_back('"');
  }
  out.push_back('\n');
  return out;
}

CsvError::CsvError(std::size_t line, const std::string& what)
    : std::runtime_error(fmt::format("line {}: {}", line, what)), line_(line) {}

bool CsvReader::next(CsvRow& row) {
  row.clear();
  int c = in_.get();
  if (c == std::char_traits<char>::eof()) {
    return false;
  }
  record_line_ = current_line_;

  std::string field;
  bool quoted = false;      // inside a quoted section
  bool was_quoted = false;  // current field started with a quote
  for (;; c = in_.get()) {
    if (c == std::char_traits<char>::eof()) {
      if (quoted) {
        throw CsvError(record_line_, "unterminated quoted field");
      }
      row.push_back(std::move(field));
      return true;
    }
    const char ch = static_cast<char>(c);
    if (quoted) {
      if (ch == '"') {
        if (in_.peek() == '"') {
          in_.get();
          field.push_back('"');
        } else {
          quoted = false;
          const int after = in_.peek();
          if (after != ',' && after != '\n' && after != '\r' &&
              after != std::char_traits<char>::eof()) {
            throw CsvError(current_line_, "unexpected character after closing quote");
          }
        }
      } else {
        if (ch == '\n') {
          ++current_line_;
        }
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case ',':
        row.push_back(std::move(field));
        field.clear();
        was_quoted = false;
        break;
      case '"':
        if (!field.empty() || was_quoted) {
          throw CsvError(current_line_, "quote inside unquoted field");
        }
        quoted = true;
        was_quoted = true;
        break;
      case '\r':
        if (in_.peek() != '\n') {
          throw CsvError(current_line_, "bare carriage return");
        }
        break;
      case '\n':
        ++current_line_;
        row.push_back(std::move(field));
        return true;
      default:
        field.push_back(ch);
    }
  }
}

}  // namespace atgraph
