#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sprag::csv {

struct Record {
  std::vector<std::string> fields;
  std::size_t line = 0;  // 1-based line where the record starts
};

// RFC-4180: comma separated, CRLF or LF line ends, double-quote quoting with
// "" escapes, quoted fields may span lines. A UTF-8 BOM is skipped.
// Throws Error(Row) on an unterminated quoted field.
std::vector<Record> parse(std::string_view text);

// Quotes a field only when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

std::string join_row(const std::vector<std::string>& fields);

}  // namespace sprag::csv
