#pragma once

#include <string>
#include <vector>

namespace dmlkit::csv {

struct table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // ragged rows are rejected at read time

  int col(const std::string& name) const;  // -1 when absent
};

// Strict reader: UTF-8, comma delimiter, mandatory header row, double-quote
// escaping ("" inside quoted fields), tolerant of trailing \r. Ragged rows
// and unterminated quotes throw data_error with row context.
table read_file(const std::string& path);

// Locale-independent numeric parse (std::from_chars). Empty cells and
// non-numeric content throw data_error naming the row and column.
double parse_number(const std::string& cell, std::size_t row, const std::string& column);

// Fixed 6-significant-digit formatting ("%.6g", C locale). All numeric CSV
// output goes through this so reruns are byte-identical.
std::string format_number(double x);

// Writes header + rows with "\n" line endings and no trailing whitespace.
void write_file(const std::string& path, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows);

}  // namespace dmlkit::csv
