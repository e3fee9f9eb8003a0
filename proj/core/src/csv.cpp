#include "dmlkit/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dmlkit/errors.hpp"

namespace dmlkit::csv {

namespace {

// Splits one physical line. The reader never needs embedded newlines, so a
// line is always a full record; quotes only guard commas and literal quotes.
std::vector<std::string> split_line(const std::string& line, std::size_t row) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  if (quoted) {
    throw data_error("csv: unterminated quote in row " + std::to_string(row));
  }
  out.push_back(field);
  return out;
}

}  // namespace

int table::col(const std::string& name) const {
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == name) return static_cast<int>(j);
  }
  return -1;
}

table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw data_error("csv: cannot open '" + path + "'");
  }
  table t;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (row == 0) {
      t.header = split_line(line, row);
      if (t.header.empty() || (t.header.size() == 1 && t.header[0].empty())) {
        throw data_error("csv: missing header row in '" + path + "'");
      }
    } else {
      if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
      auto fields = split_line(line, row);
      if (fields.size() != t.header.size()) {
        throw data_error("csv: row " + std::to_string(row) + " has " +
                         std::to_string(fields.size()) + " fields, expected " +
                         std::to_string(t.header.size()));
      }
      t.rows.push_back(std::move(fields));
    }
    ++row;
  }
  if (row == 0) {
    throw data_error("csv: empty file '" + path + "'");
  }
  return t;
}

double parse_number(const std::string& cell, std::size_t row, const std::string& column) {
  if (cell.empty()) {
    throw data_error("csv: missing value at row " + std::to_string(row) + ", column '" +
                     column + "'");
  }
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw data_error("csv: non-numeric value '" + cell + "' at row " + std::to_string(row) +
                     ", column '" + column + "'");
  }
  return value;
}

std::string format_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

void write_file(const std::string& path, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw data_error("csv: cannot write '" + path + "'");
  }
  std::ostringstream buf;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j) buf << ',';
    buf << header[j];
  }
  buf << '\n';
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j) buf << ',';
      buf << r[j];
    }
    buf << '\n';
  }
  out << buf.str();
}

}  // namespace dmlkit::csv
