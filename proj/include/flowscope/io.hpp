#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flowscope::io {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double value);
double parse_double(std::string_view text);
std::int64_t parse_int(std::string_view text);

std::vector<std::string> split(std::string_view line, char sep = ',');
std::string join(std::span<const std::string> fields, char sep = ',');
std::string_view trim(std::string_view text);

/// Header-indexed view of one CSV file held in memory.
class CsvTable {
 public:
  static CsvTable read(std::istream& in);
  static CsvTable read_file(const std::filesystem::path& path);

  const std::vector<std::string>& header() const noexcept { return header_; }
  std::size_t rows() const noexcept { return rows_.size(); }
  /// Column position, or throws ParseError if the column is missing.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
  const std::string& at(std::size_t row, std::size_t col) const { return rows_[row][col]; }
  const std::vector<std::string>& row(std::size_t r) const { return rows_[r]; }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace flowscope::io
