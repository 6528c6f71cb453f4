#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace foldcity::io {

/// Header plus rows of a comma-separated file. Double-quoted fields may hold
/// commas and doubled quotes; CR before LF is ignored.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws DataError when absent.
  std::size_t column(std::string_view name) const;
  /// -1 when absent.
  long find_column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text, const std::string& source = "csv");
CsvTable read_csv(const std::filesystem::path& path);

/// Quotes a field when it contains a comma, quote or newline.
std::string csv_field(std::string_view value);
/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text, const std::string& context);

}  // namespace foldcity::io
