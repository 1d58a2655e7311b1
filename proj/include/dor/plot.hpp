#pragma once

// Minimal SVG charts for metric CSVs: grouped bars (one group per row) and
// line charts (one series per metric column over a numeric x column).

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dor::plot {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Throws DataError for an unknown column name.
  std::size_t column(const std::string& name) const;
};

// Comma-separated, no quoting. Throws ParseError on ragged rows and
// DataError when the file has no data row.
CsvTable parse_csv(std::istream& in, const std::string& source = "<stream>");
CsvTable load_csv(const std::filesystem::path& path);

// One bar group per row, labelled by `label_column`, one bar per value column.
std::string bar_chart(const CsvTable& table, const std::string& label_column,
                      const std::vector<std::string>& value_columns, const std::string& title);

// Rows are drawn in ascending x order.
std::string line_chart(const CsvTable& table, const std::string& x_column,
                       const std::vector<std::string>& y_columns, const std::string& title);

}  // namespace dor::plot
