#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace domex {

// Shortest representation that round-trips.
std::string format_double(double value);

// Quotes a CSV field when it contains a delimiter, quote or newline.
std::string csv_escape(const std::string& field);

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns);

  // Row length must match the column count.
  void add_row(std::vector<std::string> row);
  std::string str() const;
  std::size_t rows() const noexcept { return rows_.size(); }

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log2_x = false;
  int width = 640;
  int height = 400;
};

/// Standalone SVG line chart, one <polyline class="series"> per series.
std::string svg_line_plot(std::span<const PlotSeries> series, const PlotOptions& options);

void write_text_file(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace domex
