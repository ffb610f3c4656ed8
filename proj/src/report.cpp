#include "domex/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "domex/error.hpp"

namespace domex {
namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string xml_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double value, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << value;
  return os.str();
}

}  // namespace

std::string format_double(double value) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

CsvTable::CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

void CsvTable::add_row(std::vector<std::string> row) {
  require(row.size() == columns_.size(), ErrorKind::validation,
          "csv row has " + std::to_string(row.size()) + " fields, expected " +
              std::to_string(columns_.size()));
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::string out;
  auto append = [&out](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(fields[i]);
    }
    out += '\n';
  };
  append(columns_);
  for (const auto& r : rows_) append(r);
  return out;
}

std::string svg_line_plot(std::span<const PlotSeries> series, const PlotOptions& options) {
  const double left = 70, right = 150, top = 40, bottom = 55;
  const double plot_w = options.width - left - right;
  const double plot_h = options.height - top - bottom;

  auto tx = [&](double x) { return options.log2_x ? std::log2(x) : x; };
  double x_min = INFINITY, x_max = -INFINITY, y_min = INFINITY, y_max = -INFINITY;
  for (const auto& s : series) {
    for (double x : s.x) {
      x_min = std::min(x_min, tx(x));
      x_max = std::max(x_max, tx(x));
    }
    for (double y : s.y) {
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  }
  if (!std::isfinite(x_min)) x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_max = y_min + 1e-3;
  const double pad = 0.05 * (y_max - y_min);
  y_min -= pad;
  y_max += pad;

  auto px = [&](double x) { return left + (tx(x) - x_min) / (x_max - x_min) * plot_w; };
  auto py = [&](double y) { return top + (y_max - y) / (y_max - y_min) * plot_h; };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width
     << "\" height=\"" << options.height << "\" viewBox=\"0 0 " << options.width << ' '
     << options.height << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << options.width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"15\">" << xml_escape(options.title)
     << "</text>\n"
     << "<g stroke=\"black\" stroke-width=\"1\">\n"
     << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
     << "\" y2=\"" << top + plot_h << "\"/>\n"
     << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
     << top + plot_h << "\"/>\n"
     << "</g>\n";

  // Axis ticks: x at the first series' points, y at five even levels.
  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  if (!series.empty()) {
    for (double x : series.front().x) {
      os << "<text x=\"" << fixed(px(x), 1) << "\" y=\"" << top + plot_h + 16
         << "\" text-anchor=\"middle\">" << format_double(x) << "</text>\n";
    }
  }
  for (int i = 0; i <= 4; ++i) {
    const double y = y_min + (y_max - y_min) * i / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << fixed(py(y) + 4, 1)
       << "\" text-anchor=\"end\">" << fixed(y, 3) << "</text>\n";
  }
  os << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << options.height - 12
     << "\" text-anchor=\"middle\">" << xml_escape(options.x_label) << "</text>\n"
     << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" "
     << "transform=\"rotate(-90 16 " << top + plot_h / 2 << ")\">"
     << xml_escape(options.y_label) << "</text>\n"
     << "</g>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    os << "<polyline class=\"series\" data-name=\"" << xml_escape(s.name)
       << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
      if (k) os << ' ';
      os << fixed(px(s.x[k]), 2) << ',' << fixed(py(s.y[k]), 2);
    }
    os << "\"/>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(i);
    os << "<line x1=\"" << left + plot_w + 12 << "\" y1=\"" << ly << "\" x2=\""
       << left + plot_w + 32 << "\" y2=\"" << ly << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << left + plot_w + 36 << "\" y=\"" << ly + 4
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(s.name)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::resource, "cannot open " + path.string());
  out << contents;
  require(static_cast<bool>(out), ErrorKind::resource, "failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::missing_prerequisite,
          "cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace domex
