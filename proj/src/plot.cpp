#include "dor/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>

#include "dor/errors.hpp"

namespace dor::plot {

namespace {

constexpr double kWidth = 640, kHeight = 360;
constexpr double kLeft = 60, kRight = 150, kTop = 40, kBottom = 60;
const char* const kColors[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"};

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

double number(const CsvTable& t, std::size_t row, std::size_t col) {
  const std::string& cell = t.rows[row][col];
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used == cell.size()) return v;
  } catch (const std::exception&) {
  }
  throw DataError("column '" + t.header[col] + "' row " + std::to_string(row + 1) + " is not numeric: '" + cell + "'");
}

struct Frame {
  double lo = 0.0, hi = 1.0;
  double y(double v) const { return kTop + (kHeight - kTop - kBottom) * (1.0 - (v - lo) / (hi - lo)); }
};

Frame value_frame(const CsvTable& t, const std::vector<std::size_t>& cols, bool from_zero) {
  Frame f;
  bool first = true;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (const std::size_t c : cols) {
      const double v = number(t, r, c);
      if (first) f.lo = f.hi = v;
      f.lo = std::min(f.lo, v);
      f.hi = std::max(f.hi, v);
      first = false;
    }
  }
  if (from_zero) f.lo = std::min(f.lo, 0.0);
  if (f.hi - f.lo < 1e-12) f.hi = f.lo + 1.0;
  return f;
}

std::string open_svg(const std::string& title, const Frame& f) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
    << "</text>\n";
  const double x1 = kWidth - kRight;
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kHeight - kBottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << x1 << "\" y2=\""
    << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = f.lo + (f.hi - f.lo) * i / 4.0;
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(f.y(v) + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
      << num(v) << "</text>\n";
  }
  return s.str();
}

std::string legend(const std::vector<std::string>& names) {
  std::ostringstream s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = kTop + 18.0 * static_cast<double>(i);
    s << "<rect class=\"legend\" x=\"" << kWidth - kRight + 12 << "\" y=\"" << y << "\" width=\"12\" height=\"12\" fill=\""
      << kColors[i % std::size(kColors)] << "\"/>\n";
    s << "<text x=\"" << kWidth - kRight + 30 << "\" y=\"" << y + 10 << "\" font-size=\"12\">" << escape(names[i])
      << "</text>\n";
  }
  return s.str();
}

std::vector<std::size_t> columns(const CsvTable& t, const std::vector<std::string>& names) {
  if (names.empty()) throw ConfigError("no value columns selected for the chart");
  std::vector<std::size_t> out;
  for (const auto& n : names) out.push_back(t.column(n));
  return out;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError("CSV has no column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable parse_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_commas(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw ParseError(source, line_no,
                       "expected " + std::to_string(t.header.size()) + " cells, got " + std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
  }
  if (t.rows.empty()) throw DataError(source + ": report has no rows to plot");
  return t;
}

CsvTable load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report " + path.string());
  return parse_csv(in, path.string());
}

std::string bar_chart(const CsvTable& t, const std::string& label_column,
                      const std::vector<std::string>& value_columns, const std::string& title) {
  if (t.rows.empty()) throw DataError("report has no rows to plot");
  const std::size_t label = t.column(label_column);
  const auto cols = columns(t, value_columns);
  const Frame f = value_frame(t, cols, true);
  std::ostringstream s;
  s << open_svg(title, f);
  const double plot_w = kWidth - kLeft - kRight;
  const double group_w = plot_w / static_cast<double>(t.rows.size());
  const double bar_w = group_w * 0.8 / static_cast<double>(cols.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double gx = kLeft + group_w * static_cast<double>(r) + group_w * 0.1;
    s << "<g class=\"group\">\n";
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const double v = number(t, r, cols[k]);
      const double y0 = f.y(std::max(f.lo, 0.0));
      const double y1 = f.y(v);
      s << "<rect class=\"bar\" x=\"" << num(gx + bar_w * static_cast<double>(k)) << "\" y=\""
        << num(std::min(y0, y1)) << "\" width=\"" << num(bar_w) << "\" height=\"" << num(std::abs(y0 - y1))
        << "\" fill=\"" << kColors[k % std::size(kColors)] << "\"/>\n";
    }
    s << "<text x=\"" << num(gx + group_w * 0.4) << "\" y=\"" << kHeight - kBottom + 16
      << "\" text-anchor=\"middle\" font-size=\"10\">" << escape(t.rows[r][label]) << "</text>\n";
    s << "</g>\n";
  }
  s << legend(value_columns) << "</svg>\n";
  return s.str();
}

std::string line_chart(const CsvTable& t, const std::string& x_column, const std::vector<std::string>& y_columns,
                       const std::string& title) {
  if (t.rows.empty()) throw DataError("report has no rows to plot");
  const std::size_t xc = t.column(x_column);
  const auto cols = columns(t, y_columns);
  std::vector<std::size_t> order(t.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return number(t, a, xc) < number(t, b, xc); });
  const double xlo = number(t, order.front(), xc);
  double xhi = number(t, order.back(), xc);
  if (xhi - xlo < 1e-12) xhi = xlo + 1.0;
  auto px = [&](double x) { return kLeft + 10 + (kWidth - kLeft - kRight - 20) * (x - xlo) / (xhi - xlo); };
  const Frame f = value_frame(t, cols, false);
  std::ostringstream s;
  s << open_svg(title, f);
  for (const std::size_t r : order) {
    s << "<text x=\"" << num(px(number(t, r, xc))) << "\" y=\"" << kHeight - kBottom + 16
      << "\" text-anchor=\"middle\" font-size=\"11\">" << escape(t.rows[r][xc]) << "</text>\n";
  }
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const char* color = kColors[k % std::size(kColors)];
    s << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < order.size(); ++i)
      s << (i ? " " : "") << num(px(number(t, order[i], xc))) << ',' << num(f.y(number(t, order[i], cols[k])));
    s << "\"/>\n";
    for (const std::size_t r : order)
      s << "<circle cx=\"" << num(px(number(t, r, xc))) << "\" cy=\"" << num(f.y(number(t, r, cols[k])))
        << "\" r=\"3\" fill=\"" << color << "\"/>\n";
  }
  s << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 16
    << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(x_column) << "</text>\n";
  s << legend(y_columns) << "</svg>\n";
  return s.str();
}

}  // namespace dor::plot
