#pragma once

#include <algorithm>
#include <charconv>
#include <concepts>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "siem/errors.hpp"

namespace siem::experiment {

namespace fs = std::filesystem;

/// Shortest text that parses back to the same double.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_number(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw InvalidArgument("not a number: '" + s + "'");
  return v;
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Writes through a sibling temp file and renames, so readers never see a partial file.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Header plus rows of cells; numbers are formatted on insertion.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  class Row {
   public:
    Row& operator<<(double v) {
      cells_.push_back(format_number(v));
      return *this;
    }
    template <std::integral T>
    Row& operator<<(T v) {
      cells_.push_back(std::to_string(v));
      return *this;
    }
    Row& operator<<(const std::string& v) {
      cells_.push_back(v);
      return *this;
    }
    Row& operator<<(const char* v) {
      cells_.emplace_back(v);
      return *this;
    }

   private:
    friend class CsvTable;
    std::vector<std::string> cells_;
  };

  Row& row() {
    rows_.emplace_back();
    return rows_.back();
  }

  std::string str() const {
    std::string out;
    append_line(out, header_);
    for (const auto& r : rows_) {
      if (r.cells_.size() != header_.size()) throw InvalidArgument("csv row width differs from header");
      append_line(out, r.cells_);
    }
    return out;
  }

  void write(const fs::path& path) const { write_file_atomic(path, str()); }

 private:
  static void append_line(std::string& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  }
  std::vector<std::string> header_;
  std::vector<Row> rows_;
};

/// A numeric CSV read back for plotting and correlation.
struct NumericCsv {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }

  const std::vector<double>& column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return columns[i];
    throw InvalidArgument("csv has no column '" + name + "'");
  }

  bool has(const std::string& name) const { return std::find(header.begin(), header.end(), name) != header.end(); }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

inline NumericCsv read_numeric_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  NumericCsv t;
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  t.header = split_csv_line(line);
  t.columns.resize(t.header.size());
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != t.header.size())
      throw IoError(path.string() + ":" + std::to_string(n) + ": expected " + std::to_string(t.header.size()) +
                    " cells");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      try {
        t.columns[i].push_back(parse_number(cells[i]));
      } catch (const InvalidArgument&) {
        throw IoError(path.string() + ":" + std::to_string(n) + ": column '" + t.header[i] + "' is not numeric");
      }
    }
  }
  return t;
}

/// Stacked line panels sharing the x column, one per y column.
inline std::string render_svg(const NumericCsv& t, const std::string& x_name, const std::vector<std::string>& y_names,
                              const std::string& title) {
  if (y_names.empty()) throw InvalidArgument("plot: no columns selected");
  const auto& xs = t.column(x_name);
  const double width = 720, panel = 200, margin_l = 70, margin_r = 20, margin_t = 40, gap = 40;
  const double height = margin_t + static_cast<double>(y_names.size()) * (panel + gap);
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";

  auto finite_range = [](const std::vector<double>& v) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double x : v)
      if (std::isfinite(x)) lo = std::min(lo, x), hi = std::max(hi, x);
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi == lo) lo -= 0.5, hi += 0.5;
    return std::pair{lo, hi};
  };
  const auto [x0, x1] = finite_range(xs);
  const double pw = width - margin_l - margin_r;

  for (std::size_t p = 0; p < y_names.size(); ++p) {
    const auto& ys = t.column(y_names[p]);
    const auto [y0, y1] = finite_range(ys);
    const double top = margin_t + static_cast<double>(p) * (panel + gap);
    auto px = [&](double x) { return margin_l + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + panel - (y - y0) / (y1 - y0) * panel; };
    svg << "<rect x=\"" << margin_l << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << panel
        << "\" fill=\"none\" stroke=\"#999\"/>\n";
    svg << "<text x=\"" << margin_l + 4 << "\" y=\"" << top + 14 << "\">" << y_names[p] << "</text>\n";
    svg << "<text x=\"" << margin_l - 4 << "\" y=\"" << top + 10 << "\" text-anchor=\"end\">" << format_number(y1)
        << "</text>\n";
    svg << "<text x=\"" << margin_l - 4 << "\" y=\"" << top + panel << "\" text-anchor=\"end\">"
        << format_number(y0) << "</text>\n";
    svg << "<text x=\"" << margin_l << "\" y=\"" << top + panel + 14 << "\">" << format_number(x0) << "</text>\n";
    svg << "<text x=\"" << margin_l + pw << "\" y=\"" << top + panel + 14 << "\" text-anchor=\"end\">"
        << format_number(x1) << "</text>\n";
    svg << "<text x=\"" << margin_l + pw / 2 << "\" y=\"" << top + panel + 14 << "\" text-anchor=\"middle\">"
        << x_name << "</text>\n";
    svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.2\" points=\"";
    for (std::size_t i = 0; i < xs.size() && i < ys.size(); ++i) {
      if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) continue;
      svg << px(xs[i]) << ',' << py(ys[i]) << ' ';
    }
    svg << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace siem::experiment
