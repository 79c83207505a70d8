#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "subevo/errors.hpp"

namespace subevo {

/// Shortest round-trippable-enough decimal for CSV cells: "%.10g", "nan" for NaN.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }

  void add_row(std::vector<std::string> cells) {
    if (cells.size() != header_.size()) throw DomainError("CSV row width does not match header");
    rows_.push_back(std::move(cells));
  }

  static std::string quote(const std::string& cell) {
    if (cell.find_first_of(",\"\r\n") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  }

  std::string str() const {
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << quote(cells[i]);
      os << "\r\n";
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return os.str();
  }

  void write(const std::filesystem::path& path) const { write_text(path, str()); }

  static void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DomainError("cannot open output file " + path.string());
    f << text;
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

struct Series {
  std::string label;
  std::vector<double> x, y;
  std::vector<double> err;  // optional symmetric error bars
  bool dashed = false;
  bool markers = false;
};

struct Panel {
  std::string title, xlabel, ylabel;
  std::vector<Series> series;
};

namespace detail {

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
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

inline std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * mag >= raw) { step = m * mag; break; }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step)
    ticks.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  return ticks;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

}  // namespace detail

/// Panels laid out left to right in one self-contained SVG document.
inline std::string render_svg(const std::vector<Panel>& panels) {
  const double pw = 420, ph = 320, ml = 60, mr = 130, mt = 30, mb = 45;
  const double width = pw * static_cast<double>(std::max<std::size_t>(1, panels.size()));
  std::ostringstream os;
  char buf[256];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << ph
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t k = 0; k < panels.size(); ++k) {
    const Panel& panel = panels[k];
    const double ox = pw * static_cast<double>(k);
    double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
    for (const auto& s : panel.series)
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        const double e = i < s.err.size() && std::isfinite(s.err[i]) ? s.err[i] : 0.0;
        xlo = std::min(xlo, s.x[i]);
        xhi = std::max(xhi, s.x[i]);
        ylo = std::min(ylo, s.y[i] - e);
        yhi = std::max(yhi, s.y[i] + e);
      }
    if (!std::isfinite(xlo)) { xlo = 0; xhi = 1; ylo = 0; yhi = 1; }
    if (xhi == xlo) { xlo -= 0.5; xhi += 0.5; }
    if (yhi == ylo) { ylo -= 0.5; yhi += 0.5; }
    const double pad = 0.05 * (yhi - ylo);
    ylo -= pad;
    yhi += pad;
    const double x0 = ox + ml, x1 = ox + pw - mr, y0 = ph - mb, y1 = mt;
    auto sx = [&](double x) { return x0 + (x - xlo) / (xhi - xlo) * (x1 - x0); };
    auto sy = [&](double y) { return y0 + (y - ylo) / (yhi - ylo) * (y1 - y0); };

    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" "
                  "stroke=\"black\"/>\n",
                  x0, y1, x1 - x0, y0 - y1);
    os << buf;
    for (double t : detail::nice_ticks(xlo, xhi)) {
      std::snprintf(buf, sizeof buf,
                    "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>"
                    "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%g</text>\n",
                    sx(t), y0, sx(t), y0 + 4, sx(t), y0 + 16, t);
      os << buf;
    }
    for (double t : detail::nice_ticks(ylo, yhi)) {
      std::snprintf(buf, sizeof buf,
                    "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>"
                    "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%g</text>\n",
                    x0 - 4, sy(t), x0, sy(t), x0 - 6, sy(t) + 4, t);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">", (x0 + x1) / 2,
                  ph - 10.0);
    os << buf << detail::escape_xml(panel.xlabel) << "</text>\n";
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" "
                  "transform=\"rotate(-90 %.1f %.1f)\">",
                  ox + 14, (y0 + y1) / 2, ox + 14, (y0 + y1) / 2);
    os << buf << detail::escape_xml(panel.ylabel) << "</text>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-size=\"13\">",
                  (x0 + x1) / 2, mt - 10.0);
    os << buf << detail::escape_xml(panel.title) << "</text>\n";

    for (std::size_t j = 0; j < panel.series.size(); ++j) {
      const Series& s = panel.series[j];
      const char* color = s.dashed && s.label.empty() ? "#444444" : detail::palette(j);
      std::string path;
      bool pen_down = false;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
          pen_down = false;
          continue;
        }
        std::snprintf(buf, sizeof buf, "%c%.2f %.2f ", pen_down ? 'L' : 'M', sx(s.x[i]), sy(s.y[i]));
        path += buf;
        pen_down = true;
      }
      if (!s.markers && !path.empty()) {
        os << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
           << (s.dashed ? " stroke-dasharray=\"5,4\"" : "") << "/>\n";
      }
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        if (i < s.err.size() && std::isfinite(s.err[i]) && s.err[i] > 0) {
          std::snprintf(buf, sizeof buf,
                        "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\"/>\n",
                        sx(s.x[i]), sy(s.y[i] - s.err[i]), sx(s.x[i]), sy(s.y[i] + s.err[i]), color);
          os << buf;
        }
        if (s.markers) {
          std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"%s\"/>\n",
                        sx(s.x[i]), sy(s.y[i]), color);
          os << buf;
        }
      }
      if (!s.label.empty()) {
        const double ly = y1 + 14.0 * static_cast<double>(j) + 8.0;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" "
                      "stroke-width=\"2\"%s/><text x=\"%.1f\" y=\"%.1f\">",
                      x1 + 8, ly, x1 + 24, ly, color, s.dashed ? " stroke-dasharray=\"5,4\"" : "",
                      x1 + 28, ly + 4);
        os << buf << detail::escape_xml(s.label) << "</text>\n";
      }
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace subevo
