#pragma once

// Standalone SVG plots, built from CSV artifacts on disk.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "isdsm/errors.hpp"
#include "isdsm/io.hpp"
#include "isdsm/stats.hpp"

namespace isdsm::svg {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError("CSV column missing: " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
  std::vector<double> numbers(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(std::stod(r.at(c)));
    return out;
  }
  std::vector<std::string> strings(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<std::string> out;
    for (const auto& r : rows) out.push_back(r.at(c));
    return out;
  }
};

inline Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("missing artifact: " + path.string());
  Table t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else if (!cells.empty()) {
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

namespace detail {

constexpr double kWidth = 640, kHeight = 480, kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;

inline std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

inline Frame frame(std::vector<double> xs, std::vector<double> ys) {
  const auto pad = [](double& lo, double& hi) {
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  };
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!xs.empty()) {
    x0 = *std::min_element(xs.begin(), xs.end());
    x1 = *std::max_element(xs.begin(), xs.end());
  }
  if (!ys.empty()) {
    y0 = *std::min_element(ys.begin(), ys.end());
    y1 = *std::max_element(ys.begin(), ys.end());
  }
  pad(x0, x1);
  pad(y0, y1);
  return {x0, x1, y0, y1};
}

inline std::string open(const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  return s.str();
}

inline std::string axes(const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  std::ostringstream s;
  const double bx = kLeft, by = kHeight - kBottom, tx = kWidth - kRight, ty = kTop;
  s << "<path d=\"M" << bx << ' ' << ty << " L" << bx << ' ' << by << " L" << tx << ' ' << by
    << "\" stroke=\"black\" fill=\"none\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
    const double y = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s << "<text x=\"" << f.px(x) << "\" y=\"" << by + 18 << "\" text-anchor=\"middle\">" << num(x) << "</text>\n";
    s << "<text x=\"" << bx - 6 << "\" y=\"" << f.py(y) + 4 << "\" text-anchor=\"end\">" << num(y) << "</text>\n";
  }
  s << "<text x=\"" << (bx + tx) / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\">" << xlabel
    << "</text>\n";
  s << "<text x=\"18\" y=\"" << (by + ty) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << (by + ty) / 2
    << ")\">" << ylabel << "</text>\n";
  return s.str();
}

inline std::string polyline(const Frame& f, const std::vector<double>& xs, const std::vector<double>& ys,
                            const std::string& style) {
  if (xs.empty()) return {};
  std::ostringstream s;
  s << "<polyline fill=\"none\" " << style << " points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) s << f.px(xs[i]) << ',' << f.py(ys[i]) << ' ';
  s << "\"/>\n";
  return s.str();
}

inline std::string markers(const Frame& f, const std::vector<double>& xs, const std::vector<double>& ys) {
  std::ostringstream s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    s << "<circle cx=\"" << f.px(xs[i]) << "\" cy=\"" << f.py(ys[i]) << "\" r=\"3.5\" fill=\"#1f4e9a\"/>\n";
  }
  return s.str();
}

inline void save(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << body << "</svg>\n";
}

}  // namespace detail

/// Heatmap of z(b, t) from a CSV with columns b, t, z.
inline void heatmap(const std::filesystem::path& csv, const std::filesystem::path& out, const std::string& title) {
  using namespace detail;
  const Table t = read_csv(csv);
  const auto b = t.numbers("b"), ts = t.numbers("t"), z = t.numbers("z");
  std::vector<double> bu = b, tu = ts;
  std::sort(bu.begin(), bu.end());
  bu.erase(std::unique(bu.begin(), bu.end()), bu.end());
  std::sort(tu.begin(), tu.end());
  tu.erase(std::unique(tu.begin(), tu.end()), tu.end());
  const Frame f = frame(bu, tu);
  std::string body = open(title);
  const double zmax = z.empty() ? 0.0 : *std::max_element(z.begin(), z.end());
  if (bu.size() > 1 && tu.size() > 1) {
    const double wb = std::abs(f.px(bu[1]) - f.px(bu[0])) + 0.5;
    std::map<double, std::size_t> tindex;
    for (std::size_t i = 0; i < tu.size(); ++i) tindex[tu[i]] = i;
    std::ostringstream s;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const std::size_t it = tindex[ts[i]];
      const double hi_t = it + 1 < tu.size() ? tu[it + 1] : tu[it] + (tu[it] - tu[it - 1]);
      const double level = zmax > 0.0 ? z[i] / zmax : 0.0;
      const int shade = static_cast<int>(255.0 * (1.0 - level));
      s << "<rect x=\"" << f.px(b[i]) - wb / 2 << "\" y=\"" << f.py(hi_t) << "\" width=\"" << wb << "\" height=\""
        << std::abs(f.py(ts[i]) - f.py(hi_t)) + 0.5 << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\"/>\n";
    }
    body += s.str();
  }
  body += axes(f, "b", "t");
  save(out, body);
}

/// Log-log moment curve (columns: lag, moment) with the fitted line and a
/// reference slope through the first point.
inline void moment_plot(const std::filesystem::path& csv, const std::filesystem::path& out, const std::string& title,
                        double reference_slope) {
  using namespace detail;
  const Table t = read_csv(csv);
  std::vector<double> lx, ly;
  const auto lag = t.numbers("lag"), mom = t.numbers("moment");
  for (std::size_t i = 0; i < lag.size(); ++i) {
    if (lag[i] > 0.0 && mom[i] > 0.0) {
      lx.push_back(std::log10(lag[i]));
      ly.push_back(std::log10(mom[i]));
    }
  }
  std::string body = open(title);
  const Frame f = frame(lx, ly);
  body += axes(f, "log10 lag", "log10 moment");
  body += markers(f, lx, ly);
  if (lx.size() >= 2) {
    const auto fit = stats::least_squares(lx, ly);
    const double a = lx.front(), b = lx.back();
    body += polyline(f, {a, b}, {fit.intercept + fit.slope * a, fit.intercept + fit.slope * b},
                     "stroke=\"#1f4e9a\" stroke-width=\"1.5\"");
    body += polyline(f, {a, b}, {ly.front(), ly.front() + reference_slope * (b - a)},
                     "stroke=\"#b03030\" stroke-dasharray=\"6,4\"");
    body += "<text x=\"" + num(kLeft + 10) + "\" y=\"" + num(kTop + 16) + "\">fitted slope " + num(fit.slope) +
            ", reference " + num(reference_slope) + "</text>\n";
  }
  save(out, body);
}

/// Bias against k (columns: k, bias) with a reference curve c / k.
inline void bias_plot(const std::filesystem::path& csv, const std::filesystem::path& out, const std::string& title,
                      const std::string& value_column = "bias") {
  using namespace detail;
  const Table t = read_csv(csv);
  const auto k = t.numbers("k");
  const auto v = t.numbers(value_column);
  std::string body = open(title);
  std::vector<double> ys = v;
  ys.push_back(0.0);
  const Frame f = frame(k, ys);
  body += axes(f, "k", value_column);
  body += polyline(f, k, v, "stroke=\"#1f4e9a\" stroke-width=\"1.5\"");
  body += markers(f, k, v);
  if (!k.empty()) {
    std::vector<double> ref_x, ref_y;
    for (int i = 0; i <= 40; ++i) {
      const double x = k.front() + (k.back() - k.front()) * i / 40.0;
      ref_x.push_back(x);
      ref_y.push_back(v.front() * k.front() / x);
    }
    body += polyline(f, ref_x, ref_y, "stroke=\"#b03030\" stroke-dasharray=\"6,4\"");
  }
  save(out, body);
}

}  // namespace isdsm::svg
