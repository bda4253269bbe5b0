#pragma once

// Static SVG 1.1 trade-off plots. Reward runs along x, the secondary metric
// along y. Each trajectory fades in from transparent (early iterations) to
// solid, and ends in a star.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "adrpo/metrics.hpp"

namespace adrpo {

struct SvgSeries {
  std::string run;  // legend label, usually the method
  std::uint64_t seed = 0;
  std::string color = "#1f77b4";
  Trajectory trajectory;
};

struct SvgLayout {
  double width = 640;
  double height = 480;
  double margin_left = 64;
  double margin_right = 150;
  double margin_top = 36;
  double margin_bottom = 52;
  double min_alpha = 0.08;
};

inline std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += ch;
    }
  }
  return out;
}

namespace detail {

inline std::string fmt(double v, int prec = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::string star_points(double cx, double cy, double r_out) {
  const double r_in = r_out * 0.45;
  std::string pts;
  for (int k = 0; k < 10; ++k) {
    const double r = k % 2 == 0 ? r_out : r_in;
    const double a = -std::numbers::pi / 2 + k * std::numbers::pi / 5;
    if (k) pts += ' ';
    pts += fmt(cx + r * std::cos(a)) + "," + fmt(cy + r * std::sin(a));
  }
  return pts;
}

struct Range {
  double lo = 0, hi = 1;
  void pad() {
    if (hi - lo < 1e-9) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

}  // namespace detail

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> p{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  return p;
}

inline std::string render_trajectories(const std::vector<SvgSeries>& series, const std::string& title,
                                       const std::string& x_label, const std::string& y_label,
                                       const SvgLayout& L = {}) {
  detail::Range xr{1e300, -1e300}, yr{1e300, -1e300};
  for (const auto& s : series)
    for (const auto& p : s.trajectory.points) {
      xr.lo = std::min(xr.lo, p.reward);
      xr.hi = std::max(xr.hi, p.reward);
      yr.lo = std::min(yr.lo, p.secondary);
      yr.hi = std::max(yr.hi, p.secondary);
    }
  if (xr.lo > xr.hi) xr = {0, 1};
  if (yr.lo > yr.hi) yr = {0, 1};
  xr.pad();
  yr.pad();

  const double pw = L.width - L.margin_left - L.margin_right;
  const double ph = L.height - L.margin_top - L.margin_bottom;
  auto X = [&](double v) { return L.margin_left + (v - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto Y = [&](double v) { return L.margin_top + (yr.hi - v) / (yr.hi - yr.lo) * ph; };
  using detail::fmt;

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << fmt(L.width, 0) << "\" height=\""
    << fmt(L.height, 0) << "\" viewBox=\"0 0 " << fmt(L.width, 0) << ' ' << fmt(L.height, 0) << "\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << fmt(L.width, 0) << "\" height=\"" << fmt(L.height, 0)
    << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << fmt(L.margin_left) << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">"
    << xml_escape(title) << "</text>\n";

  // Frame and ticks.
  o << "<g class=\"axes\" stroke=\"#444\" fill=\"none\">\n";
  o << "<rect x=\"" << fmt(L.margin_left) << "\" y=\"" << fmt(L.margin_top) << "\" width=\"" << fmt(pw)
    << "\" height=\"" << fmt(ph) << "\"/>\n";
  o << "</g>\n<g class=\"ticks\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#444\">\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = xr.lo + k * (xr.hi - xr.lo) / 4;
    const double yv = yr.lo + k * (yr.hi - yr.lo) / 4;
    o << "<text x=\"" << fmt(X(xv)) << "\" y=\"" << fmt(L.margin_top + ph + 14)
      << "\" text-anchor=\"middle\">" << fmt(xv, 3) << "</text>\n";
    o << "<text x=\"" << fmt(L.margin_left - 6) << "\" y=\"" << fmt(Y(yv) + 3) << "\" text-anchor=\"end\">"
      << fmt(yv, 3) << "</text>\n";
  }
  o << "<text x=\"" << fmt(L.margin_left + pw / 2) << "\" y=\"" << fmt(L.height - 12)
    << "\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(x_label) << "</text>\n";
  o << "<text x=\"14\" y=\"" << fmt(L.margin_top + ph / 2) << "\" text-anchor=\"middle\" font-size=\"12\" "
    << "transform=\"rotate(-90 14 " << fmt(L.margin_top + ph / 2) << ")\">" << xml_escape(y_label) << "</text>\n";
  o << "</g>\n";

  for (const auto& s : series) {
    const auto& pts = s.trajectory.points;
    o << "<g class=\"trajectory\" data-run=\"" << xml_escape(s.run) << "\" data-seed=\"" << s.seed << "\">\n";
    const std::size_t n = pts.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const double a = L.min_alpha + (1.0 - L.min_alpha) * static_cast<double>(i + 1) / static_cast<double>(n);
      o << "<line x1=\"" << fmt(X(pts[i].reward)) << "\" y1=\"" << fmt(Y(pts[i].secondary)) << "\" x2=\""
        << fmt(X(pts[i + 1].reward)) << "\" y2=\"" << fmt(Y(pts[i + 1].secondary)) << "\" stroke=\"" << s.color
        << "\" stroke-opacity=\"" << fmt(a, 3) << "\" stroke-width=\"1.2\"/>\n";
    }
    if (n > 0) {
      const auto& f = pts.back();
      o << "<polygon class=\"final\" points=\"" << detail::star_points(X(f.reward), Y(f.secondary), 7)
        << "\" fill=\"" << s.color << "\" stroke=\"black\" stroke-width=\"0.6\"/>\n";
    }
    o << "</g>\n";
  }

  // Legend: one entry per distinct run label.
  std::vector<std::pair<std::string, std::string>> legend;
  for (const auto& s : series)
    if (std::none_of(legend.begin(), legend.end(), [&](const auto& e) { return e.first == s.run; }))
      legend.emplace_back(s.run, s.color);
  o << "<g class=\"legend\" font-family=\"sans-serif\" font-size=\"11\">\n";
  double ly = L.margin_top + 10;
  for (const auto& [run, color] : legend) {
    const double lx = L.width - L.margin_right + 14;
    o << "<rect x=\"" << fmt(lx) << "\" y=\"" << fmt(ly - 8) << "\" width=\"10\" height=\"10\" fill=\"" << color
      << "\"/>\n<text x=\"" << fmt(lx + 16) << "\" y=\"" << fmt(ly + 1) << "\">" << xml_escape(run) << "</text>\n";
    ly += 18;
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

}  // namespace adrpo
