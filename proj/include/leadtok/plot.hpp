#pragma once

// Static SVG charts written next to the CSVs: leading-word counts (bars)
// with mean confidence (line) per class, and per-class density histograms.
// CSV stays the source of truth; these are for eyeballing.

#include "leadtok/stats.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace leadtok {

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline const char* class_color(ReflectionClass c) {
  switch (c) {
    case ReflectionClass::SelfAffirmation: return "#d62728";
    case ReflectionClass::OtherReflection: return "#1f77b4";
    case ReflectionClass::NonReflective: return "#7f7f7f";
  }
  return "#000";
}

}  // namespace detail

/// One panel per class: bars are counts (left axis), dots+line are mean confidence (right axis, 0..1).
inline void write_leading_word_svg(std::ostream& out, std::span<const LeadingWordStat> table, const std::string& title) {
  constexpr double panel_w = 420, panel_h = 260, margin = 50;
  const double width = margin + 3 * (panel_w + margin);
  const double height = panel_h + 2 * margin + 60;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << margin << "\" y=\"20\" font-size=\"14\">" << detail::xml_escape(title) << "</text>\n";
  std::size_t panel = 0;
  for (auto cls : kAllClasses) {
    std::vector<LeadingWordStat> rows;
    for (const auto& r : table)
      if (r.cls == cls) rows.push_back(r);
    const double x0 = margin + static_cast<double>(panel++) * (panel_w + margin), y0 = margin;
    out << "<g>\n<text x=\"" << x0 << "\" y=\"" << y0 - 8 << "\">" << class_code(cls) << " (" << rows.size()
        << " words)</text>\n";
    out << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << panel_w << "\" height=\"" << panel_h
        << "\" fill=\"none\" stroke=\"#ccc\"/>\n";
    std::size_t max_count = 1;
    for (const auto& r : rows) max_count = std::max(max_count, r.count);
    const double slot = rows.empty() ? panel_w : panel_w / static_cast<double>(rows.size());
    std::string line;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      const double bh = panel_h * static_cast<double>(r.count) / static_cast<double>(max_count);
      const double bx = x0 + slot * static_cast<double>(i) + slot * 0.15;
      out << "<rect x=\"" << detail::num(bx) << "\" y=\"" << detail::num(y0 + panel_h - bh) << "\" width=\""
          << detail::num(slot * 0.7) << "\" height=\"" << detail::num(bh) << "\" fill=\"" << detail::class_color(cls)
          << "\" fill-opacity=\"0.6\"><title>" << detail::xml_escape(r.word) << ": " << r.count << "</title></rect>\n";
      const double cx = x0 + slot * (static_cast<double>(i) + 0.5);
      const double cy = y0 + panel_h * (1.0 - std::clamp(r.mean_confidence, 0.0, 1.0));
      line += (line.empty() ? "" : " ") + detail::num(cx) + "," + detail::num(cy);
      out << "<circle cx=\"" << detail::num(cx) << "\" cy=\"" << detail::num(cy) << "\" r=\"3\" fill=\"black\"/>\n";
      out << "<text x=\"" << detail::num(cx) << "\" y=\"" << y0 + panel_h + 14
          << "\" text-anchor=\"end\" transform=\"rotate(-45 " << detail::num(cx) << ' ' << y0 + panel_h + 14 << ")\">"
          << detail::xml_escape(r.word) << "</text>\n";
    }
    if (!line.empty()) out << "<polyline points=\"" << line << "\" fill=\"none\" stroke=\"black\"/>\n";
    out << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 + 4 << "\" text-anchor=\"end\">" << max_count << "</text>\n";
    out << "<text x=\"" << x0 + panel_w + 4 << "\" y=\"" << y0 + 4 << "\">1.0</text>\n";
    out << "<text x=\"" << x0 + panel_w + 4 << "\" y=\"" << y0 + panel_h << "\">0.0</text>\n</g>\n";
  }
  out << "</svg>\n";
}

/// Overlaid per-class histograms of one token's leading-word probability.
inline void write_density_svg(std::ostream& out, std::span<const DensityHistogram> hists, const std::string& title) {
  constexpr double w = 520, h = 280, margin = 50;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w + 2 * margin << "\" height=\"" << h + 2 * margin + 20
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << margin << "\" y=\"20\" font-size=\"14\">" << detail::xml_escape(title) << "</text>\n";
  out << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << w << "\" height=\"" << h
      << "\" fill=\"none\" stroke=\"#ccc\"/>\n";
  double max_mass = 1e-12;
  for (const auto& hist : hists)
    for (double m : hist.bin_mass) max_mass = std::max(max_mass, m);
  std::size_t legend = 0;
  for (const auto& hist : hists) {
    std::string pts;
    for (std::size_t b = 0; b < hist.bin_mass.size(); ++b) {
      const double xl = margin + w * hist.bin_edges[b], xr = margin + w * hist.bin_edges[b + 1];
      const double y = margin + h * (1.0 - hist.bin_mass[b] / max_mass);
      pts += detail::num(xl) + "," + detail::num(y) + " " + detail::num(xr) + "," + detail::num(y) + " ";
    }
    out << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << detail::class_color(hist.cls)
        << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << margin + w - 120 << "\" y=\"" << margin + 16 + 14 * static_cast<double>(legend++)
        << "\" fill=\"" << detail::class_color(hist.cls) << "\">" << class_code(hist.cls) << " n=" << hist.count
        << " com=" << detail::num(hist.center_of_mass()) << "</text>\n";
  }
  for (int t = 0; t <= 10; t += 2)
    out << "<text x=\"" << margin + w * t / 10.0 << "\" y=\"" << margin + h + 14 << "\" text-anchor=\"middle\">"
        << detail::num(t / 10.0) << "</text>\n";
  out << "</svg>\n";
}

}  // namespace leadtok
