// Static SVG figures: per-patient estimate strips and occlusion curves.
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>

#include "advmil/evaluation.hpp"

namespace advmil {

namespace detail {
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}
}  // namespace detail

/// One row per patient: sampled estimates as small dots, the median as a bar,
/// the observed time as a diamond (hollow when censored).
inline std::string strip_plot_svg(std::span<const PatientEstimate> patients, std::size_t max_rows = 40) {
  const std::size_t n = std::min(patients.size(), max_rows);
  const double left = 110, right = 30, top = 40, row_h = 18, width = 720;
  const double height = top + row_h * static_cast<double>(n) + 50;
  const double plot_w = width - left - right;
  auto x = [&](double t) { return left + std::clamp(t, 0.0, 1.0) * plot_w; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << detail::fmt(height)
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"20\" font-size=\"13\">Sampled time estimates per patient</text>\n";
  for (int i = 0; i <= 10; ++i) {
    const double t = i / 10.0;
    s << "<line x1=\"" << detail::fmt(x(t)) << "\" y1=\"" << top - 6 << "\" x2=\"" << detail::fmt(x(t)) << "\" y2=\""
      << detail::fmt(height - 40) << "\" stroke=\"#eee\"/>\n";
    s << "<text x=\"" << detail::fmt(x(t)) << "\" y=\"" << detail::fmt(height - 26)
      << "\" text-anchor=\"middle\">" << detail::fmt(t) << "</text>\n";
  }
  s << "<text x=\"" << detail::fmt(left + plot_w / 2) << "\" y=\"" << detail::fmt(height - 8)
    << "\" text-anchor=\"middle\">normalized time</text>\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = patients[i];
    const double y = top + row_h * (static_cast<double>(i) + 0.5);
    s << "<text x=\"" << left - 8 << "\" y=\"" << detail::fmt(y + 4) << "\" text-anchor=\"end\">"
      << detail::xml_escape(p.patient_id) << "</text>\n";
    for (double d : p.draws)
      s << "<circle cx=\"" << detail::fmt(x(d)) << "\" cy=\"" << detail::fmt(y) << "\" r=\"2\" fill=\"#4c72b0\" fill-opacity=\"0.5\"/>\n";
    s << "<line x1=\"" << detail::fmt(x(p.median)) << "\" y1=\"" << detail::fmt(y - 6) << "\" x2=\""
      << detail::fmt(x(p.median)) << "\" y2=\"" << detail::fmt(y + 6) << "\" stroke=\"#dd8452\" stroke-width=\"2\"/>\n";
    const double tx = x(p.t);
    s << "<path d=\"M" << detail::fmt(tx) << ' ' << detail::fmt(y - 5) << " L" << detail::fmt(tx + 5) << ' '
      << detail::fmt(y) << " L" << detail::fmt(tx) << ' ' << detail::fmt(y + 5) << " L" << detail::fmt(tx - 5) << ' '
      << detail::fmt(y) << " Z\" stroke=\"#c44e52\" fill=\"" << (p.delta == 0 ? "#c44e52" : "none") << "\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

/// C-Index against mask ratio.
inline std::string occlusion_plot_svg(std::span<const OcclusionPoint> curve) {
  const double left = 60, right = 20, top = 40, bottom = 50, width = 480, height = 340;
  const double pw = width - left - right, ph = height - top - bottom;
  auto x = [&](double r) { return left + r * pw; };
  auto y = [&](double c) { return top + (1.0 - std::clamp(c, 0.0, 1.0)) * ph; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"22\" font-size=\"13\">C-Index under region occlusion</text>\n";
  for (int i = 0; i <= 10; ++i) {
    const double v = i / 10.0;
    s << "<line x1=\"" << left << "\" y1=\"" << detail::fmt(y(v)) << "\" x2=\"" << width - right << "\" y2=\""
      << detail::fmt(y(v)) << "\" stroke=\"#eee\"/>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << detail::fmt(y(v) + 4) << "\" text-anchor=\"end\">" << detail::fmt(v)
      << "</text>\n";
    s << "<text x=\"" << detail::fmt(x(v)) << "\" y=\"" << height - bottom + 16 << "\" text-anchor=\"middle\">"
      << detail::fmt(v) << "</text>\n";
  }
  s << "<text x=\"" << detail::fmt(left + pw / 2) << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">mask ratio</text>\n";
  if (!curve.empty()) {
    s << "<polyline fill=\"none\" stroke=\"#4c72b0\" stroke-width=\"2\" points=\"";
    for (const auto& p : curve) s << detail::fmt(x(p.mask_ratio)) << ',' << detail::fmt(y(p.c_index)) << ' ';
    s << "\"/>\n";
    for (const auto& p : curve)
      s << "<circle cx=\"" << detail::fmt(x(p.mask_ratio)) << "\" cy=\"" << detail::fmt(y(p.c_index))
        << "\" r=\"3\" fill=\"#4c72b0\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline void write_strip_plot(std::span<const PatientEstimate> patients, const std::filesystem::path& path) {
  detail::write_text(path, strip_plot_svg(patients));
}

inline void write_occlusion_plot(std::span<const OcclusionPoint> curve, const std::filesystem::path& path) {
  detail::write_text(path, occlusion_plot_svg(curve));
}

}  // namespace advmil
