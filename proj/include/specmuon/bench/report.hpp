#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "specmuon/diagnostics.hpp"
#include "specmuon/errors.hpp"

namespace specmuon::bench {

inline constexpr const char* kCsvHeader =
    "iter,loss,grad_fro,modified_energy,dissipation_lhs,dissipation_rhs,step_fro,min_r,max_xi,eta_condition_ok,wall_ns";

/// Shortest round-trip decimal form; "nan" and "inf" for non-finite values.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string csv_row(const TrajectoryRecord& r) {
  std::string s = std::to_string(r.iter);
  for (double v : {r.loss, r.grad_fro, r.modified_energy, r.dissipation_lhs, r.dissipation_rhs, r.step_fro, r.min_r,
                   r.max_xi()}) {
    s += ',';
    s += format_double(v);
  }
  // 1 held, 0 violated, -1 not applicable
  s += ',';
  s += r.eta_condition_ok ? (*r.eta_condition_ok ? "1" : "0") : "-1";
  s += ',';
  s += std::to_string(r.wall_ns);
  return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("write failed: " + path.string());
}

inline void write_csv(const std::filesystem::path& path, std::span<const TrajectoryRecord> records) {
  std::string text = kCsvHeader;
  text += '\n';
  for (const auto& r : records) {
    text += csv_row(r);
    text += '\n';
  }
  write_text(path, text);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  for (double x : xs) out.std += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(out.std / static_cast<double>(xs.size()));
  return out;
}

struct PlotSeries {
  std::string label;
  std::vector<double> values;  // one per iteration
};

// ---------------------------------------------------------------------------
// Minimal SVG: log10 y axis, linear x axis, one polyline per series, legend.

inline std::string svg_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& y_label) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  constexpr double width = 720, height = 440, left = 70, right = 170, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t n_max = 1;
  for (const auto& s : series) {
    n_max = std::max(n_max, s.values.size());
    for (double v : s.values) {
      if (v > 0.0 && std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!std::isfinite(lo)) lo = hi = 1.0;
  double y0 = std::floor(std::log10(lo)), y1 = std::ceil(std::log10(hi));
  if (y1 <= y0) y1 = y0 + 1.0;
  const double x_span = n_max > 1 ? static_cast<double>(n_max - 1) : 1.0;

  auto fmt = [](const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return std::string(buf);
  };
  auto px = [&](double i) { return left + pw * i / x_span; };
  auto py = [&](double v) {
    const double l = v > 0.0 && std::isfinite(v) ? std::log10(v) : y0;
    return top + ph * (1.0 - (std::clamp(l, y0, y1) - y0) / (y1 - y0));
  };

  std::string s = fmt("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" font-family=\"sans-serif\" font-size=\"12\">\n", width, height);
  s += fmt("<rect width=\"%.0f\" height=\"%.0f\" fill=\"white\"/>\n", width, height);
  s += fmt("<text x=\"%.1f\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">", left + pw / 2) + title + "</text>\n";
  s += fmt("<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n", left, top, pw, ph);
  for (double e = y0; e <= y1; e += 1.0) {
    const double y = top + ph * (1.0 - (e - y0) / (y1 - y0));
    s += fmt("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n", left, y, left + pw, y);
    s += fmt("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">1e%d</text>\n", left - 6, y + 4, static_cast<int>(e));
  }
  for (int t = 0; t <= 4; ++t) {
    const double i = x_span * t / 4.0;
    s += fmt("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.0f</text>\n", px(i), top + ph + 16, i);
  }
  s += fmt("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">iteration</text>\n", left + pw / 2, height - 12);
  s += fmt("<text x=\"16\" y=\"%.1f\" text-anchor=\"middle\" transform=\"rotate(-90 16 %.1f)\">", top + ph / 2, top + ph / 2) +
       y_label + "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& v = series[k].values;
    const char* color = colors[k % std::size(colors)];
    const std::size_t stride = std::max<std::size_t>(1, v.size() / 1500);
    s += fmt("<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"1.5\" points=\"", color);
    for (std::size_t i = 0; i < v.size(); i += stride) s += fmt("%.1f,%.1f ", px(static_cast<double>(i)), py(v[i]));
    if (!v.empty() && (v.size() - 1) % stride != 0)
      s += fmt("%.1f,%.1f", px(static_cast<double>(v.size() - 1)), py(v.back()));
    s += "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    s += fmt("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"2\"/>\n", left + pw + 12, ly,
             left + pw + 36, ly, color);
    s += fmt("<text x=\"%.1f\" y=\"%.1f\">", left + pw + 42, ly + 4) + series[k].label + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

/// Geometric mean across runs at each iteration, over the common length.
inline std::vector<double> geometric_mean(const std::vector<std::vector<double>>& runs) {
  if (runs.empty()) return {};
  std::size_t n = runs.front().size();
  for (const auto& r : runs) n = std::min(n, r.size());
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (const auto& r : runs) s += std::log(std::max(r[i], std::numeric_limits<double>::min()));
    out[i] = std::exp(s / static_cast<double>(runs.size()));
  }
  return out;
}

}  // namespace specmuon::bench
