#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "covkl/errors.hpp"
#include "covkl/harness/experiment.hpp"
#include "covkl/matrix_io.hpp"

namespace covkl::harness {

inline constexpr const char* kCsvHeader =
    "experiment,run_index,grid_value,estimator,kl_mean,kl_std_error,wall_time_ms,seed";

/// Results table as CSV. Wall times are written only when `include_timing`
/// is set (otherwise 0), keeping seeded outputs byte-identical.
inline void emit_csv(std::ostream& os, const RunTable& table, bool include_timing = false) {
  if (table.empty()) throw InvalidArgument("emit_csv: empty table");
  os << kCsvHeader << "\n";
  for (const auto& r : table) {
    os << r.experiment << ',' << r.run_index << ',' << io::format_double(r.grid_value) << ',' << r.estimator << ','
       << io::format_double(r.kl_mean) << ',' << io::format_double(r.kl_std_error) << ','
       << (include_timing ? io::format_double(r.wall_time_ms) : std::string("0")) << ',' << r.seed << "\n";
  }
}

inline void emit_csv(const std::string& path, const RunTable& table, bool include_timing = false) {
  if (table.empty()) throw InvalidArgument("emit_csv: empty table");
  std::ofstream os(path);
  if (!os) throw InvalidArgument("emit_csv: cannot write '" + path + "'");
  emit_csv(os, table, include_timing);
  if (!os) throw InvalidArgument("emit_csv: write to '" + path + "' failed");
}

/// Per-task wall-clock times: run_index,grid_value,wall_time_ms.
inline void emit_timing_csv(const std::string& path, const RunTable& table) {
  std::ofstream os(path);
  if (!os) throw InvalidArgument("emit_timing_csv: cannot write '" + path + "'");
  os << "run_index,grid_value,wall_time_ms\n";
  long last_run = -2;
  double last_grid = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : table) {
    if (r.run_index < 0) continue;
    if (r.run_index == last_run && r.grid_value == last_grid) continue;
    last_run = r.run_index;
    last_grid = r.grid_value;
    os << r.run_index << ',' << io::format_double(r.grid_value) << ',' << io::format_double(r.wall_time_ms) << "\n";
  }
}

namespace detail {

struct SvgPoint {
  double x, y, err;
};

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

/// Line plot of kl_mean against grid_value, one polyline per estimator with
/// +-kl_std_error bars. Uses aggregate rows when the table has any.
inline void emit_svg(std::ostream& os, const RunTable& table, const std::string& title = "") {
  if (table.empty()) throw InvalidArgument("emit_svg: empty table");
  const bool has_agg = std::any_of(table.begin(), table.end(), [](const RunRecord& r) { return r.run_index < 0; });
  std::vector<std::string> order;
  std::map<std::string, std::vector<detail::SvgPoint>> series;
  for (const auto& r : table) {
    if (has_agg != (r.run_index < 0) || is_marker(r.estimator)) continue;
    if (!std::isfinite(r.kl_mean) || !std::isfinite(r.grid_value)) continue;
    if (!series.count(r.estimator)) order.push_back(r.estimator);
    series[r.estimator].push_back({r.grid_value, r.kl_mean, std::isfinite(r.kl_std_error) ? r.kl_std_error : 0.0});
  }
  for (auto& [_, pts] : series)
    std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.x < b.x; });

  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& [_, pts] : series)
    for (const auto& p : pts) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y - p.err);
      ymax = std::max(ymax, p.y + p.err);
    }
  if (series.empty()) xmin = xmax = ymin = ymax = 0.0;
  const bool logx = xmin > 0.0 && xmax / xmin >= 20.0;
  auto tx = [&](double x) { return logx ? std::log10(x) : x; };
  double x0 = tx(xmin), x1 = tx(xmax);
  if (x1 - x0 <= 0.0) { x0 -= 0.5; x1 += 0.5; }
  if (ymax - ymin <= 0.0) { ymin -= 0.5; ymax += 0.5; }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  constexpr double W = 720, H = 480, L = 80, R = 200, T = 40, B = 60;
  auto px = [&](double x) { return L + (tx(x) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
     << detail::svg_escape(title) << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fy = ymin + (ymax - ymin) * i / 4.0;
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double xv = logx ? std::pow(10.0, fx) : fx;
    std::ostringstream lx, ly;
    lx.precision(3);
    ly.precision(3);
    lx << xv;
    ly << fy;
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       << "font-size=\"11\">" << lx.str() << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
       << "font-size=\"11\">" << ly.str() << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 16 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
     << "font-size=\"12\">grid value" << (logx ? " (log scale)" : "") << "</text>\n";

  for (std::size_t s = 0; s < order.size(); ++s) {
    const auto& pts = series[order[s]];
    const char* color = palette[s % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : pts) os << px(p.x) << ',' << py(p.y) << ' ';
    os << "\"/>\n";
    for (const auto& p : pts) {
      os << "<circle cx=\"" << px(p.x) << "\" cy=\"" << py(p.y) << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
      if (p.err > 0.0)
        os << "<line x1=\"" << px(p.x) << "\" y1=\"" << py(p.y - p.err) << "\" x2=\"" << px(p.x) << "\" y2=\""
           << py(p.y + p.err) << "\" stroke=\"" << color << "\"/>\n";
    }
    const double ly = T + 16.0 * static_cast<double>(s);
    os << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
       << detail::svg_escape(order[s]) << "</text>\n";
  }
  os << "</svg>\n";
}

inline void emit_svg(const std::string& path, const RunTable& table, const std::string& title = "") {
  if (table.empty()) throw InvalidArgument("emit_svg: empty table");
  std::ofstream os(path);
  if (!os) throw InvalidArgument("emit_svg: cannot write '" + path + "'");
  emit_svg(os, table, title);
}

}  // namespace covkl::harness
