#pragma once

// Metrics JSONL to per-metric CSV tables and SVG line charts. Several runs
// (for example one per K) share each chart's axes, one curve per run.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmlabel/error.hpp"

namespace gmlabel::harness {

struct MetricSeries {
  std::string label;
  std::vector<nlohmann::json> records;
};

inline std::vector<nlohmann::json> read_metrics_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open");
  std::vector<nlohmann::json> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("step") || !j["step"].is_number())
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": not a metrics record");
    out.push_back(std::move(j));
  }
  return out;
}

inline const std::vector<std::string>& plotted_metrics() {
  static const std::vector<std::string> m = {"l_gm", "l_g", "l_l", "val_miou", "val_fg_miou", "grad_norm"};
  return m;
}

struct PlotFiles {
  std::vector<std::filesystem::path> csv;
  std::vector<std::filesystem::path> svg;
};

namespace detail {

using Curve = std::vector<std::pair<double, double>>;

inline Curve extract(const MetricSeries& s, const std::string& metric) {
  Curve c;
  for (const auto& r : s.records)
    if (r.contains(metric) && r[metric].is_number()) c.emplace_back(r["step"].get<double>(), r[metric].get<double>());
  return c;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return colors[i % 8];
}

inline std::string svg_chart(const std::string& metric, const std::vector<std::string>& labels, const std::vector<Curve>& curves) {
  const double W = 640, H = 400, L = 70, R = 150, T = 30, B = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& c : curves)
    for (auto [x, y] : c) {
      if (!std::isfinite(y)) continue;
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (!(x1 >= x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\">" << metric << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << fmt(std::round(xv)) << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(std::round(yv * 1e4) / 1e4)
       << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">step</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    os << "<polyline fill=\"none\" stroke=\"" << palette(i) << "\" stroke-width=\"1.5\" points=\"";
    for (auto [x, y] : curves[i])
      if (std::isfinite(y)) os << px(x) << ',' << py(y) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (i + 1) << "\" fill=\"" << palette(i) << "\">" << labels[i]
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace detail

// Writes <metric>.csv (step column plus one column per series) and
// <metric>.svg for every metric present in at least one series.
inline PlotFiles plot_metrics(const std::vector<MetricSeries>& series, const std::filesystem::path& out_dir,
                              const std::vector<std::string>& metrics = plotted_metrics()) {
  if (series.empty()) throw ConfigError("plot: no metrics series given");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir.string() + ": " + ec.message());
  PlotFiles files;
  std::vector<std::string> labels;
  for (const auto& s : series) labels.push_back(s.label);
  for (const auto& m : metrics) {
    std::vector<detail::Curve> curves;
    bool any = false;
    for (const auto& s : series) {
      curves.push_back(detail::extract(s, m));
      any = any || !curves.back().empty();
    }
    if (!any) continue;
    std::map<double, std::vector<std::string>> table;
    for (std::size_t i = 0; i < curves.size(); ++i)
      for (auto [x, y] : curves[i]) {
        auto& row = table[x];
        row.resize(curves.size());
        row[i] = detail::fmt(y);
      }
    std::ostringstream csv;
    csv << "step";
    for (const auto& l : labels) csv << ',' << l;
    csv << '\n';
    for (auto& [x, row] : table) {
      row.resize(curves.size());
      csv << detail::fmt(x);
      for (const auto& v : row) csv << ',' << v;
      csv << '\n';
    }
    const auto csv_path = out_dir / (m + ".csv"), svg_path = out_dir / (m + ".svg");
    std::ofstream(csv_path, std::ios::binary) << csv.str();
    std::ofstream(svg_path, std::ios::binary) << detail::svg_chart(m, labels, curves);
    if (!std::filesystem::exists(csv_path) || !std::filesystem::exists(svg_path))
      throw IoError(out_dir.string() + ": cannot write plot files");
    files.csv.push_back(csv_path);
    files.svg.push_back(svg_path);
  }
  return files;
}

}  // namespace gmlabel::harness
