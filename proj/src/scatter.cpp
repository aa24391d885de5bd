#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sfkit/bench.hpp"

namespace sfkit {

namespace {

void emit_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw EvalError("cannot write " + path);
  out << "sample_id,n_base,n_refined,aki\n";
  for (const auto& s : report.samples)
    out << s.sample_id << "," << s.n_base << "," << s.n_refined << "," << s.aki << "\n";
}

void emit_svg(const EvalReport& report, const std::string& path) {
  constexpr int kSize = 480;        // plot area, square
  constexpr int kMarginL = 56, kMarginB = 44, kMarginT = 16, kMarginR = 16;
  const int width = kMarginL + kSize + kMarginR;
  const int height = kMarginT + kSize + kMarginB;

  int vmax = 10;
  for (const auto& s : report.samples) vmax = std::max({vmax, s.n_base, s.n_refined});
  // Round the axis limit up to a tidy tick step.
  int step = 5000;
  for (int candidate : {1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000}) {
    if (vmax / candidate <= 8) {
      step = candidate;
      break;
    }
  }
  const int limit = ((vmax + step - 1) / step) * step;

  auto px = [&](double v) { return kMarginL + v / limit * kSize; };
  auto py = [&](double v) { return kMarginT + kSize - v / limit * kSize; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height
      << "\">\n";
  svg << "<rect x=\"" << kMarginL << "\" y=\"" << kMarginT << "\" width=\"" << kSize
      << "\" height=\"" << kSize << "\" fill=\"white\" stroke=\"#333\"/>\n";

  // Shade the improvement region (above the y = x line).
  svg << "<polygon points=\"" << px(0) << "," << py(0) << " " << px(limit) << ","
      << py(limit) << " " << px(0) << "," << py(limit)
      << "\" fill=\"#d8f0d8\" fill-opacity=\"0.6\"/>\n";

  // Axis ticks and grid.
  for (int v = 0; v <= limit; v += step) {
    svg << "<line x1=\"" << px(v) << "\" y1=\"" << py(0) << "\" x2=\"" << px(v)
        << "\" y2=\"" << py(0) + 4 << "\" stroke=\"#333\"/>\n";
    svg << "<text x=\"" << px(v) << "\" y=\"" << py(0) + 18
        << "\" font-size=\"11\" text-anchor=\"middle\">" << v << "</text>\n";
    svg << "<line x1=\"" << px(0) - 4 << "\" y1=\"" << py(v) << "\" x2=\"" << px(0)
        << "\" y2=\"" << py(v) << "\" stroke=\"#333\"/>\n";
    svg << "<text x=\"" << px(0) - 7 << "\" y=\"" << py(v) + 4
        << "\" font-size=\"11\" text-anchor=\"end\">" << v << "</text>\n";
  }
  svg << "<text x=\"" << kMarginL + kSize / 2 << "\" y=\"" << height - 8
      << "\" font-size=\"13\" text-anchor=\"middle\">matches before refinement</text>\n";
  svg << "<text x=\"14\" y=\"" << kMarginT + kSize / 2
      << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << kMarginT + kSize / 2 << ")\">matches after refinement</text>\n";

  // Dashed y = x reference.
  svg << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(limit)
      << "\" y2=\"" << py(limit)
      << "\" stroke=\"#cc2222\" stroke-dasharray=\"6,4\" stroke-width=\"1.5\"/>\n";

  for (const auto& s : report.samples) {
    svg << "<circle cx=\"" << px(s.n_base) << "\" cy=\"" << py(s.n_refined)
        << "\" r=\"2.5\" fill=\"#1f4e8c\" fill-opacity=\"0.75\"/>\n";
  }
  svg << "</svg>\n";

  std::ofstream out(path);
  if (!out) throw EvalError("cannot write " + path);
  out << svg.str();
}

}  // namespace

void emit_scatter(const EvalReport& report, const std::string& path,
                  ScatterFormat format) {
  if (report.samples.empty()) throw EvalError("emit_scatter: report has no samples");
  if (format == ScatterFormat::kCsv)
    emit_csv(report, path);
  else
    emit_svg(report, path);
}

}  // namespace sfkit
