#include "poseforge/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace poseforge {

namespace {

constexpr double kPanelW = 360, kPanelH = 240, kMargin = 44;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void axes(std::ostringstream& svg, double ox, const char* title, const char* ylabel, double ymax) {
  const double x0 = ox + kMargin, y0 = kPanelH - kMargin, x1 = ox + kPanelW - 10, y1 = 30;
  svg << "<text x=\"" << num(ox + kPanelW / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << title
      << "</text>\n";
  svg << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x1) << "\" y2=\"" << num(y0)
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x0) << "\" y2=\"" << num(y1)
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 180; t += 30) {
    const double x = x0 + (x1 - x0) * t / 180.0;
    svg << "<text x=\"" << num(x) << "\" y=\"" << num(y0 + 14) << "\" text-anchor=\"middle\" font-size=\"10\">" << t
        << "</text>\n";
  }
  svg << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(y0 + 30)
      << "\" text-anchor=\"middle\" font-size=\"11\">rotation error (deg)</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = y0 - (y0 - y1) * k / 4.0;
    svg << "<text x=\"" << num(x0 - 4) << "\" y=\"" << num(y + 3) << "\" text-anchor=\"end\" font-size=\"10\">"
        << num(ymax * k / 4.0) << "</text>\n";
  }
  svg << "<text x=\"" << num(ox + 10) << "\" y=\"" << num((y0 + y1) / 2) << "\" font-size=\"11\" transform=\"rotate(-90 "
      << num(ox + 10) << " " << num((y0 + y1) / 2) << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
}

}  // namespace

std::string report_svg(const nlohmann::json& report) {
  std::vector<double> errors;
  for (const auto& s : report.at("per_sample")) errors.push_back(s.at("error_deg").get<double>());
  if (errors.empty()) throw std::runtime_error("plot: report has no samples");
  std::sort(errors.begin(), errors.end());
  const double n = static_cast<double>(errors.size());

  std::vector<int> hist(18, 0);
  for (double e : errors) ++hist[std::min(17, static_cast<int>(e / 10.0))];
  const int peak = *std::max_element(hist.begin(), hist.end());

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * kPanelW << "\" height=\"" << kPanelH
      << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  const double x0 = kMargin, x1 = kPanelW - 10, y0 = kPanelH - kMargin, y1 = 30;
  axes(svg, 0, "Error histogram", "samples", peak);
  for (int b = 0; b < 18; ++b) {
    const double bx = x0 + (x1 - x0) * b / 18.0, bw = (x1 - x0) / 18.0;
    const double bh = peak ? (y0 - y1) * hist[b] / peak : 0.0;
    svg << "<rect x=\"" << num(bx + 1) << "\" y=\"" << num(y0 - bh) << "\" width=\"" << num(bw - 2) << "\" height=\""
        << num(bh) << "\" fill=\"" << (b < 3 ? "#3a7d44" : "#8a8a8a") << "\"/>\n";
  }

  const double ox = kPanelW;
  axes(svg, ox, "Accuracy vs threshold", "accuracy", 1.0);
  svg << "<polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"1.5\" points=\"";
  for (int t = 0; t <= 180; ++t) {
    // Strictly below the threshold, as for Acc pi/6.
    const double acc = static_cast<double>(std::lower_bound(errors.begin(), errors.end(), t) - errors.begin()) / n;
    svg << num(ox + x0 + (x1 - x0) * t / 180.0) << "," << num(y0 - (y0 - y1) * acc) << (t < 180 ? " " : "");
  }
  svg << "\"/>\n";
  const double xt = ox + x0 + (x1 - x0) * 30.0 / 180.0;
  svg << "<line x1=\"" << num(xt) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(xt) << "\" y2=\"" << num(y1)
      << "\" stroke=\"#c0392b\" stroke-dasharray=\"4 3\"/>\n";
  const auto& agg = report.at("aggregate");
  svg << "<text x=\"" << num(xt + 4) << "\" y=\"" << num(y1 + 12) << "\" font-size=\"10\" fill=\"#c0392b\">Acc pi/6 = "
      << num(agg.at("acc_pi6").get<double>()) << ", MedErr = " << num(agg.at("mederr_deg").get<double>())
      << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace poseforge
