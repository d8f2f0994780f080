#pragma once

#include <nlohmann/json.hpp>

#include <string>

namespace poseforge {

/// Two-panel SVG for an evaluation report: a histogram of per-sample
/// rotation errors in 10 degree bins and the accuracy-vs-threshold curve,
/// with the 30 degree threshold marked.
std::string report_svg(const nlohmann::json& report);

}  // namespace poseforge
