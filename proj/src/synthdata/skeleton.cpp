#include "tribert/synthdata/skeleton.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace tribert::synth {

extern const char* const kSkeletonEdgesCsv;  // generated from resources/skeleton_edges.csv

std::vector<Edge> parse_edge_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<Edge> edges;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "a,b") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("skeleton csv line " + std::to_string(lineno) + ": expected a,b");
    const std::size_t a = std::stoul(line.substr(0, comma)), b = std::stoul(line.substr(comma + 1));
    if (a >= kJoints || b >= kJoints || a == b)
      throw std::runtime_error("skeleton csv line " + std::to_string(lineno) + ": bad joint pair");
    edges.emplace_back(a, b);
  }
  return edges;
}

std::vector<Edge> load_edge_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_edge_csv(ss.str());
}

const std::string& skeleton_csv() {
  static const std::string text = kSkeletonEdgesCsv;
  return text;
}

const std::vector<Edge>& skeleton_edges() {
  static const std::vector<Edge> edges = parse_edge_csv(skeleton_csv());
  return edges;
}

const std::array<std::array<double, 2>, kJoints>& rest_pose() {
  static const auto pose = [] {
    std::array<std::array<double, 2>, kJoints> p{};
    const double body[kBodyJoints][2] = {
        {0.00, -0.80}, {-0.03, -0.83}, {0.03, -0.83}, {-0.06, -0.81}, {0.06, -0.81}, {-0.15, -0.62}, {0.15, -0.62},
        {-0.22, -0.40}, {0.22, -0.40}, {-0.18, -0.22}, {0.18, -0.22}, {-0.09, 0.00}, {0.09, 0.00}, {-0.10, 0.25},
        {0.10, 0.25}, {-0.10, 0.48}, {0.10, 0.48}, {0.00, -0.95}, {0.00, -0.65}, {0.00, 0.00}, {-0.13, 0.52},
        {0.13, 0.52}, {-0.15, 0.51}, {0.15, 0.51}, {-0.09, 0.50}, {0.09, 0.50}};
    for (std::size_t j = 0; j < kBodyJoints; ++j) p[j] = {body[j][0], body[j][1]};
    for (int side = 0; side < 2; ++side) {
      const std::size_t wrist = side == 0 ? kLeftWrist : kRightWrist;
      const std::size_t root = side == 0 ? kLeftHandRoot : kRightHandRoot;
      const double sx = side == 0 ? -1.0 : 1.0;
      p[root] = {p[wrist][0] + 0.01 * sx, p[wrist][1] + 0.02};
      for (int f = 0; f < 5; ++f) {
        const double theta = std::numbers::pi / 2 - sx * (0.5 - 0.25 * f);
        const double dx = std::cos(theta), dy = std::sin(theta);
        for (int k = 0; k < 4; ++k)
          p[root + 1 + 4 * f + k] = {p[root][0] + 0.02 * (k + 1.5) * dx, p[root][1] + 0.02 * (k + 1.5) * dy};
      }
    }
    return p;
  }();
  return pose;
}

}  // namespace tribert::synth
