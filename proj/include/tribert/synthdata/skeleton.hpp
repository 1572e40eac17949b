#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace tribert::synth {

inline constexpr std::size_t kBodyJoints = 26;
inline constexpr std::size_t kHandJoints = 21;
inline constexpr std::size_t kJoints = kBodyJoints + 2 * kHandJoints;  // 68

inline constexpr std::size_t kLeftWrist = 9, kRightWrist = 10, kLeftElbow = 7, kRightElbow = 8;
inline constexpr std::size_t kLeftHandRoot = 26, kRightHandRoot = 47;

using Edge = std::pair<std::size_t, std::size_t>;

/// Body tree plus two 21-node hand fans, parsed from the bundled CSV resource.
const std::vector<Edge>& skeleton_edges();
std::vector<Edge> parse_edge_csv(const std::string& text);
std::vector<Edge> load_edge_csv(const std::filesystem::path& path);
/// The bundled resource text ("a,b" header, one edge per line).
const std::string& skeleton_csv();

/// Rest pose in person-height units, y pointing down, origin at the hip centre.
const std::array<std::array<double, 2>, kJoints>& rest_pose();

}  // namespace tribert::synth
