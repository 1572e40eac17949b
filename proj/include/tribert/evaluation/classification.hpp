#pragma once

#include "tribert/model/model.hpp"

namespace tribert::eval {

/// Video-level mean average precision per stream; each scene hears its own audio.
struct ClassificationReport {
  double vision = 0, pose = 0, audio = 0;
  std::size_t scenes = 0;
};

ClassificationReport evaluate_classification(model::Model& m, const synth::Dataset& ds,
                                             const std::vector<model::SceneInputs>& inputs,
                                             const std::vector<std::size_t>& scenes);

}  // namespace tribert::eval
