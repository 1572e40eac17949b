#include "tribert/evaluation/classification.hpp"

#include "tribert/evaluation/separation.hpp"

namespace tribert::eval {

ClassificationReport evaluate_classification(model::Model& m, const synth::Dataset& ds,
                                             const std::vector<model::SceneInputs>& inputs,
                                             const std::vector<std::size_t>& scenes) {
  std::vector<std::vector<double>> v, p, a;
  std::vector<std::vector<bool>> labels;
  for (std::size_t i : scenes) {
    const auto s = model::classify_scene(m, inputs.at(i), ds.scenes.at(i).scene.audio);
    v.push_back(s.vision);
    p.push_back(s.pose);
    a.push_back(s.audio);
    std::vector<bool> l;
    for (double x : inputs[i].labels.data) l.push_back(x > 0.5);
    labels.push_back(std::move(l));
  }
  return {mean_average_precision(v, labels), mean_average_precision(p, labels), mean_average_precision(a, labels),
          scenes.size()};
}

}  // namespace tribert::eval
