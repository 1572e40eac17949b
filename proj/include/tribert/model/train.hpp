#pragma once

#include <functional>

#include "tribert/model/model.hpp"

namespace tribert::model {

struct TrainOptions {
  std::size_t steps = 2000;
  std::size_t batch = 1;
  double lr = 5e-4;
  double multi_source_fraction = 0.2;  // pairs whose first scene is a duet
  std::uint64_t seed = 1;
};

/// Pairs for one step: a pure function of (seed, step, dataset), so resumed
/// runs see the same data as uninterrupted ones.
std::vector<synth::MixPair> training_batch(const synth::Dataset& ds, const std::vector<std::size_t>& pool,
                                           const TrainOptions& opts, std::size_t step);

struct TrainState {
  Model model;
  AdamState adam;
  std::size_t step = 0;  // steps completed
};

using StepCallback = std::function<void(std::size_t step, const LossBundle&)>;

/// Runs steps [state.step, until) on the train split.
void train(TrainState& state, const synth::Dataset& ds, const std::vector<SceneInputs>& inputs,
           const TrainOptions& opts, std::size_t until, const StepCallback& on_step = {});

Checkpoint training_checkpoint(const TrainState& state);
TrainState resume_from(const Checkpoint& ckpt);

}  // namespace tribert::model
