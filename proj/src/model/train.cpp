#include "tribert/model/train.hpp"

#include <stdexcept>

namespace tribert::model {

std::vector<synth::MixPair> training_batch(const synth::Dataset& ds, const std::vector<std::size_t>& pool,
                                           const TrainOptions& opts, std::size_t step) {
  bool have_duets = false;
  for (auto i : pool) have_duets = have_duets || ds.scenes.at(i).scene.duet();
  std::vector<synth::MixPair> batch;
  for (std::size_t b = 0; b < opts.batch; ++b) {
    const std::uint64_t key = step * opts.batch + b;
    const bool multi = have_duets && counter_uniform(opts.seed, site_id("train.multi"), key, 0) < opts.multi_source_fraction;
    batch.push_back(synth::sample_mix_pair(ds, pool, hash_combine(opts.seed, key), multi));
  }
  return batch;
}

void train(TrainState& state, const synth::Dataset& ds, const std::vector<SceneInputs>& inputs,
           const TrainOptions& opts, std::size_t until, const StepCallback& on_step) {
  const auto pool = ds.split_indices("train");
  for (; state.step < until; ++state.step) {
    const auto batch = training_batch(ds, pool, opts, state.step);
    const LossBundle l = joint_step(state.model, state.adam, batch, inputs, opts.lr,
                                    RunContext{true, opts.seed, state.step, 0});
    if (on_step) on_step(state.step + 1, l);
  }
}

Checkpoint training_checkpoint(const TrainState& state) {
  auto cfg = model_manifest(state.model);
  cfg["train.step"] = std::to_string(state.step);
  return make_checkpoint(state.model.params, &state.adam, cfg);
}

TrainState resume_from(const Checkpoint& ckpt) {
  TrainState s{model_from_checkpoint(ckpt), {}, 0};
  restore_adam(ckpt, s.adam);
  auto it = ckpt.config.find("train.step");
  if (it == ckpt.config.end()) throw std::invalid_argument("checkpoint has no training step");
  s.step = std::stoull(it->second);
  return s;
}

}  // namespace tribert::model
