#pragma once

// Training and evaluation loops over scene-grouped batches.

#include <functional>
#include <string>
#include <vector>

#include "musc/model.hpp"
#include "musc/optim.hpp"
#include "musc/scene.hpp"

namespace musc::harness {

struct TrainConfig {
  Arch arch = Arch::kMuDeepSC;
  std::size_t batch_scenes = 8;  // every question of a scene goes in the same batch
  std::size_t epochs = 20;
  std::size_t max_steps = 0;  // 0 = no limit
  double lr = 1e-4;
  double clip_norm = 0.0;  // global gradient norm clip, 0 = off
  // Train SNR: uniform in [snr_lo, snr_hi] dB per batch (equal bounds = fixed).
  double snr_lo = 0.0, snr_hi = 18.0;
  bool channel_enabled = true;
  std::size_t noiseless_epochs = 0;  // leading epochs trained with the channel bypassed
  channel::ChannelConfig channel;
  double val_fraction = 0.1;  // trailing share of training scenes held out
  std::size_t patience = 5;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

struct SceneGroup {
  std::uint64_t scene_id = 0;
  std::vector<std::size_t> questions;  // indices into the split
};

// Groups the given question indices of a split by scene, in first-seen order.
std::vector<SceneGroup> group_by_scene(const std::vector<data::QAPair>& split, const std::vector<std::size_t>& which);
std::vector<SceneGroup> group_by_scene(const std::vector<data::QAPair>& split);

struct StepStats {
  double loss = 0.0;  // mean over questions
  std::size_t correct = 0;
  std::size_t n = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::size_t steps = 0;
};

class Trainer {
 public:
  Trainer(Model<float>& model, const TrainConfig& cfg);

  // One optimizer step on the batch. `step_index` keys the rng streams.
  StepStats step(const data::Dataset& ds, const std::vector<data::QAPair>& split, const std::vector<SceneGroup>& batch,
                 std::uint64_t step_index);

  void set_channel_enabled(bool on) { cfg_.channel_enabled = on; }
  std::uint64_t steps_taken() const { return adam_.t(); }
  // Gradient of the last step (before clipping), per parameter slot.
  const GradBuffer<float>& last_gradient() const { return last_grad_; }

 private:
  Model<float>& model_;
  TrainConfig cfg_;
  Adam<float> adam_;
  GradBuffer<float> last_grad_;
};

// Full training with early stopping on held-out training scenes; the model
// ends holding the parameters of the best epoch.
TrainResult train_model(Model<float>& model, const data::Dataset& ds, const TrainConfig& cfg,
                        const std::function<void(const EpochLog&)>& on_epoch = {});

struct EvalResult {
  std::size_t correct = 0;
  std::size_t n = 0;
  std::vector<std::size_t> predictions;  // answer ids, one per evaluated question
  double accuracy() const { return n ? double(correct) / double(n) : 0.0; }
};

// Evaluates questions grouped by scene; channel draws come from substreams
// keyed by (seed, scene id), so results do not depend on thread count.
EvalResult evaluate(const Model<float>& model, const data::Dataset& ds, const std::vector<data::QAPair>& split,
                    const std::vector<SceneGroup>& groups, const ChannelSetting& ch, std::uint64_t seed,
                    std::size_t threads = 1);

// Runs fn(i) for i in [0, n) on up to `threads` workers with a static split.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace musc::harness
