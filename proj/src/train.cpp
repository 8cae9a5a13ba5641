#include "musc/train.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <thread>

#include "musc/errors.hpp"

namespace musc::harness {

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<SceneGroup> group_by_scene(const std::vector<data::QAPair>& split, const std::vector<std::size_t>& which) {
  std::vector<SceneGroup> groups;
  std::map<std::uint64_t, std::size_t> index;
  for (std::size_t qi : which) {
    require(qi < split.size(), "group_by_scene: question index out of range");
    const auto sid = split[qi].scene_id;
    auto [it, fresh] = index.emplace(sid, groups.size());
    if (fresh) groups.push_back({sid, {}});
    groups[it->second].questions.push_back(qi);
  }
  return groups;
}

std::vector<SceneGroup> group_by_scene(const std::vector<data::QAPair>& split) {
  std::vector<std::size_t> all(split.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return group_by_scene(split, all);
}

namespace {

std::vector<QuestionInput> inputs_for(const std::vector<data::QAPair>& split, const SceneGroup& g) {
  std::vector<QuestionInput> qs;
  for (std::size_t qi : g.questions) qs.push_back({&split[qi].tokens, split[qi].length});
  return qs;
}

}  // namespace

Trainer::Trainer(Model<float>& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), adam_(model.params(), AdamConfig{cfg.lr}), last_grad_(model.params()) {
  require(cfg.lr > 0, "TrainConfig: lr must be positive");
  require(cfg.snr_lo <= cfg.snr_hi, "TrainConfig: SNR range lower bound exceeds upper bound");
  require(cfg.batch_scenes >= 1, "TrainConfig: batch_scenes must be >= 1");
}

StepStats Trainer::step(const data::Dataset& ds, const std::vector<data::QAPair>& split,
                        const std::vector<SceneGroup>& batch, std::uint64_t step_index) {
  require(!batch.empty(), "Trainer::step: empty batch");
  Rng snr_rng = Rng::substream(cfg_.seed, "train-snr", step_index);
  ChannelSetting ch;
  ch.enabled = cfg_.channel_enabled;
  ch.cfg = cfg_.channel;
  ch.snr_db = cfg_.snr_lo == cfg_.snr_hi ? cfg_.snr_lo : snr_rng.uniform(cfg_.snr_lo, cfg_.snr_hi);

  std::size_t total_q = 0;
  for (const auto& g : batch) total_q += g.questions.size();

  std::vector<GradBuffer<float>> grads(batch.size());
  std::vector<double> losses(batch.size());
  std::vector<std::size_t> correct(batch.size());
  const auto& store = model_.params();
  parallel_for(batch.size(), cfg_.threads, [&](std::size_t b) {
    const auto& g = batch[b];
    Rng rng = Rng::substream(cfg_.seed ^ splitmix64(step_index), "train-channel", g.scene_id);
    ad::Tape<float> tape;
    Binder<float> p(tape, store);
    const auto logits = model_.forward_scene(p, ds.image<float>(g.scene_id), inputs_for(split, g), ch, rng);
    std::vector<ad::Var<float>> terms;
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const std::size_t answer = split[g.questions[k]].answer_id;
      terms.push_back(ad::cross_entropy(logits[k], answer));
      if (argmax(logits[k].value()) == answer) ++correct[b];
    }
    // Scene mean weighted by its share of the batch: scene losses add up to the batch mean.
    auto total = ad::scale(ad::mean(ad::concat(terms, 0)), float(terms.size()) / float(total_q));
    losses[b] = double(total.value()[0]);
    if (!std::isfinite(losses[b]))
      throw NumericError("training: non-finite loss at step " + std::to_string(step_index) + " (scene " +
                         std::to_string(g.scene_id) + ")");
    tape.backward(total);
    grads[b] = GradBuffer<float>(store);
    tape.accumulate_param_grads(grads[b]);
  });

  last_grad_.zero();
  StepStats st;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    last_grad_.add(grads[b]);
    st.loss += losses[b];
    st.correct += correct[b];
  }
  st.n = total_q;
  if (cfg_.clip_norm > 0) {
    double sq = 0;
    for (std::size_t i = 0; i < last_grad_.size(); ++i) sq += last_grad_.norm(i) * last_grad_.norm(i);
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) {
      GradBuffer<float> clipped = last_grad_;
      clipped.scale(float(cfg_.clip_norm / norm));
      adam_.step(model_.params(), clipped);
      return st;
    }
  }
  adam_.step(model_.params(), last_grad_);
  return st;
}

EvalResult evaluate(const Model<float>& model, const data::Dataset& ds, const std::vector<data::QAPair>& split,
                    const std::vector<SceneGroup>& groups, const ChannelSetting& ch, std::uint64_t seed,
                    std::size_t threads) {
  std::vector<std::vector<std::size_t>> preds(groups.size());
  parallel_for(groups.size(), threads, [&](std::size_t gi) {
    const auto& g = groups[gi];
    Rng rng = Rng::substream(seed, "eval-channel", g.scene_id);
    ad::Tape<float> tape(false);
    Binder<float> p(tape, model.params());
    const auto logits = model.forward_scene(p, ds.image<float>(g.scene_id), inputs_for(split, g), ch, rng);
    for (const auto& l : logits) preds[gi].push_back(argmax(l.value()));
  });
  EvalResult r;
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    for (std::size_t k = 0; k < groups[gi].questions.size(); ++k) {
      const std::size_t pred = preds[gi][k];
      r.predictions.push_back(pred);
      r.correct += pred == split[groups[gi].questions[k]].answer_id;
      ++r.n;
    }
  return r;
}

TrainResult train_model(Model<float>& model, const data::Dataset& ds, const TrainConfig& cfg,
                        const std::function<void(const EpochLog&)>& on_epoch) {
  require(!ds.train.empty(), "train_model: dataset has no training questions");
  require(cfg.val_fraction >= 0 && cfg.val_fraction < 1, "train_model: val_fraction must lie in [0, 1)");
  const auto n_val_scenes = std::size_t(std::floor(double(ds.config.n_train_scenes) * cfg.val_fraction));
  const std::uint64_t val_start = ds.config.n_train_scenes - n_val_scenes;
  std::vector<std::size_t> train_q, val_q;
  for (std::size_t i = 0; i < ds.train.size(); ++i) (ds.train[i].scene_id >= val_start ? val_q : train_q).push_back(i);
  auto train_groups = group_by_scene(ds.train, train_q);
  const auto val_groups = group_by_scene(ds.train, val_q);

  Trainer trainer(model, cfg);
  TrainResult res;
  ParamStore<float> best = model.params();
  std::size_t since_best = 0;
  ChannelSetting val_ch;
  val_ch.enabled = cfg.channel_enabled;
  val_ch.cfg = cfg.channel;
  val_ch.snr_db = 0.5 * (cfg.snr_lo + cfg.snr_hi);
  bool budget_left = true;
  for (std::size_t epoch = 1; epoch <= cfg.epochs && budget_left; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle = Rng::substream(cfg.seed, "shuffle", epoch);
    shuffle.shuffle(train_groups.begin(), train_groups.end());
    trainer.set_channel_enabled(cfg.channel_enabled && epoch > cfg.noiseless_epochs);
    EpochLog log;
    log.epoch = epoch;
    std::size_t correct = 0, n = 0;
    double loss_sum = 0;
    for (std::size_t start = 0; start < train_groups.size(); start += cfg.batch_scenes) {
      if (cfg.max_steps && res.steps >= cfg.max_steps) {
        budget_left = false;
        break;
      }
      const std::vector<SceneGroup> batch(
          train_groups.begin() + std::ptrdiff_t(start),
          train_groups.begin() + std::ptrdiff_t(std::min(start + cfg.batch_scenes, train_groups.size())));
      const auto st = trainer.step(ds, ds.train, batch, res.steps);
      ++res.steps;
      loss_sum += st.loss * double(st.n);
      correct += st.correct;
      n += st.n;
    }
    if (n == 0) break;
    log.loss = loss_sum / double(n);
    log.train_accuracy = double(correct) / double(n);
    if (!val_groups.empty())
      log.val_accuracy = evaluate(model, ds, ds.train, val_groups, val_ch, cfg.seed ^ 0x5a5a, cfg.threads).accuracy();
    else
      log.val_accuracy = log.train_accuracy;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (res.best_epoch == 0 || log.val_accuracy > res.best_val_accuracy) {
      res.best_epoch = epoch;
      res.best_val_accuracy = log.val_accuracy;
      best = model.params();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.params() = best;
  return res;
}

}  // namespace musc::harness
