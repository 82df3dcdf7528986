// Adversarial mini-batch training (one epoch = alternating D and G phases per
// sample with gradient accumulation) and the k-fold semi-supervised schedule.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advmil/discriminator.hpp"
#include "advmil/generator.hpp"
#include "advmil/losses.hpp"
#include "advmil/nn.hpp"
#include "advmil/prepared_bag.hpp"

namespace advmil {

struct TrainConfig {
  int epochs = 300;
  int batch_size = 1;
  int grad_accum = 16;
  int patience = 30;
  int warmup = 5;
  double lr_g = 0.00008;
  double lr_d = 0.00008;
  std::string optimizer = "adam";
  double weight_decay = 0.0005;
  double lr_decay_factor = 0.5;
  int lr_decay_patience = 10;
  int k_folds_unlabeled = 1;
  int val_draws = 30;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw Error("epochs must be >= 1");
    if (batch_size != 1) throw Error("only batch_size = 1 is supported; use grad_accum for larger effective batches");
    if (grad_accum < 1) throw Error("grad_accum must be >= 1");
    if (patience < 1 || warmup < 0) throw Error("patience must be >= 1 and warmup >= 0");
    if (!(lr_g > 0.0) || !(lr_d > 0.0)) throw Error("learning rates must be positive");
    if (optimizer != "adam") throw Error("unsupported optimizer: " + optimizer);
    if (weight_decay < 0.0) throw Error("weight_decay must be nonnegative");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) throw Error("lr_decay_factor must be in (0,1]");
    if (lr_decay_patience < 1) throw Error("lr_decay_patience must be >= 1");
    if (k_folds_unlabeled < 1) throw Error("k_folds_unlabeled must be >= 1");
    if (val_draws < 1) throw Error("val_draws must be >= 1");
  }
};

struct ModelConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  LossWeights weights;
};

/// Generator, discriminator and the loss weighting they are trained with.
/// Not movable: optimizers keep pointers into its parameters.
class ModelBundle {
 public:
  ModelBundle(const ModelConfig& cfg, std::uint64_t seed) : ModelBundle(cfg, seed, Rng(seed)) {}

  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;

  ModelConfig config() const { return {generator.config(), discriminator.config(), weights}; }

  Generator generator;
  Discriminator discriminator;
  LossWeights weights;

 private:
  ModelBundle(const ModelConfig& cfg, std::uint64_t, Rng rng)
      : generator(cfg.generator, rng), discriminator(cfg.discriminator, rng), weights(cfg.weights) {
    weights.validate();
    if (weights.lambda_adv > 0.0 && !cfg.generator.noise.any())
      throw Error("adversarial training needs noise in at least one generator layer (code 00 given)");
    if (cfg.generator.encoder.in_dim != cfg.discriminator.in_dim)
      throw Error("generator and discriminator must agree on the feature dimension");
  }
};

using ParameterSnapshot = std::vector<Matrix>;

inline ParameterSnapshot snapshot(const std::vector<const Parameter*>& params) {
  ParameterSnapshot s;
  s.reserve(params.size());
  for (const auto* p : params) s.push_back(p->value);
  return s;
}

inline void restore(const std::vector<Parameter*>& params, const ParameterSnapshot& s) {
  if (s.size() != params.size()) throw Error("snapshot does not match parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = s[i];
}

/// One training example. Unlabeled samples carry NaN labels so any accidental
/// use surfaces as a non-finite loss.
struct Sample {
  PreparedBag bag;
  bool labeled = false;
  double t = std::numeric_limits<double>::quiet_NaN();
  int delta = -1;

  const std::string& id() const { return bag.patient_id; }
};

inline Sample make_sample(const FeatureBag& bag, const std::optional<SurvivalRecord>& label) {
  Sample s;
  s.bag = prepare_bag(bag);
  if (label) {
    s.labeled = true;
    s.t = label->t;
    s.delta = label->delta;
  }
  return s;
}

struct EpochStats {
  int epoch = 0;
  double d_loss = 0.0;   // mean per-sample discriminator loss
  double g_adv = 0.0;    // mean per-sample generator adversarial term
  double g_sl = 0.0;     // mean per-labeled-sample supervision term
  double val_sl = std::numeric_limits<double>::quiet_NaN();
  double lr_g = 0.0;
  int d_steps = 0;
  int g_steps = 0;
  int samples = 0;
  int real_pairs = 0;
  int fake_pairs = 0;
  // Bookkeeping of which samples fed which loss terms.
  std::vector<std::string> order;
  std::vector<std::string> real_pair_ids;
  std::vector<std::string> sl_ids;
  std::vector<std::string> unlabeled_ids;
};

enum class Phase { discriminator, generator };

/// Called after every phase of every sample (after any optimizer step it triggered).
using PhaseObserver = std::function<void(Phase, const Sample&, const ModelBundle&)>;

class TrainingError : public Error {
 public:
  using Error::Error;
};

enum class StopDecision { proceed, stop, decay_lr };

struct TrainState {
  int epoch = 0;  // epochs completed
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int since_improvement = 0;
  double plateau_best = std::numeric_limits<double>::infinity();
  int plateau_bad = 0;
  bool improved = false;  // the epoch just checked produced a new best checkpoint
};

/// Early stopping with warm-up plus learning-rate plateau detection. Called
/// once per finished epoch with its validation loss.
inline StopDecision early_stop_check(TrainState& state, double val_loss, const TrainConfig& cfg) {
  const int epoch = state.epoch++;
  state.improved = false;

  bool decay = false;
  if (val_loss < state.plateau_best) {
    state.plateau_best = val_loss;
    state.plateau_bad = 0;
  } else if (++state.plateau_bad >= cfg.lr_decay_patience) {
    state.plateau_bad = 0;
    decay = true;
  }

  if (epoch < cfg.warmup) return decay ? StopDecision::decay_lr : StopDecision::proceed;
  if (val_loss < state.best_val) {
    state.best_val = val_loss;
    state.best_epoch = epoch;
    state.since_improvement = 0;
    state.improved = true;
  } else if (++state.since_improvement >= cfg.patience) {
    return StopDecision::stop;
  }
  return decay ? StopDecision::decay_lr : StopDecision::proceed;
}

class Trainer {
 public:
  Trainer(ModelBundle& bundle, const TrainConfig& cfg)
      : bundle_(bundle),
        cfg_(cfg),
        opt_g_(bundle.generator.parameters(), AdamOptions{cfg.lr_g, 0.9, 0.999, 1e-8, cfg.weight_decay}),
        opt_d_(bundle.discriminator.parameters(), AdamOptions{cfg.lr_d, 0.9, 0.999, 1e-8, cfg.weight_decay}),
        rng_(cfg.seed) {
    cfg_.validate();
    opt_g_.zero_grad();
    opt_d_.zero_grad();
  }

  void set_observer(PhaseObserver obs) { observer_ = std::move(obs); }

  double lr_g() const { return opt_g_.lr(); }
  void decay_lr_g(double factor) { opt_g_.set_lr(opt_g_.lr() * factor); }
  std::int64_t d_steps_total() const { return opt_d_.steps(); }
  std::int64_t g_steps_total() const { return opt_g_.steps(); }

  bool adversarial() const { return bundle_.weights.lambda_adv > 0.0; }

  /// One epoch over `data` in a freshly shuffled order.
  EpochStats train_epoch(std::span<const Sample* const> data, int epoch_index = 0) {
    if (data.empty()) throw Error("training data is empty");
    std::vector<const Sample*> order(data.begin(), data.end());
    std::shuffle(order.begin(), order.end(), rng_);

    EpochStats st;
    st.epoch = epoch_index;
    int d_pending = 0, g_pending = 0, n_labeled = 0, n_adv = 0;
    const double scale = 1.0 / cfg_.grad_accum;
    const LossWeights& w = bundle_.weights;

    for (const Sample* sp : order) {
      const Sample& s = *sp;
      ++st.samples;
      st.order.push_back(s.id());
      if (!s.labeled) st.unlabeled_ids.push_back(s.id());

      // Discriminator phase: G fixed.
      if (adversarial()) {
        const double t_fake = bundle_.generator.forward_value(s.bag, rng_);
        ad::Tape tape;
        ad::Var x_emb = bundle_.discriminator.region_embed(tape, s.bag, true);
        auto fake = bundle_.discriminator.fuse(tape, x_emb, tape.scalar(t_fake), true);
        std::vector<double> real_scores;
        std::optional<Discriminator::Output> real;
        if (s.labeled && s.delta == 0) {
          real = bundle_.discriminator.fuse(tape, x_emb, tape.scalar(s.t), true);
          real_scores.push_back(real->y_d.scalar());
          st.real_pair_ids.push_back(s.id());
          ++st.real_pairs;
        }
        const std::vector<double> fake_scores{fake.y_d.scalar()};
        ++st.fake_pairs;
        const LossGrad lg = d_loss_grad(real_scores, fake_scores);
        check_finite(lg.value, "discriminator loss", s, epoch_index);
        std::vector<std::pair<ad::Var, double>> seeds{{fake.y_d, lg.d_second[0]}};
        if (real) seeds.emplace_back(real->y_d, lg.d_first[0]);
        tape.backward(seeds);
        st.d_loss += lg.value;
        if (++d_pending == cfg_.grad_accum) {
          opt_d_.step(scale);
          ++st.d_steps;
          d_pending = 0;
        }
        if (observer_) observer_(Phase::discriminator, s, bundle_);
      }

      // Generator phase: D fixed, gradients flow through it into t_hat.
      {
        ad::Tape tape;
        const NoiseDraw noise = bundle_.generator.draw_noise(rng_);
        ad::Var t_hat = bundle_.generator.forward(tape, s.bag, noise, true);
        std::vector<std::pair<ad::Var, double>> seeds;
        if (adversarial()) {
          ad::Var x_emb = bundle_.discriminator.region_embed(tape, s.bag, false);
          auto fake = bundle_.discriminator.fuse(tape, x_emb, t_hat, false);
          const std::vector<double> fake_scores{fake.y_d.scalar()};
          const LossGrad lg = g_adv_loss_grad(fake_scores);
          check_finite(lg.value, "generator adversarial loss", s, epoch_index);
          seeds.emplace_back(fake.y_d, w.lambda_adv * lg.d_first[0]);
          st.g_adv += lg.value;
          ++n_adv;
        }
        if (s.labeled && w.lambda_sl > 0.0) {
          const std::vector<TimePair> pairs{{t_hat.scalar(), s.t, s.delta}};
          const LossGrad lg = sl_loss_grad(pairs);
          check_finite(lg.value, "supervision loss", s, epoch_index);
          seeds.emplace_back(t_hat, w.lambda_sl * lg.d_first[0]);
          st.g_sl += lg.value;
          st.sl_ids.push_back(s.id());
          ++n_labeled;
        }
        if (!seeds.empty()) tape.backward(seeds);
        if (++g_pending == cfg_.grad_accum) {
          opt_g_.step(scale);
          ++st.g_steps;
          g_pending = 0;
        }
        if (observer_) observer_(Phase::generator, s, bundle_);
      }
    }

    // Flush a trailing partial accumulation window.
    if (d_pending > 0) {
      opt_d_.step(scale);
      ++st.d_steps;
    }
    if (g_pending > 0) {
      opt_g_.step(scale);
      ++st.g_steps;
    }

    if (st.fake_pairs > 0) st.d_loss /= st.fake_pairs;
    if (n_adv > 0) st.g_adv /= n_adv;
    if (n_labeled > 0) st.g_sl /= n_labeled;
    st.lr_g = opt_g_.lr();
    return st;
  }

  /// Supervision loss of median-of-draws estimates on labeled validation data.
  double validation_loss(std::span<const Sample> val, int epoch_index) {
    if (val.empty()) throw Error("validation set is empty");
    Rng rng(cfg_.seed ^ (0xA5A5A5A5ULL + static_cast<std::uint64_t>(epoch_index) * 0x9E3779B97F4A7C15ULL));
    std::vector<TimePair> pairs;
    pairs.reserve(val.size());
    for (const auto& s : val) {
      if (!s.labeled) throw Error("validation sample " + s.id() + " has no label");
      pairs.push_back({bundle_.generator.estimate_time(s.bag, cfg_.val_draws, rng).median, s.t, s.delta});
    }
    return sl_loss(pairs);
  }

 private:
  static void check_finite(double v, const char* what, const Sample& s, int epoch) {
    if (!std::isfinite(v))
      throw TrainingError(std::string("non-finite ") + what + " at epoch " + std::to_string(epoch) + ", sample " +
                          s.id());
  }

  ModelBundle& bundle_;
  TrainConfig cfg_;
  Adam opt_g_;
  Adam opt_d_;
  Rng rng_;
  PhaseObserver observer_;
};

struct FitResult {
  std::vector<EpochStats> history;
  TrainState state;
  /// Unlabeled fold index used at each epoch (-1 when there is no unlabeled pool).
  std::vector<int> fold_schedule;
  /// Unlabeled sample ids per fold.
  std::vector<std::vector<std::string>> unlabeled_folds;
};

using EpochCallback = std::function<void(const EpochStats&)>;

namespace detail {
template <class DataForEpoch>
FitResult run_epochs(ModelBundle& bundle, std::span<const Sample> validation, const TrainConfig& cfg,
                     DataForEpoch&& data_for_epoch, const EpochCallback& on_epoch, const PhaseObserver& observer) {
  cfg.validate();
  Trainer trainer(bundle, cfg);
  if (observer) trainer.set_observer(observer);
  FitResult result;
  std::optional<ParameterSnapshot> best_g, best_d;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<const Sample*> data = data_for_epoch(epoch, result);
    EpochStats st = trainer.train_epoch(data, epoch);
    st.val_sl = validation.empty() ? st.g_sl : trainer.validation_loss(validation, epoch);
    const StopDecision decision = early_stop_check(result.state, st.val_sl, cfg);
    if (result.state.improved) {
      best_g = snapshot(std::as_const(bundle.generator).parameters());
      best_d = snapshot(std::as_const(bundle.discriminator).parameters());
    }
    if (on_epoch) on_epoch(st);
    result.history.push_back(std::move(st));
    if (decision == StopDecision::decay_lr) trainer.decay_lr_g(cfg.lr_decay_factor);
    if (decision == StopDecision::stop) break;
  }
  if (best_g) {
    restore(bundle.generator.parameters(), *best_g);
    restore(bundle.discriminator.parameters(), *best_d);
  }
  return result;
}
}  // namespace detail

/// k-fold semi-supervised training. The unlabeled pool is shuffled once and
/// split into k folds of (nearly) equal size; epoch T trains on all labeled
/// samples plus fold T mod k. An empty pool reduces to fully-supervised training.
inline FitResult fit(ModelBundle& bundle, std::span<const Sample> labeled, std::span<const Sample> unlabeled,
                     std::span<const Sample> validation, const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                     const PhaseObserver& observer = {}) {
  if (labeled.empty()) throw Error("labeled training data is empty");
  for (const auto& s : labeled)
    if (!s.labeled) throw Error("sample " + s.id() + " in the labeled set has no label");
  const auto k = static_cast<std::size_t>(cfg.k_folds_unlabeled);
  std::vector<std::vector<const Sample*>> folds;
  std::vector<std::vector<std::string>> fold_ids;
  if (!unlabeled.empty()) {
    if (k > unlabeled.size()) throw Error("fold size zero: k exceeds the number of unlabeled samples");
    std::vector<std::size_t> idx(unlabeled.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng split_rng(cfg.seed ^ 0x5EED5EEDULL);
    std::shuffle(idx.begin(), idx.end(), split_rng);
    folds.resize(k);
    fold_ids.resize(k);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      folds[i % k].push_back(&unlabeled[idx[i]]);
      fold_ids[i % k].push_back(unlabeled[idx[i]].id());
    }
  }
  auto data_for_epoch = [&](int epoch, FitResult& result) {
    std::vector<const Sample*> data;
    for (const auto& s : labeled) data.push_back(&s);
    if (folds.empty()) {
      result.fold_schedule.push_back(-1);
    } else {
      const auto f = static_cast<std::size_t>(epoch) % k;
      data.insert(data.end(), folds[f].begin(), folds[f].end());
      result.fold_schedule.push_back(static_cast<int>(f));
    }
    return data;
  };
  FitResult r = detail::run_epochs(bundle, validation, cfg, data_for_epoch, on_epoch, observer);
  r.unlabeled_folds = std::move(fold_ids);
  return r;
}

/// Fully-supervised training on labeled data only.
inline FitResult fit_supervised(ModelBundle& bundle, std::span<const Sample> labeled,
                                std::span<const Sample> validation, const TrainConfig& cfg,
                                const EpochCallback& on_epoch = {}, const PhaseObserver& observer = {}) {
  if (labeled.empty()) throw Error("labeled training data is empty");
  auto data_for_epoch = [&](int, FitResult& result) {
    std::vector<const Sample*> data;
    for (const auto& s : labeled) data.push_back(&s);
    result.fold_schedule.push_back(-1);
    return data;
  };
  return detail::run_epochs(bundle, validation, cfg, data_for_epoch, on_epoch, observer);
}

}  // namespace advmil
