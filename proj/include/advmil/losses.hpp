// Adversarial and supervision losses with their gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "advmil/core_data.hpp"

namespace advmil {

inline constexpr double kScoreEps = 1e-7;

/// Loss value plus its gradient with respect to each input score or estimate.
struct LossGrad {
  double value = 0.0;
  std::vector<double> d_first;   // d/d real_scores, d/d fake_scores (g_adv) or d/d t_hat (sl)
  std::vector<double> d_second;  // d/d fake_scores (d_loss only)
};

namespace detail {
inline double clamp_score(double s, bool& clamped) {
  const double c = std::clamp(s, kScoreEps, 1.0 - kScoreEps);
  clamped = c != s;
  return c;
}
}  // namespace detail

/// Discriminator loss: −mean(log real) − mean(log(1 − fake)). An empty real
/// batch contributes nothing.
inline LossGrad d_loss_grad(std::span<const double> real, std::span<const double> fake) {
  LossGrad out;
  out.d_first.resize(real.size());
  out.d_second.resize(fake.size());
  if (!real.empty()) {
    const double n = static_cast<double>(real.size());
    for (std::size_t i = 0; i < real.size(); ++i) {
      bool clamped = false;
      const double s = detail::clamp_score(real[i], clamped);
      out.value -= std::log(s) / n;
      out.d_first[i] = clamped ? 0.0 : -1.0 / (s * n);
    }
  }
  if (!fake.empty()) {
    const double n = static_cast<double>(fake.size());
    for (std::size_t i = 0; i < fake.size(); ++i) {
      bool clamped = false;
      const double s = detail::clamp_score(fake[i], clamped);
      out.value -= std::log(1.0 - s) / n;
      out.d_second[i] = clamped ? 0.0 : 1.0 / ((1.0 - s) * n);
    }
  }
  return out;
}

inline double d_loss(std::span<const double> real, std::span<const double> fake) {
  return d_loss_grad(real, fake).value;
}

/// Non-saturating generator term: −mean(log fake).
inline LossGrad g_adv_loss_grad(std::span<const double> fake) {
  LossGrad out;
  out.d_first.resize(fake.size());
  if (fake.empty()) return out;
  const double n = static_cast<double>(fake.size());
  for (std::size_t i = 0; i < fake.size(); ++i) {
    bool clamped = false;
    const double s = detail::clamp_score(fake[i], clamped);
    out.value -= std::log(s) / n;
    out.d_first[i] = clamped ? 0.0 : -1.0 / (s * n);
  }
  return out;
}

inline double g_adv_loss(std::span<const double> fake) { return g_adv_loss_grad(fake).value; }

struct TimePair {
  double t_hat = 0.0;
  double t = 0.0;
  int delta = 0;
};

/// Supervision loss: mean |t_hat − t| over uncensored pairs plus
/// mean max(0, t − t_hat) over censored pairs; an absent group adds 0.
/// Subgradients at kinks are 0.
inline LossGrad sl_loss_grad(std::span<const TimePair> pairs) {
  LossGrad out;
  out.d_first.assign(pairs.size(), 0.0);
  std::size_t n_e = 0, n_ne = 0;
  for (const auto& p : pairs) (p.delta == 0 ? n_e : n_ne) += 1;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const double diff = p.t_hat - p.t;
    if (p.delta == 0) {
      out.value += std::abs(diff) / static_cast<double>(n_e);
      out.d_first[i] = (diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0) / static_cast<double>(n_e);
    } else {
      if (p.t > p.t_hat) {
        out.value += (p.t - p.t_hat) / static_cast<double>(n_ne);
        out.d_first[i] = -1.0 / static_cast<double>(n_ne);
      }
    }
  }
  return out;
}

inline double sl_loss(std::span<const TimePair> pairs) { return sl_loss_grad(pairs).value; }

struct LossWeights {
  double lambda_adv = 1.0;
  double lambda_sl = 1.0;

  void validate() const {
    if (lambda_adv < 0.0 || lambda_sl < 0.0) throw Error("loss weights must be nonnegative");
    if (lambda_adv == 0.0 && lambda_sl == 0.0) throw Error("loss weights cannot both be zero");
  }
};

inline double g_total_loss(double adv, double sl, const LossWeights& w) { return w.lambda_adv * adv + w.lambda_sl * sl; }

}  // namespace advmil
