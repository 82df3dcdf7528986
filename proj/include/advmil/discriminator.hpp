// Discriminator with region-level instance projection (RLIP).
//
//   v_τ      = mean over region τ's valid patches of phi(x_j)        (region embedding)
//   t_emb    = varphi(t)                                             (time embedding)
//   y_fusion = (1/k) Σ_τ <v_τ, t_emb>
//   y_region = psi(gap(X_emb))
//   y_D      = sigmoid(y_fusion + y_region)
//
// FusionKind::wsi_projection replaces the region-wise term with a single inner
// product between t_emb and the attention-pooled slide vector; it exists only
// as an ablation baseline.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advmil/autodiff.hpp"
#include "advmil/nn.hpp"
#include "advmil/prepared_bag.hpp"

namespace advmil {

enum class FusionKind { rlip, wsi_projection };

inline std::string to_string(FusionKind f) { return f == FusionKind::rlip ? "rlip" : "wsi_projection"; }

inline FusionKind fusion_kind_from_string(const std::string& s) {
  if (s == "rlip") return FusionKind::rlip;
  if (s == "wsi_projection") return FusionKind::wsi_projection;
  throw Error("unknown fusion kind: " + s);
}

struct DiscriminatorConfig {
  int in_dim = 1024;
  int d = 128;
  int phi_hidden = 256;  // 0 makes phi a single linear layer c → d
  int attn_dim = 128;
  FusionKind fusion = FusionKind::rlip;
};

struct ModelCost {
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

/// Per-component breakdown returned by Discriminator::cost().
struct RlipCost {
  ModelCost phi, varphi, fusion, gap, psi;

  ModelCost total() const {
    return {phi.params + varphi.params + fusion.params + gap.params + psi.params,
            phi.macs + varphi.macs + fusion.macs + gap.macs + psi.macs};
  }
};

class Discriminator {
 public:
  struct Output {
    ad::Var y_d;
    ad::Var y_fusion;
    ad::Var y_region;
    ad::Var t_emb;
  };

  Discriminator(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.in_dim < 1 || cfg.d < 1 || cfg.attn_dim < 1 || cfg.phi_hidden < 0)
      throw Error("discriminator dimensions must be positive");
    if (cfg.phi_hidden > 0) {
      phi1_ = Linear("phi.fc1", cfg.in_dim, cfg.phi_hidden, rng);
      phi2_ = Linear("phi.fc2", cfg.phi_hidden, cfg.d, rng);
    } else {
      phi2_ = Linear("phi.fc", cfg.in_dim, cfg.d, rng);
    }
    time1_ = Linear("varphi.fc1", 1, cfg.d, rng);
    time2_ = Linear("varphi.fc2", cfg.d, cfg.d, rng);
    gap_ = GatedAttention("gap", cfg.d, cfg.attn_dim, rng);
    psi_ = Linear("psi", cfg.d, 1, rng);
  }

  const DiscriminatorConfig& config() const { return cfg_; }

  /// X_emb: one row per region (k × d).
  ad::Var region_embed(ad::Tape& tape, const PreparedBag& bag, bool collect) {
    if (bag.has_empty_region) throw Error("bag " + bag.patient_id + " has a region with no valid patches");
    ad::Var x = tape.constant(bag.features);
    ad::Var h = cfg_.phi_hidden > 0 ? phi2_.forward(tape, ad::relu(phi1_.forward(tape, x, collect)), collect)
                                    : phi2_.forward(tape, x, collect);
    return ad::matmul(tape.constant(bag.region_pool), h);
  }

  ad::Var time_embed(ad::Tape& tape, ad::Var t, bool collect) {
    return time2_.forward(tape, ad::relu(time1_.forward(tape, t, collect)), collect);
  }

  Output fuse(ad::Tape& tape, ad::Var x_emb, ad::Var t, bool collect) {
    Output out;
    out.t_emb = time_embed(tape, t, collect);
    ad::Var pooled = gap_.forward(tape, x_emb, collect);
    if (cfg_.fusion == FusionKind::rlip) {
      out.y_fusion = ad::mean_rows(ad::matmul(x_emb, ad::transpose(out.t_emb)));
    } else {
      out.y_fusion = ad::matmul(pooled, ad::transpose(out.t_emb));
    }
    out.y_region = psi_.forward(tape, pooled, collect);
    out.y_d = ad::sigmoid(ad::add(out.y_fusion, out.y_region));
    return out;
  }

  // Value-level conveniences.

  Matrix region_embed(const PreparedBag& bag) {
    ad::Tape tape;
    return region_embed(tape, bag, false).value();
  }

  double fuse(const Matrix& x_emb, double t) {
    ad::Tape tape;
    return fuse(tape, tape.constant(x_emb), tape.scalar(t), false).y_d.scalar();
  }

  double score(const PreparedBag& bag, double t) { return fuse(region_embed(bag), t); }

  /// Exact trainable-parameter and multiply-accumulate counts for one forward
  /// pass over a bag of m patches with s patches per region. A linear layer on
  /// n rows costs n·in·out MACs; mean pooling counts one MAC per accumulated
  /// element; gated attention is counted by GatedAttention::macs.
  RlipCost cost(std::int64_t m, std::int64_t s) const {
    const std::int64_t k = m / s;
    const std::int64_t c = cfg_.in_dim, d = cfg_.d, h = cfg_.phi_hidden;
    RlipCost cost;
    if (h > 0) {
      cost.phi.params = phi1_.param_count() + phi2_.param_count();
      cost.phi.macs = m * (c * h + h * d);
    } else {
      cost.phi.params = phi2_.param_count();
      cost.phi.macs = m * c * d;
    }
    cost.phi.macs += m * d;  // within-region average
    cost.varphi.params = time1_.param_count() + time2_.param_count();
    cost.varphi.macs = d + d * d;
    cost.fusion.macs = cfg_.fusion == FusionKind::rlip ? k * d : d;
    cost.gap.params = gap_.param_count();
    cost.gap.macs = gap_.macs(k);
    cost.psi.params = psi_.param_count();
    cost.psi.macs = d;
    return cost;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    if (cfg_.phi_hidden > 0) phi1_.collect(out);
    phi2_.collect(out);
    time1_.collect(out);
    time2_.collect(out);
    gap_.collect(out);
    psi_.collect(out);
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    auto ps = const_cast<Discriminator*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  Linear& phi_first() { return cfg_.phi_hidden > 0 ? phi1_ : phi2_; }
  Linear& phi_last() { return phi2_; }
  Linear& time_first() { return time1_; }
  Linear& time_last() { return time2_; }
  Linear& psi() { return psi_; }

 private:
  DiscriminatorConfig cfg_;
  Linear phi1_, phi2_;
  Linear time1_, time2_;
  GatedAttention gap_;
  Linear psi_;
};

/// Convenience wrapper over Discriminator::cost().
inline ModelCost count_params_and_macs(const Discriminator& disc, std::int64_t m, std::int64_t s) {
  return disc.cost(m, s).total();
}

}  // namespace advmil
