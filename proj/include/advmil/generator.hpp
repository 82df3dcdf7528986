// Conditional generator: an embedding-level MIL encoder followed by a
// two-layer MLP whose layer inputs can receive additive random noise.
// t_hat = sigmoid(MLP(encode(X) [+ noise])).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "advmil/autodiff.hpp"
#include "advmil/nn.hpp"
#include "advmil/prepared_bag.hpp"

namespace advmil {

enum class EncoderKind { attention, cluster, sequence };
enum class NoiseFamily { uniform01, gaussian01 };

inline std::string to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::attention: return "attention";
    case EncoderKind::cluster: return "cluster";
    case EncoderKind::sequence: return "sequence";
  }
  return "?";
}

inline EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "attention") return EncoderKind::attention;
  if (s == "cluster") return EncoderKind::cluster;
  if (s == "sequence") return EncoderKind::sequence;
  throw Error("unknown encoder kind: " + s);
}

inline std::string to_string(NoiseFamily f) { return f == NoiseFamily::uniform01 ? "uniform" : "gaussian"; }

inline NoiseFamily noise_family_from_string(const std::string& s) {
  if (s == "uniform") return NoiseFamily::uniform01;
  if (s == "gaussian") return NoiseFamily::gaussian01;
  throw Error("unknown noise family: " + s);
}

/// Noise family plus the two-bit injection code ("01", "10", "11"; "00" disables noise).
struct NoiseSpec {
  NoiseFamily family = NoiseFamily::uniform01;
  bool layer1 = true;
  bool layer2 = true;

  static NoiseSpec from_code(const std::string& code, NoiseFamily family = NoiseFamily::uniform01) {
    if (code.size() != 2 || (code[0] != '0' && code[0] != '1') || (code[1] != '0' && code[1] != '1'))
      throw Error("noise code must be two bits, e.g. 01");
    return NoiseSpec{family, code[0] == '1', code[1] == '1'};
  }

  std::string code() const { return std::string(1, layer1 ? '1' : '0') + (layer2 ? '1' : '0'); }
  bool any() const { return layer1 || layer2; }
};

struct EncoderConfig {
  EncoderKind kind = EncoderKind::sequence;
  int in_dim = 1024;
  int out_dim = 384;
  int attn_dim = 128;
};

struct GeneratorConfig {
  EncoderConfig encoder;
  int mlp_hidden = 128;
  NoiseSpec noise;
};

/// Gated-attention MIL over patches (ABMIL-style).
class AttentionEncoder {
 public:
  AttentionEncoder(const EncoderConfig& cfg, Rng& rng)
      : proj_("encoder.proj", cfg.in_dim, cfg.out_dim, rng), pool_("encoder.pool", cfg.out_dim, cfg.attn_dim, rng) {}

  ad::Var forward(ad::Tape& tape, const PreparedBag& bag, bool collect) {
    ad::Var x = tape.constant(bag.features);
    ad::Var h = ad::relu(proj_.forward(tape, x, collect));
    return pool_.forward(tape, h, collect);
  }

  void collect(std::vector<Parameter*>& out) {
    proj_.collect(out);
    pool_.collect(out);
  }

  Linear& projection() { return proj_; }

 private:
  Linear proj_;
  GatedAttention pool_;
};

/// Pool patches within each region, then gated attention over region vectors
/// (DeepAttnMISL-style with regions standing in for phenotype clusters).
class ClusterEncoder {
 public:
  ClusterEncoder(const EncoderConfig& cfg, Rng& rng)
      : proj_("encoder.proj", cfg.in_dim, cfg.out_dim, rng), pool_("encoder.pool", cfg.out_dim, cfg.attn_dim, rng) {}

  ad::Var forward(ad::Tape& tape, const PreparedBag& bag, bool collect) {
    ad::Var x = tape.constant(bag.features);
    ad::Var h = ad::relu(proj_.forward(tape, x, collect));
    ad::Var clusters = ad::matmul(tape.constant(bag.region_pool), h);
    return pool_.forward(tape, clusters, collect);
  }

  void collect(std::vector<Parameter*>& out) {
    proj_.collect(out);
    pool_.collect(out);
  }

 private:
  Linear proj_;
  GatedAttention pool_;
};

/// One single-head self-attention block over region-mean tokens, then mean
/// pooling (a desk-scale stand-in for ESAT).
class SequenceEncoder {
 public:
  SequenceEncoder(const EncoderConfig& cfg, Rng& rng)
      : proj_("encoder.proj", cfg.in_dim, cfg.out_dim, rng),
        q_("encoder.query", cfg.out_dim, cfg.out_dim, rng),
        k_("encoder.key", cfg.out_dim, cfg.out_dim, rng),
        v_("encoder.value", cfg.out_dim, cfg.out_dim, rng),
        o_("encoder.attn_out", cfg.out_dim, cfg.out_dim, rng),
        ff1_("encoder.ffn1", cfg.out_dim, cfg.out_dim, rng),
        ff2_("encoder.ffn2", cfg.out_dim, cfg.out_dim, rng),
        scale_(1.0 / std::sqrt(static_cast<double>(cfg.out_dim))) {}

  ad::Var forward(ad::Tape& tape, const PreparedBag& bag, bool collect) {
    ad::Var x = tape.constant(bag.features);
    ad::Var h = ad::relu(proj_.forward(tape, x, collect));
    ad::Var tokens = ad::matmul(tape.constant(bag.region_pool), h);
    ad::Var q = q_.forward(tape, tokens, collect);
    ad::Var k = k_.forward(tape, tokens, collect);
    ad::Var v = v_.forward(tape, tokens, collect);
    ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), scale_));
    ad::Var mixed = ad::add(tokens, o_.forward(tape, ad::matmul(attn, v), collect));
    ad::Var ff = ff2_.forward(tape, ad::relu(ff1_.forward(tape, mixed, collect)), collect);
    return ad::mean_rows(ad::add(mixed, ff));
  }

  void collect(std::vector<Parameter*>& out) {
    for (Linear* l : {&proj_, &q_, &k_, &v_, &o_, &ff1_, &ff2_}) l->collect(out);
  }

 private:
  Linear proj_, q_, k_, v_, o_, ff1_, ff2_;
  double scale_;
};

/// Additive noise for the two MLP layer inputs; an empty matrix means "no noise".
struct NoiseDraw {
  Matrix layer1;
  Matrix layer2;
};

/// Lower of the two middle values for even sizes.
inline double lower_median(std::vector<double> v) {
  if (v.empty()) throw Error("median of empty sample");
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

struct TimeEstimate {
  double median = 0.0;
  std::vector<double> draws;
};

class Generator {
 public:
  Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg), encoder_(make_encoder(cfg.encoder, rng)) {
    if (cfg.encoder.out_dim < 1 || cfg.mlp_hidden < 1) throw Error("generator dimensions must be positive");
    fc1_ = Linear("head.fc1", cfg.encoder.out_dim, cfg.mlp_hidden, rng);
    fc2_ = Linear("head.fc2", cfg.mlp_hidden, 1, rng);
  }

  const GeneratorConfig& config() const { return cfg_; }
  void set_noise(const NoiseSpec& n) { cfg_.noise = n; }

  /// Bag-level vector (1 × out_dim).
  ad::Var encode(ad::Tape& tape, const PreparedBag& bag, bool collect) {
    if (bag.n_rows() == 0) throw Error("cannot encode an all-masked bag");
    return std::visit([&](auto& enc) { return enc.forward(tape, bag, collect); }, encoder_);
  }

  /// Noise-injected MLP head; returns t_hat as a 1×1 node in (0,1).
  ad::Var head(ad::Tape& tape, ad::Var z, const NoiseDraw& noise, bool collect) {
    ad::Var in1 = noise.layer1.size() ? ad::add(z, tape.constant(noise.layer1)) : z;
    ad::Var h = ad::relu(fc1_.forward(tape, in1, collect));
    ad::Var in2 = noise.layer2.size() ? ad::add(h, tape.constant(noise.layer2)) : h;
    return ad::sigmoid(fc2_.forward(tape, in2, collect));
  }

  ad::Var forward(ad::Tape& tape, const PreparedBag& bag, const NoiseDraw& noise, bool collect) {
    return head(tape, encode(tape, bag, collect), noise, collect);
  }

  NoiseDraw draw_noise(Rng& rng) const { return draw_noise(cfg_.noise, rng); }

  NoiseDraw draw_noise(const NoiseSpec& spec, Rng& rng) const {
    NoiseDraw d;
    auto fill = [&](Matrix& m, int dim) {
      m.resize(1, dim);
      if (spec.family == NoiseFamily::uniform01) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int i = 0; i < dim; ++i) m(0, i) = u(rng);
      } else {
        std::normal_distribution<double> n(0.0, 1.0);
        for (int i = 0; i < dim; ++i) m(0, i) = n(rng);
      }
    };
    if (spec.layer1) fill(d.layer1, cfg_.encoder.out_dim);
    if (spec.layer2) fill(d.layer2, cfg_.mlp_hidden);
    return d;
  }

  // Value-level conveniences (no gradient bookkeeping).

  RowVector encode(const PreparedBag& bag) {
    ad::Tape tape;
    return encode(tape, bag, false).value().row(0);
  }

  double time_from_vector(const RowVector& z, const NoiseDraw& noise) {
    if (!z.allFinite()) throw Error("bag vector is not finite");
    ad::Tape tape;
    return head(tape, tape.constant(z), noise, false).scalar();
  }

  double sample_time(const RowVector& z, Rng& rng) { return time_from_vector(z, draw_noise(rng)); }

  /// One t_hat draw for a bag.
  double forward_value(const PreparedBag& bag, Rng& rng) { return sample_time(encode(bag), rng); }

  TimeEstimate estimate_time(const PreparedBag& bag, int n_draws, Rng& rng) {
    if (n_draws < 1) throw Error("n_draws must be >= 1");
    const RowVector z = encode(bag);
    TimeEstimate est;
    est.draws.reserve(static_cast<std::size_t>(n_draws));
    for (int i = 0; i < n_draws; ++i) est.draws.push_back(sample_time(z, rng));
    est.median = lower_median(est.draws);
    return est;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    std::visit([&](auto& enc) { enc.collect(out); }, encoder_);
    fc1_.collect(out);
    fc2_.collect(out);
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    auto ps = const_cast<Generator*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }

  Linear& fc1() { return fc1_; }
  Linear& fc2() { return fc2_; }

 private:
  using Encoder = std::variant<AttentionEncoder, ClusterEncoder, SequenceEncoder>;

  static Encoder make_encoder(const EncoderConfig& cfg, Rng& rng) {
    if (cfg.in_dim < 1 || cfg.out_dim < 1 || cfg.attn_dim < 1) throw Error("encoder dimensions must be positive");
    switch (cfg.kind) {
      case EncoderKind::attention: return AttentionEncoder(cfg, rng);
      case EncoderKind::cluster: return ClusterEncoder(cfg, rng);
      case EncoderKind::sequence: return SequenceEncoder(cfg, rng);
    }
    throw Error("unknown encoder kind");
  }

  GeneratorConfig cfg_;
  Encoder encoder_;
  Linear fc1_;
  Linear fc2_;
};

}  // namespace advmil
