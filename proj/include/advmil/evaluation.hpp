// Censoring-aware metrics, sampled time estimation, occlusion robustness and
// distribution-coverage checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "advmil/generator.hpp"
#include "advmil/losses.hpp"
#include "advmil/prepared_bag.hpp"
#include "advmil/synthetic_cohort.hpp"
#include "advmil/trainer.hpp"
#include "json.hpp"

namespace advmil {

struct RiskRecord {
  double t = 0.0;
  int delta = 0;
  double risk = 0.0;
};

/// Harrell's C as integer pair counts. A pair (i, j) is comparable when
/// t_i < t_j and patient i had the event; it is concordant when risk_i > risk_j.
struct ConcordanceCounts {
  std::int64_t concordant = 0;
  std::int64_t tied = 0;
  std::int64_t comparable = 0;

  double value() const {
    if (comparable == 0) throw Error("C-Index undefined: no comparable pairs");
    return static_cast<double>(2 * concordant + tied) / static_cast<double>(2 * comparable);
  }
};

/// O(n log n) pair counting: sweep times from largest to smallest, keeping the
/// risks of strictly-later patients in a Fenwick tree over risk ranks.
inline ConcordanceCounts concordance_counts(std::span<const RiskRecord> records) {
  const std::size_t n = records.size();
  std::vector<double> risks(n);
  for (std::size_t i = 0; i < n; ++i) risks[i] = records[i].risk;
  std::sort(risks.begin(), risks.end());
  risks.erase(std::unique(risks.begin(), risks.end()), risks.end());
  auto rank_of = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(risks.begin(), risks.end(), r) - risks.begin()) + 1;
  };

  std::vector<std::int64_t> tree(risks.size() + 1, 0);
  auto add = [&](std::size_t i) {
    for (; i < tree.size(); i += i & (~i + 1)) ++tree[i];
  };
  auto prefix = [&](std::size_t i) {
    std::int64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree[i];
    return s;
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return records[a].t > records[b].t; });

  ConcordanceCounts c;
  std::int64_t inserted = 0;
  for (std::size_t g = 0; g < n;) {
    std::size_t end = g;
    while (end < n && records[order[end]].t == records[order[g]].t) ++end;
    for (std::size_t p = g; p < end; ++p) {
      const RiskRecord& r = records[order[p]];
      if (r.delta != 0) continue;
      const std::size_t rank = rank_of(r.risk);
      const std::int64_t below = prefix(rank - 1);
      const std::int64_t at_or_below = prefix(rank);
      c.concordant += below;
      c.tied += at_or_below - below;
      c.comparable += inserted;
    }
    for (std::size_t p = g; p < end; ++p) {
      add(rank_of(records[order[p]].risk));
      ++inserted;
    }
    g = end;
  }
  return c;
}

inline double c_index(std::span<const RiskRecord> records) { return concordance_counts(records).value(); }

/// Mean absolute error in the supervision-loss form, applied to point estimates.
inline double mae(std::span<const TimePair> records) { return sl_loss(records); }

struct PatientEstimate {
  std::string patient_id;
  std::vector<double> draws;
  double median = 0.0;
  double t = 0.0;
  int delta = 0;
};

struct OcclusionPoint {
  double mask_ratio = 0.0;
  double c_index = 0.0;
};

struct EvalReport {
  double c_index = 0.0;
  double mae = 0.0;
  std::vector<PatientEstimate> patients;
  std::vector<OcclusionPoint> occlusion;
  std::optional<double> coverage;  // synthetic cohorts only
  std::uint64_t seed = 0;
  int n_draws = 0;
  std::string checkpoint;
};

/// Stable per-patient random stream so estimates do not depend on evaluation order or masking.
inline Rng patient_stream(std::uint64_t seed, const std::string& patient_id) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : patient_id) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

inline std::vector<RiskRecord> risk_records(std::span<const PatientEstimate> est) {
  std::vector<RiskRecord> out;
  out.reserve(est.size());
  for (const auto& e : est) out.push_back({e.t, e.delta, -e.median});
  return out;
}

inline std::vector<TimePair> time_pairs(std::span<const PatientEstimate> est) {
  std::vector<TimePair> out;
  out.reserve(est.size());
  for (const auto& e : est) out.push_back({e.median, e.t, e.delta});
  return out;
}

/// Samples n_draws estimates per labeled patient; risk = −median.
inline EvalReport evaluate(Generator& generator, std::span<const Sample> samples, int n_draws, std::uint64_t seed) {
  EvalReport report;
  report.seed = seed;
  report.n_draws = n_draws;
  for (const auto& s : samples) {
    if (!s.labeled) throw Error("evaluation sample " + s.id() + " has no label");
    Rng rng = patient_stream(seed, s.id());
    TimeEstimate est = generator.estimate_time(s.bag, n_draws, rng);
    report.patients.push_back({s.id(), std::move(est.draws), est.median, s.t, s.delta});
  }
  const auto risks = risk_records(report.patients);
  report.c_index = c_index(risks);
  report.mae = mae(time_pairs(report.patients));
  return report;
}

/// Keeps only the listed regions (indices into bag.region_pool rows), preserving order.
inline PreparedBag keep_regions(const PreparedBag& bag, std::vector<int> kept) {
  std::sort(kept.begin(), kept.end());
  std::vector<int> new_index(static_cast<std::size_t>(bag.n_regions()), -1);
  for (std::size_t i = 0; i < kept.size(); ++i) new_index[static_cast<std::size_t>(kept[i])] = static_cast<int>(i);
  std::vector<int> rows;
  for (int r = 0; r < bag.n_rows(); ++r)
    if (new_index[static_cast<std::size_t>(bag.region_of_row[static_cast<std::size_t>(r)])] >= 0) rows.push_back(r);

  PreparedBag out;
  out.patient_id = bag.patient_id;
  out.n_regions_declared = static_cast<int>(kept.size());
  out.features.resize(static_cast<Eigen::Index>(rows.size()), bag.features.cols());
  out.region_pool = Matrix::Zero(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(rows.size()));
  out.region_of_row.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int r = rows[i];
    const int old_region = bag.region_of_row[static_cast<std::size_t>(r)];
    const int nr = new_index[static_cast<std::size_t>(old_region)];
    out.features.row(static_cast<Eigen::Index>(i)) = bag.features.row(r);
    out.region_of_row[i] = nr;
    out.region_pool(nr, static_cast<Eigen::Index>(i)) = bag.region_pool(old_region, r);
  }
  return out;
}

/// Number of regions kept at mask ratio rho: ceil((1 − rho)·k), at least 1.
inline int regions_kept(int n_regions, double mask_ratio) {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw Error("mask ratio must be in [0,1)");
  // The small slack absorbs representation error, e.g. (1 − 0.99)·100 = 1.0000000000000009.
  const double keep = std::ceil((1.0 - mask_ratio) * n_regions - 1e-9);
  return std::clamp(static_cast<int>(keep), 1, n_regions);
}

/// Randomly drops whole regions so that regions_kept() remain.
inline PreparedBag occlude_regions(const PreparedBag& bag, double mask_ratio, Rng& rng) {
  const int k = bag.n_regions();
  const int keep = regions_kept(k, mask_ratio);
  if (keep == k) return bag;
  std::vector<int> all(static_cast<std::size_t>(k));
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(keep));
  return keep_regions(bag, std::move(all));
}

/// C-Index after random region occlusion at each mask ratio. Noise draws use
/// the same per-patient streams as evaluate(), so ratio 0 reproduces it exactly.
inline std::vector<OcclusionPoint> occlusion_sweep(Generator& generator, std::span<const Sample> samples,
                                                   std::span<const double> mask_ratios, int n_draws,
                                                   std::uint64_t seed) {
  std::vector<OcclusionPoint> curve;
  for (std::size_t ri = 0; ri < mask_ratios.size(); ++ri) {
    const double rho = mask_ratios[ri];
    std::vector<PatientEstimate> est;
    for (const auto& s : samples) {
      if (!s.labeled) throw Error("occlusion sample " + s.id() + " has no label");
      Rng mask_rng = patient_stream(seed ^ (0x0CC1ULL * (ri + 1)), s.id());
      const PreparedBag masked = occlude_regions(s.bag, rho, mask_rng);
      Rng rng = patient_stream(seed, s.id());
      const TimeEstimate te = generator.estimate_time(masked, n_draws, rng);
      est.push_back({s.id(), {}, te.median, s.t, s.delta});
    }
    curve.push_back({rho, c_index(risk_records(est))});
  }
  return curve;
}

/// Feature-space perturbation hook: additive Gaussian noise on every patch
/// feature. A proxy for image-space corruptions, which need pixel data.
inline PreparedBag perturb_features(const PreparedBag& bag, double sigma, Rng& rng) {
  PreparedBag out = bag;
  std::normal_distribution<double> n(0.0, sigma);
  for (Eigen::Index i = 0; i < out.features.size(); ++i) out.features.data()[i] += n(rng);
  return out;
}

/// Linear-interpolation quantile (numpy's default) of an ascending sample.
inline double empirical_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error("quantile of empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw Error("quantile probability must be in [0,1]");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Draws one time estimate (model units) for a patient.
using TimeSampler = std::function<double(const std::string& patient_id, Rng& rng)>;

/// Fraction of patients whose realized event time lies inside the sampled
/// [q_lo, q_hi] interval of n_draws estimates. `truth_to_model` converts truth
/// times (fractions of time_scale) to the sampler's units.
inline double coverage_check(const TimeSampler& sampler, std::span<const std::string> patient_ids,
                             const std::optional<CohortTruth>& truth, double truth_to_model, int n_draws,
                             std::uint64_t seed, double p_lo = 0.1, double p_hi = 0.9) {
  if (!truth) throw Error("coverage check needs the cohort truth sidecar");
  if (patient_ids.empty()) throw Error("coverage check needs at least one patient");
  if (n_draws < 1) throw Error("n_draws must be >= 1");
  if (!(p_lo <= p_hi)) throw Error("coverage interval probabilities out of order");
  std::size_t covered = 0;
  std::vector<double> draws(static_cast<std::size_t>(n_draws));
  for (const auto& id : patient_ids) {
    Rng rng = patient_stream(seed, id);
    for (auto& d : draws) d = sampler(id, rng);
    std::sort(draws.begin(), draws.end());
    const double lo = empirical_quantile(draws, p_lo);
    const double hi = empirical_quantile(draws, p_hi);
    const double t = truth->patient(id).t_star * truth_to_model;
    if (t >= lo && t <= hi) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(patient_ids.size());
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("spearman needs two equal-length samples of size >= 2");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["c_index"] = r.c_index;
  j["mae"] = r.mae;
  j["seed"] = r.seed;
  j["n_draws"] = r.n_draws;
  j["checkpoint"] = r.checkpoint;
  nlohmann::json pats = nlohmann::json::array();
  for (const auto& p : r.patients)
    pats.push_back({{"patient_id", p.patient_id}, {"draws", p.draws}, {"median", p.median}, {"t", p.t}, {"delta", p.delta}});
  j["patients"] = pats;
  nlohmann::json occ = nlohmann::json::array();
  for (const auto& o : r.occlusion) occ.push_back({{"mask_ratio", o.mask_ratio}, {"c_index", o.c_index}});
  j["occlusion"] = occ;
  j["coverage"] = r.coverage ? nlohmann::json(*r.coverage) : nlohmann::json();
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.c_index = j.at("c_index").get<double>();
    r.mae = j.at("mae").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n_draws = j.at("n_draws").get<int>();
    r.checkpoint = j.at("checkpoint").get<std::string>();
    for (const auto& p : j.at("patients"))
      r.patients.push_back({p.at("patient_id").get<std::string>(), p.at("draws").get<std::vector<double>>(),
                            p.at("median").get<double>(), p.at("t").get<double>(), p.at("delta").get<int>()});
    for (const auto& o : j.at("occlusion")) r.occlusion.push_back({o.at("mask_ratio").get<double>(), o.at("c_index").get<double>()});
    if (j.contains("coverage") && !j.at("coverage").is_null()) r.coverage = j.at("coverage").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

inline void write_occlusion_csv(std::span<const OcclusionPoint> curve, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os.precision(17);
  os << "mask_ratio,c_index\n";
  for (const auto& p : curve) os << p.mask_ratio << ',' << p.c_index << '\n';
}

}  // namespace advmil
