// Synthetic feature-bag cohorts with a known conditional time-to-event law.
//
// Generative model for patient i:
//   z_i ~ N(0, I_k)                                  latent patient vector
//   patch signal dims  = z_i + noise_sd * N(0, 1)    first k feature columns
//   patch noise dims   ~ N(0, 1)                     remaining columns
//   eta_i = w · mean_patches(signal dims)            location in logit-time
//   logit(T_i) ~ Logistic(eta_i, noise_sd)           event time as a fraction of time_scale
//   C_i ~ U[0, censor_max]                           independent censoring
// Observed t_raw = time_scale * min(T_i, C_i), delta = 1 iff C_i < T_i.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "advmil/core_data.hpp"
#include "json.hpp"

namespace advmil {

struct SynthSpec {
  int n_patients = 200;
  int m = 64;
  int c = 32;
  int s = 16;
  int signal_dim = 4;
  double noise_sd = 0.3;
  double censor_rate = 0.3;
  std::uint64_t seed = 1;
  double time_scale = 1000.0;   // raw time units per unit of T
  double signal_scale = 1.5;    // |w|

  void validate() const {
    if (n_patients < 1) throw Error("n_patients must be positive");
    if (m < 1 || c < 1 || s < 1) throw Error("m, c and s must be positive");
    if (m % s != 0) throw Error("m must be a multiple of s");
    if (signal_dim < 1 || signal_dim > c) throw Error("signal_dim must be in 1..c");
    if (noise_sd < 0.0) throw Error("noise_sd must be nonnegative");
    if (!(censor_rate >= 0.0 && censor_rate < 1.0)) throw Error("censor_rate must be in [0,1)");
    if (!(time_scale > 0.0)) throw Error("time_scale must be positive");
  }
};

struct PatientTruth {
  double location = 0.0;  // eta_i
  double t_star = 0.0;    // realized event time, fraction of time_scale
  double t_median = 0.0;  // logistic(eta_i)
};

struct CohortTruth {
  std::vector<double> w;
  std::string noise_law = "logistic";
  double noise_sd = 0.0;
  double time_scale = 1.0;
  double censor_max = std::numeric_limits<double>::infinity();
  int signal_dim = 0;
  std::map<std::string, PatientTruth> patients;

  const PatientTruth& patient(const std::string& id) const {
    auto it = patients.find(id);
    if (it == patients.end()) throw Error("unknown patient: " + id);
    return it->second;
  }
};

struct SyntheticCohort {
  std::vector<FeatureBag> bags;
  CohortManifest manifest;
  CohortTruth truth;
};

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Mean over valid patches of the first `k` feature columns, dotted with w.
inline double signal_location(const FeatureBag& bag, const std::vector<double>& w) {
  const int k = static_cast<int>(w.size());
  std::vector<double> mean(static_cast<std::size_t>(k), 0.0);
  int n = 0;
  for (int j = 0; j < bag.m(); ++j) {
    if (!bag.valid[static_cast<std::size_t>(j)]) continue;
    ++n;
    for (int d = 0; d < k; ++d) mean[static_cast<std::size_t>(d)] += static_cast<double>(bag.features(j, d));
  }
  if (n == 0) throw Error("bag has no valid patches");
  double eta = 0.0;
  for (int d = 0; d < k; ++d) eta += w[static_cast<std::size_t>(d)] * mean[static_cast<std::size_t>(d)] / n;
  return eta;
}

/// Exact quantiles of T for a patient, as fractions of time_scale.
inline std::vector<double> true_quantiles(const CohortTruth& truth, const std::string& patient_id,
                                          const std::vector<double>& probs) {
  const PatientTruth& p = truth.patient(patient_id);
  std::vector<double> out;
  out.reserve(probs.size());
  for (double q : probs) {
    if (!(q > 0.0 && q < 1.0)) {
      if (truth.noise_sd == 0.0 && q >= 0.0 && q <= 1.0) {
        out.push_back(logistic(p.location));
        continue;
      }
      if (q == 0.0) { out.push_back(0.0); continue; }
      if (q == 1.0) { out.push_back(1.0); continue; }
      throw Error("quantile probabilities must lie in [0,1]");
    }
    out.push_back(logistic(p.location + truth.noise_sd * logit(q)));
  }
  return out;
}

/// Draws one event time (fraction of time_scale) from a patient's true law.
inline double sample_true_time(const CohortTruth& truth, const std::string& patient_id, std::mt19937_64& rng) {
  const PatientTruth& p = truth.patient(patient_id);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double q = u(rng);
  while (q <= 0.0) q = u(rng);
  return logistic(p.location + truth.noise_sd * logit(q));
}

namespace detail {
/// Smallest censoring horizon whose expected censoring fraction on `times` equals `rate`.
inline double calibrate_censor_max(const std::vector<double>& times, double rate) {
  if (rate <= 0.0) return std::numeric_limits<double>::infinity();
  auto censored_fraction = [&](double cmax) {
    double acc = 0.0;
    for (double t : times) acc += std::min(t, cmax) / cmax;
    return acc / static_cast<double>(times.size());
  };
  double lo = 1e-12, hi = 1.0;
  while (censored_fraction(hi) > rate) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (censored_fraction(mid) > rate) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

inline std::mt19937_64 patient_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

inline std::string patient_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "P%05d", i);
  return buf;
}
}  // namespace detail

inline SyntheticCohort generate_cohort(const SynthSpec& spec) {
  spec.validate();
  SyntheticCohort out;
  CohortTruth& truth = out.truth;
  truth.noise_sd = spec.noise_sd;
  truth.time_scale = spec.time_scale;
  truth.signal_dim = spec.signal_dim;

  {
    auto rng = detail::patient_rng(spec.seed, 0xFFFFFFFFu, 0);
    std::normal_distribution<double> n01(0.0, 1.0);
    truth.w.resize(static_cast<std::size_t>(spec.signal_dim));
    double norm = 0.0;
    for (double& v : truth.w) {
      v = n01(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : truth.w) v *= spec.signal_scale / norm;
  }

  const int n_regions = spec.m / spec.s;
  const int pw = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.s))));
  const int ph = (spec.s + pw - 1) / pw;
  const int rw = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_regions))));

  std::vector<double> event_times;
  for (int i = 0; i < spec.n_patients; ++i) {
    auto rng = detail::patient_rng(spec.seed, static_cast<std::uint64_t>(i), 1);
    std::normal_distribution<double> n01(0.0, 1.0);
    FeatureBag bag;
    bag.patient_id = detail::patient_name(i);
    bag.patches_per_region = spec.s;
    bag.features.resize(spec.m, spec.c);
    bag.coords.resize(spec.m, 2);
    bag.region_ids.resize(static_cast<std::size_t>(spec.m));
    bag.valid.assign(static_cast<std::size_t>(spec.m), 1);

    std::vector<double> z(static_cast<std::size_t>(spec.signal_dim));
    for (double& v : z) v = n01(rng);
    for (int j = 0; j < spec.m; ++j) {
      const int r = j / spec.s, p = j % spec.s;
      bag.region_ids[static_cast<std::size_t>(j)] = r;
      bag.coords(j, 0) = (r / rw) * ph + p / pw;
      bag.coords(j, 1) = (r % rw) * pw + p % pw;
      for (int d = 0; d < spec.c; ++d) {
        const double noise = n01(rng);
        const double v = d < spec.signal_dim ? z[static_cast<std::size_t>(d)] + spec.noise_sd * noise : noise;
        bag.features(j, d) = static_cast<float>(v);
      }
    }

    PatientTruth pt;
    pt.location = signal_location(bag, truth.w);
    pt.t_median = logistic(pt.location);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double q = u(rng);
    while (q <= 0.0) q = u(rng);
    pt.t_star = spec.noise_sd == 0.0 ? pt.t_median : logistic(pt.location + spec.noise_sd * logit(q));
    event_times.push_back(pt.t_star);
    truth.patients.emplace(bag.patient_id, pt);

    ManifestEntry e;
    e.patient_id = bag.patient_id;
    e.bag_path = bag.patient_id + ".amb";
    out.manifest.entries.push_back(e);
    out.bags.push_back(std::move(bag));
  }

  truth.censor_max = detail::calibrate_censor_max(event_times, spec.censor_rate);
  for (int i = 0; i < spec.n_patients; ++i) {
    auto rng = detail::patient_rng(spec.seed, static_cast<std::uint64_t>(i), 2);
    const double t = event_times[static_cast<std::size_t>(i)];
    SurvivalRecord rec;
    if (std::isfinite(truth.censor_max)) {
      std::uniform_real_distribution<double> u(0.0, truth.censor_max);
      const double c = u(rng);
      rec.delta = c < t ? 1 : 0;
      rec.t_raw = spec.time_scale * std::min(t, c);
    } else {
      rec.t_raw = spec.time_scale * t;
    }
    out.manifest.entries[static_cast<std::size_t>(i)].label = rec;
  }
  return out;
}

inline nlohmann::json truth_to_json(const CohortTruth& truth) {
  nlohmann::json j;
  j["w"] = truth.w;
  j["noise_law"] = truth.noise_law;
  j["noise_sd"] = truth.noise_sd;
  j["time_scale"] = truth.time_scale;
  j["censor_max"] = std::isfinite(truth.censor_max) ? nlohmann::json(truth.censor_max) : nlohmann::json(nullptr);
  j["signal_dim"] = truth.signal_dim;
  nlohmann::json pats = nlohmann::json::object();
  for (const auto& [id, p] : truth.patients)
    pats[id] = {{"location", p.location}, {"t_star", p.t_star}, {"t_median", p.t_median}};
  j["patients"] = pats;
  return j;
}

inline CohortTruth truth_from_json(const nlohmann::json& j) {
  CohortTruth truth;
  try {
    truth.w = j.at("w").get<std::vector<double>>();
    truth.noise_law = j.at("noise_law").get<std::string>();
    if (truth.noise_law != "logistic") throw Error("unsupported noise law: " + truth.noise_law);
    truth.noise_sd = j.at("noise_sd").get<double>();
    truth.time_scale = j.at("time_scale").get<double>();
    truth.censor_max = j.at("censor_max").is_null() ? std::numeric_limits<double>::infinity()
                                                    : j.at("censor_max").get<double>();
    truth.signal_dim = j.at("signal_dim").get<int>();
    for (const auto& [id, p] : j.at("patients").items())
      truth.patients[id] = {p.at("location").get<double>(), p.at("t_star").get<double>(), p.at("t_median").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed truth sidecar: ") + e.what());
  }
  return truth;
}

inline void write_truth(const CohortTruth& truth, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write truth sidecar: " + path.string());
  os << truth_to_json(truth).dump(1) << '\n';
}

inline CohortTruth read_truth(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("missing truth sidecar: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed truth sidecar: ") + e.what());
  }
  return truth_from_json(j);
}

}  // namespace advmil
