#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "advmil/evaluation.hpp"
#include "advmil/synthetic_cohort.hpp"

using namespace advmil;
namespace fs = std::filesystem;

namespace {

// O(n²) pair enumeration: i is an observed event, j has a strictly later time.
double brute_c_index(const std::vector<RiskRecord>& r, ConcordanceCounts* counts = nullptr) {
  std::int64_t conc = 0, tied = 0, comp = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i].delta != 0) continue;
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (!(r[j].t > r[i].t)) continue;
      ++comp;
      if (r[i].risk > r[j].risk) ++conc;
      else if (r[i].risk == r[j].risk) ++tied;
    }
  }
  if (counts) *counts = {conc, tied, comp};
  return (conc + 0.5 * tied) / comp;
}

std::vector<RiskRecord> random_records(int n, std::mt19937_64& rng, int time_levels = 0, int risk_levels = 0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RiskRecord> out;
  for (int i = 0; i < n; ++i) {
    RiskRecord r;
    r.t = time_levels ? static_cast<double>(rng() % static_cast<unsigned>(time_levels)) : u(rng);
    r.risk = risk_levels ? static_cast<double>(rng() % static_cast<unsigned>(risk_levels)) : u(rng);
    r.delta = u(rng) < 0.3 ? 1 : 0;
    out.push_back(r);
  }
  return out;
}

Sample make(const std::string& id, int regions, int s, std::mt19937_64& rng, double t, int delta, int c = 4) {
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureBag b;
  b.patient_id = id;
  b.patches_per_region = s;
  const int m = regions * s;
  b.features.resize(m, c);
  b.coords.resize(m, 2);
  for (int j = 0; j < m; ++j) {
    for (int k = 0; k < c; ++k) b.features(j, k) = static_cast<float>(n(rng));
    b.coords(j, 0) = j;
    b.coords(j, 1) = 0;
    b.region_ids.push_back(j / s);
    b.valid.push_back(1);
  }
  return make_sample(b, SurvivalRecord{t, t, delta});
}

Generator small_generator(std::uint64_t seed = 1) {
  GeneratorConfig g;
  g.encoder.kind = EncoderKind::attention;
  g.encoder.in_dim = 4;
  g.encoder.out_dim = 6;
  g.encoder.attn_dim = 3;
  g.mlp_hidden = 5;
  Rng rng(seed);
  return Generator(g, rng);
}

std::vector<Sample> labeled_set(int n, int regions, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    const double t = u(rng);
    out.push_back(make("p" + std::to_string(i), regions, 2, rng, t, u(rng) < 0.3 ? 1 : 0));
  }
  return out;
}

}  // namespace

TEST(CIndex, SmallExample) {
  // Events at 1 and 2, censored at 3. Comparable pairs: (1,2), (1,3), (2,3).
  // Risks 0.9, 0.2, 0.5: (1,2) concordant, (1,3) concordant, (2,3) discordant.
  const std::vector<RiskRecord> r{{1.0, 0, 0.9}, {2.0, 0, 0.2}, {3.0, 1, 0.5}};
  const ConcordanceCounts c = concordance_counts(r);
  EXPECT_EQ(c.comparable, 3);
  EXPECT_EQ(c.concordant, 2);
  EXPECT_EQ(c.tied, 0);
  EXPECT_DOUBLE_EQ(c.value(), 2.0 / 3.0);
}

TEST(CIndex, PerfectAndReversedOrdering) {
  std::vector<RiskRecord> r;
  for (int i = 0; i < 10; ++i) r.push_back({static_cast<double>(i), 0, -static_cast<double>(i)});
  EXPECT_EQ(c_index(r), 1.0);
  for (auto& x : r) x.risk = -x.risk;
  EXPECT_EQ(c_index(r), 0.0);
  for (auto& x : r) x.risk = 1.0;
  EXPECT_EQ(c_index(r), 0.5);
}

TEST(CIndex, MatchesBruteForceExactly) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 60);
    // Mix continuous values with heavy ties in time and risk.
    const auto r = random_records(n, rng, trial % 3 == 0 ? 5 : 0, trial % 2 == 0 ? 4 : 0);
    ConcordanceCounts want;
    brute_c_index(r, &want);
    const ConcordanceCounts got = concordance_counts(r);
    ASSERT_EQ(got.comparable, want.comparable) << trial;
    ASSERT_EQ(got.concordant, want.concordant) << trial;
    ASSERT_EQ(got.tied, want.tied) << trial;
    if (want.comparable > 0) ASSERT_EQ(got.value(), brute_c_index(r));
  }
}

TEST(CIndex, RandomRisksAverageOneHalf) {
  std::mt19937_64 rng(2);
  double sum = 0.0;
  const int trials = 400;
  for (int i = 0; i < trials; ++i) sum += c_index(random_records(50, rng));
  EXPECT_NEAR(sum / trials, 0.5, 0.01);
}

TEST(CIndex, InvariantToMonotoneRiskTransforms) {
  std::mt19937_64 rng(3);
  auto r = random_records(80, rng);
  const double base = c_index(r);
  for (auto& x : r) x.risk = std::exp(3.0 * x.risk) - 7.0;
  EXPECT_EQ(c_index(r), base);
}

TEST(CIndex, InvariantToRecordOrder) {
  std::mt19937_64 rng(4);
  auto r = random_records(70, rng, 8, 6);
  const ConcordanceCounts base = concordance_counts(r);
  std::shuffle(r.begin(), r.end(), rng);
  const ConcordanceCounts c = concordance_counts(r);
  EXPECT_EQ(c.concordant, base.concordant);
  EXPECT_EQ(c.tied, base.tied);
  EXPECT_EQ(c.comparable, base.comparable);
}

TEST(CIndex, UndefinedWithoutComparablePairs) {
  const std::vector<RiskRecord> censored{{1.0, 1, 0.1}, {2.0, 1, 0.3}};
  EXPECT_THROW(c_index(censored), Error);
  const std::vector<RiskRecord> same_time{{1.0, 0, 0.1}, {1.0, 0, 0.3}};
  EXPECT_THROW(c_index(same_time), Error);
  EXPECT_THROW(c_index(std::vector<RiskRecord>{}), Error);
  try {
    c_index(censored);
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("C-Index undefined"), std::string::npos);
  }
}

TEST(Mae, UsesSupervisionForm) {
  const std::vector<TimePair> p{{0.3, 0.5, 0}, {0.6, 0.4, 0}, {0.2, 0.7, 1}, {0.9, 0.1, 1}};
  // Events: (0.2 + 0.2)/2; censored: (0.5 + 0)/2.
  EXPECT_NEAR(mae(p), 0.2 + 0.25, 1e-15);
  EXPECT_EQ(mae(p), sl_loss(p));
}

TEST(Evaluate, RiskIsNegatedMedianAndSeeded) {
  Generator g = small_generator();
  const auto data = labeled_set(25, 3, 5);
  const EvalReport a = evaluate(g, data, 7, 42);
  const EvalReport b = evaluate(g, data, 7, 42);
  ASSERT_EQ(a.patients.size(), 25u);
  std::vector<RiskRecord> r;
  std::vector<TimePair> tp;
  for (std::size_t i = 0; i < a.patients.size(); ++i) {
    const auto& p = a.patients[i];
    EXPECT_EQ(p.draws.size(), 7u);
    EXPECT_EQ(p.draws, b.patients[i].draws);
    auto sorted = p.draws;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(p.median, sorted[3]);
    r.push_back({p.t, p.delta, -p.median});
    tp.push_back({p.median, p.t, p.delta});
  }
  EXPECT_EQ(a.c_index, brute_c_index(r));
  EXPECT_EQ(a.mae, sl_loss(tp));
}

TEST(Evaluate, OrderOfPatientsDoesNotMatter) {
  Generator g = small_generator();
  auto data = labeled_set(20, 3, 6);
  const EvalReport a = evaluate(g, data, 5, 9);
  std::mt19937_64 rng(1);
  std::shuffle(data.begin(), data.end(), rng);
  const EvalReport b = evaluate(g, data, 5, 9);
  EXPECT_EQ(a.c_index, b.c_index);
  EXPECT_EQ(a.mae, b.mae);
}

TEST(Evaluate, UnlabeledSampleIsAnError) {
  Generator g = small_generator();
  auto data = labeled_set(3, 2, 7);
  data[1].labeled = false;
  EXPECT_THROW(evaluate(g, data, 3, 1), Error);
}

TEST(Occlusion, RegionsKept) {
  EXPECT_EQ(regions_kept(100, 0.99), 1);
  EXPECT_EQ(regions_kept(4, 0.5), 2);
  EXPECT_EQ(regions_kept(4, 0.0), 4);
  EXPECT_EQ(regions_kept(10, 0.25), 8);  // ceil(7.5)
  EXPECT_EQ(regions_kept(1, 0.9), 1);
  EXPECT_EQ(regions_kept(210, 0.75), 53);
  EXPECT_THROW(regions_kept(4, 1.0), Error);
  EXPECT_THROW(regions_kept(4, -0.1), Error);
}

TEST(Occlusion, KeepRegionsSelectsWholeRegions) {
  std::mt19937_64 rng(8);
  const Sample s = make("a", 5, 3, rng, 0.5, 0);
  const PreparedBag kept = keep_regions(s.bag, {3, 1});
  EXPECT_EQ(kept.n_regions(), 2);
  EXPECT_EQ(kept.n_rows(), 6);
  // Region order is preserved: rows of region 1 first, then region 3.
  for (int j = 0; j < 3; ++j) {
    EXPECT_EQ(kept.features.row(j), s.bag.features.row(3 + j));
    EXPECT_EQ(kept.features.row(3 + j), s.bag.features.row(9 + j));
  }
  EXPECT_NEAR(kept.region_pool.row(0).sum(), 1.0, 1e-15);
  Rng r(1);
  const PreparedBag occ = occlude_regions(s.bag, 0.99, r);
  EXPECT_EQ(occ.n_regions(), 1);
  EXPECT_EQ(occ.n_rows(), 3);
  const PreparedBag same = occlude_regions(s.bag, 0.0, r);
  EXPECT_EQ(same.features, s.bag.features);
}

TEST(Occlusion, ZeroRatioReproducesEvaluationExactly) {
  Generator g = small_generator();
  const auto data = labeled_set(30, 4, 9);
  const EvalReport rep = evaluate(g, data, 9, 123);
  const std::vector<double> ratios{0.0, 0.5, 0.75};
  const auto curve = occlusion_sweep(g, data, ratios, 9, 123);
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_EQ(curve[0].mask_ratio, 0.0);
  EXPECT_EQ(curve[0].c_index, rep.c_index);
  for (const auto& p : curve) {
    EXPECT_GE(p.c_index, 0.0);
    EXPECT_LE(p.c_index, 1.0);
  }
  EXPECT_EQ(occlusion_sweep(g, data, ratios, 9, 123)[2].c_index, curve[2].c_index);
}

TEST(Perturb, AddsNoiseOfRequestedScale) {
  std::mt19937_64 rng(10);
  const Sample s = make("a", 50, 4, rng, 0.5, 0, 8);
  Rng r(2);
  const PreparedBag p = perturb_features(s.bag, 0.5, r);
  const Matrix diff = p.features - s.bag.features;
  const double sd = std::sqrt(diff.squaredNorm() / static_cast<double>(diff.size()));
  EXPECT_NEAR(sd, 0.5, 0.03);
  EXPECT_EQ(p.region_pool, s.bag.region_pool);
  Rng r0(2);
  EXPECT_EQ(perturb_features(s.bag, 0.0, r0).features, s.bag.features);
}

TEST(Quantile, LinearInterpolation) {
  const std::vector<double> v{1.0, 2.0, 4.0, 8.0};
  EXPECT_EQ(empirical_quantile(v, 0.0), 1.0);
  EXPECT_EQ(empirical_quantile(v, 1.0), 8.0);
  EXPECT_NEAR(empirical_quantile(v, 0.5), 3.0, 1e-15);
  EXPECT_NEAR(empirical_quantile(v, 0.9), 4.0 + 0.7 * 4.0, 1e-12);
  EXPECT_EQ(empirical_quantile(std::vector<double>{5.0}, 0.3), 5.0);
  EXPECT_THROW(empirical_quantile(std::vector<double>{}, 0.5), Error);
  EXPECT_THROW(empirical_quantile(v, 1.5), Error);
}

TEST(Coverage, DegenerateSamplers) {
  SynthSpec spec;
  spec.n_patients = 30;
  spec.m = 16;
  spec.c = 4;
  spec.signal_dim = 2;
  const auto cohort = generate_cohort(spec);
  std::vector<std::string> ids;
  for (const auto& b : cohort.bags) ids.push_back(b.patient_id);
  const std::optional<CohortTruth> truth = cohort.truth;
  // A point mass on the realized time always covers it; a point mass elsewhere never does.
  TimeSampler exact = [&](const std::string& id, Rng&) { return cohort.truth.patient(id).t_star; };
  TimeSampler wrong = [&](const std::string& id, Rng&) { return cohort.truth.patient(id).t_star + 0.5; };
  EXPECT_EQ(coverage_check(exact, ids, truth, 1.0, 10, 1), 1.0);
  EXPECT_EQ(coverage_check(wrong, ids, truth, 1.0, 10, 1), 0.0);
  // truth_to_model rescales the realized time before comparison.
  TimeSampler doubled = [&](const std::string& id, Rng&) { return 2.0 * cohort.truth.patient(id).t_star; };
  EXPECT_EQ(coverage_check(doubled, ids, truth, 2.0, 10, 1), 1.0);
}

TEST(Coverage, OracleSamplerCoversEightyPercent) {
  SynthSpec spec;
  spec.n_patients = 600;
  spec.m = 16;
  spec.c = 4;
  spec.signal_dim = 2;
  spec.seed = 3;
  const auto cohort = generate_cohort(spec);
  std::vector<std::string> ids;
  for (const auto& b : cohort.bags) ids.push_back(b.patient_id);
  TimeSampler oracle = [&](const std::string& id, Rng& rng) { return sample_true_time(cohort.truth, id, rng); };
  const double cov = coverage_check(oracle, ids, cohort.truth, 1.0, 200, 5);
  EXPECT_NEAR(cov, 0.8, 0.05);
}

TEST(Coverage, MissingTruthIsAnError) {
  TimeSampler s = [](const std::string&, Rng&) { return 0.5; };
  const std::vector<std::string> ids{"a"};
  try {
    coverage_check(s, ids, std::nullopt, 1.0, 10, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("truth sidecar"), std::string::npos);
  }
}

TEST(Spearman, RanksAndTies) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_NEAR(spearman(x, std::vector<double>{2, 4, 6, 8, 100}), 1.0, 1e-15);
  EXPECT_NEAR(spearman(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0, 1e-15);
  // Ties take average ranks: y ranks are 1.5,1.5,3,4,5.
  const std::vector<double> y{7, 7, 8, 9, 10};
  const double rx[] = {1, 2, 3, 4, 5}, ry[] = {1.5, 1.5, 3, 4, 5};
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 5; ++i) {
    sxy += (rx[i] - 3) * (ry[i] - 3);
    sxx += (rx[i] - 3) * (rx[i] - 3);
    syy += (ry[i] - 3) * (ry[i] - 3);
  }
  EXPECT_NEAR(spearman(x, y), sxy / std::sqrt(sxx * syy), 1e-15);
  EXPECT_THROW(spearman(x, std::vector<double>{1, 2}), Error);
}

TEST(Report, JsonRoundTrip) {
  EvalReport r;
  r.c_index = 0.71;
  r.mae = 0.123456789;
  r.seed = 18446744073709551615ULL;
  r.n_draws = 3;
  r.checkpoint = "abc123";
  r.patients.push_back({"p1", {0.1, 0.2, 0.3}, 0.2, 0.4, 1});
  r.occlusion.push_back({0.5, 0.66});
  EvalReport back = report_from_json(report_to_json(r));
  EXPECT_EQ(back.c_index, r.c_index);
  EXPECT_EQ(back.mae, r.mae);
  EXPECT_EQ(back.seed, r.seed);
  EXPECT_EQ(back.checkpoint, "abc123");
  EXPECT_EQ(back.patients[0].draws, r.patients[0].draws);
  EXPECT_EQ(back.patients[0].delta, 1);
  EXPECT_EQ(back.occlusion[0].c_index, 0.66);
  EXPECT_FALSE(back.coverage.has_value());
  EXPECT_TRUE(report_to_json(r).at("coverage").is_null());
  r.coverage = 0.8;
  EXPECT_EQ(*report_from_json(report_to_json(r)).coverage, 0.8);
  EXPECT_THROW(report_from_json(nlohmann::json::object()), Error);
}

TEST(Report, OcclusionCsv) {
  const fs::path p = fs::temp_directory_path() / ("advmil_occ_" + std::to_string(::getpid()) + ".csv");
  const std::vector<OcclusionPoint> curve{{0.0, 0.8}, {0.5, 0.7}};
  write_occlusion_csv(curve, p);
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "mask_ratio,c_index");
  std::getline(is, line);
  EXPECT_EQ(line, "0,0.80000000000000004");
  fs::remove(p);
}
