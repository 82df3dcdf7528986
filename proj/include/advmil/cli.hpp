// Command-line front end: synth, build, train, train-semi, eval, occlude, plot.
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "advmil/checkpoint.hpp"
#include "advmil/config.hpp"
#include "advmil/evaluation.hpp"
#include "advmil/patching.hpp"
#include "advmil/plot.hpp"
#include "advmil/synthetic_cohort.hpp"
#include "advmil/trainer.hpp"
#include "json.hpp"

namespace advmil::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Options shared by every config-driven subcommand.
struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_name;
};

inline fs::path output_root(const RunConfig& cfg) {
  if (const char* env = std::getenv("ADVMIL_OUTPUT_ROOT"); env != nullptr && *env != '\0') return env;
  return cfg.paths.output_dir;
}

inline fs::path make_run_dir(const RunConfig& cfg, const std::string& name) {
  const fs::path dir = output_root(cfg) / name;
  fs::create_directories(dir);
  return dir;
}

/// Loads the config file, applies overrides and resolves relative paths
/// against the config file's directory.
inline RunConfig load_run_config(const CommonOptions& opt, const std::vector<std::string>& extra_overrides = {}) {
  if (opt.config_path.empty()) throw ConfigError("--config is required");
  nlohmann::json doc = load_config_json(opt.config_path);
  for (const auto& o : opt.overrides) apply_override(doc, o);
  for (const auto& o : extra_overrides) apply_override(doc, o);
  RunConfig cfg = run_config_from_json(doc);
  cfg.validate();
  const fs::path base = fs::absolute(opt.config_path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(cfg.paths.manifest);
  resolve(cfg.paths.bag_dir);
  resolve(cfg.paths.output_dir);
  resolve(cfg.paths.truth);
  return cfg;
}

inline void require_data_paths(const RunConfig& cfg) {
  if (cfg.paths.manifest.empty()) throw ConfigError("missing config key: paths.manifest");
  if (cfg.paths.bag_dir.empty()) throw ConfigError("missing config key: paths.bag_dir");
  if (!fs::exists(cfg.paths.manifest)) throw ConfigError("paths.manifest does not exist: " + cfg.paths.manifest);
  if (!fs::is_directory(cfg.paths.bag_dir)) throw ConfigError("paths.bag_dir is not a directory: " + cfg.paths.bag_dir);
  if (!cfg.paths.truth.empty() && !fs::exists(cfg.paths.truth))
    throw ConfigError("paths.truth does not exist: " + cfg.paths.truth);
}

/// Manifest with folds, validation subsets and normalized times for one test fold.
inline CohortManifest prepare_manifest(const RunConfig& cfg) {
  CohortManifest m = read_manifest(cfg.paths.manifest);
  bool unassigned = false;
  for (const auto& e : m.entries) unassigned = unassigned || e.fold < 0;
  m = unassigned ? make_cv_splits(std::move(m), cfg.seed) : assign_validation(std::move(m), cfg.seed);
  return normalize_times(std::move(m), cfg.fold);
}

inline Sample load_sample(const RunConfig& cfg, const ManifestEntry& e) {
  fs::path p = e.bag_path;
  if (p.is_relative()) p = fs::path(cfg.paths.bag_dir) / p;
  const FeatureBag bag = read_bag(p);
  if (bag.patient_id != e.patient_id)
    throw Error("bag file " + p.string() + " holds patient " + bag.patient_id + ", manifest says " + e.patient_id);
  if (bag.c() != cfg.model.generator.encoder.in_dim)
    throw Error("bag " + e.patient_id + " has feature dimension " + std::to_string(bag.c()) + ", model expects " +
                std::to_string(cfg.model.generator.encoder.in_dim));
  return make_sample(bag, e.label);
}

struct LoadedSplit {
  std::vector<Sample> train, validation, unlabeled, test;
};

inline LoadedSplit load_split(const RunConfig& cfg, const CohortManifest& m) {
  const FoldSplit split = fold_split(m, cfg.fold);
  LoadedSplit out;
  auto load = [&](const std::vector<std::size_t>& idx, std::vector<Sample>& dst) {
    for (std::size_t i : idx) dst.push_back(load_sample(cfg, m.entries[i]));
  };
  load(split.train, out.train);
  load(split.validation, out.validation);
  load(split.unlabeled, out.unlabeled);
  load(split.test, out.test);
  return out;
}

inline void write_history(const std::vector<EpochStats>& history, const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os.precision(10);
  os << "epoch,d_loss,g_adv,g_sl,val_sl,lr_g\n";
  for (const auto& h : history)
    os << h.epoch << ',' << h.d_loss << ',' << h.g_adv << ',' << h.g_sl << ',' << h.val_sl << ',' << h.lr_g << '\n';
}

inline void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string checkpoint_id(const ModelBundle& b) {
  return hex64(hash_parameters(b.generator.parameters()) ^ (hash_parameters(b.discriminator.parameters()) << 1));
}

// ---------------------------------------------------------------------------
// Subcommands

struct SynthOptions {
  SynthSpec spec;
  std::string out_dir;
};

inline int cmd_synth(const SynthOptions& opt) {
  try {
    opt.spec.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const fs::path dir = opt.out_dir;
  const fs::path bag_dir = dir / "bags";
  fs::create_directories(bag_dir);
  SyntheticCohort cohort = generate_cohort(opt.spec);
  cohort.manifest = make_cv_splits(std::move(cohort.manifest), opt.spec.seed);
  for (const auto& bag : cohort.bags) write_bag(bag, bag_dir / (bag.patient_id + ".amb"));
  write_manifest(cohort.manifest, dir / "manifest.csv");
  write_truth(cohort.truth, dir / "truth.json");

  RunConfig cfg;
  cfg.paths.manifest = "manifest.csv";
  cfg.paths.bag_dir = "bags";
  cfg.paths.output_dir = "runs";
  cfg.paths.truth = "truth.json";
  cfg.model.generator.encoder.in_dim = opt.spec.c;
  cfg.model.discriminator.in_dim = opt.spec.c;
  cfg.seed = opt.spec.seed;
  write_resolved_config(cfg, dir / "run.json");
  write_json({{"n_patients", opt.spec.n_patients},
              {"m", opt.spec.m},
              {"c", opt.spec.c},
              {"s", opt.spec.s},
              {"signal_dim", opt.spec.signal_dim},
              {"noise_sd", opt.spec.noise_sd},
              {"censor_rate", opt.spec.censor_rate},
              {"seed", opt.spec.seed},
              {"time_scale", opt.spec.time_scale},
              {"signal_scale", opt.spec.signal_scale}},
             dir / "synth_config.json");
  std::cout << dir.string() << '\n';
  return kExitOk;
}

struct BuildOptions {
  std::string coords_csv;
  std::string features_csv;
  std::string patient_id;
  std::string out_path;
  int eta = 4;
};

inline std::vector<std::vector<double>> read_numeric_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        if (rows.empty() && row.empty()) break;  // header line
        throw Error(path.string() + ":" + std::to_string(line_no) + ": not a number: " + cell);
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

inline int cmd_build(const BuildOptions& opt) {
  const auto coords = read_numeric_csv(opt.coords_csv);
  const auto feats = read_numeric_csv(opt.features_csv);
  if (coords.empty()) throw Error("coordinate file is empty");
  PatchGrid grid;
  grid.eta = opt.eta;
  grid.coords.resize(static_cast<Eigen::Index>(coords.size()), 2);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (coords[i].size() != 2) throw Error("coordinate rows must have two columns");
    grid.coords(static_cast<Eigen::Index>(i), 0) = static_cast<std::int32_t>(coords[i][0]);
    grid.coords(static_cast<Eigen::Index>(i), 1) = static_cast<std::int32_t>(coords[i][1]);
  }
  const std::size_t c = feats.empty() ? 0 : feats[0].size();
  FeatureMatrix f(static_cast<Eigen::Index>(feats.size()), static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (feats[i].size() != c) throw Error("feature rows have inconsistent widths");
    for (std::size_t j = 0; j < c; ++j)
      f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<float>(feats[i][j]);
  }
  std::string id = opt.patient_id.empty() ? fs::path(opt.out_path).stem().string() : opt.patient_id;
  if (id != fs::path(opt.out_path).stem().string())
    throw ConfigError("the output file name must be <patient_id>.amb");
  const FeatureBag bag = build_bag(grid, f, id);
  write_bag(bag, opt.out_path);
  std::cout << nlohmann::json{{"patient_id", id}, {"m", bag.m()}, {"c", bag.c()}, {"regions", bag.n_regions()},
                              {"valid", bag.n_valid()}}
                   .dump()
            << '\n';
  return kExitOk;
}

struct TrainOptions {
  CommonOptions common;
  std::optional<int> fold;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
};

inline std::vector<std::string> train_overrides(const TrainOptions& opt) {
  std::vector<std::string> o;
  if (opt.fold) o.push_back("fold=" + std::to_string(*opt.fold));
  if (opt.seed) o.push_back("seed=" + std::to_string(*opt.seed));
  if (opt.epochs) o.push_back("train.epochs=" + std::to_string(*opt.epochs));
  return o;
}

/// Trains on one fold and writes checkpoint, history and a summary.
inline int run_training(const RunConfig& cfg, const std::string& run_name, LoadedSplit data,
                        const std::set<std::string>& masked_ids, nlohmann::json extra) {
  const fs::path dir = make_run_dir(cfg, run_name);
  write_resolved_config(cfg, dir / "resolved_config.json");
  ModelBundle bundle(cfg.model, cfg.seed);
  std::vector<EpochStats> history;
  FitResult r = fit(bundle, data.train, data.unlabeled, data.validation, cfg.train,
                    [&](const EpochStats& st) {
                      history.push_back(st);
                      write_history(history, dir / "history.csv");
                    });
  for (const auto& h : r.history)
    for (const auto& id : h.sl_ids)
      if (masked_ids.count(id) != 0) throw Error("masked label of " + id + " reached the supervision loss");
  write_history(r.history, dir / "history.csv");
  save_checkpoint(bundle, dir / "checkpoint.amc",
                  {{"best_epoch", r.state.best_epoch}, {"best_val_sl", r.state.best_val}, {"fold", cfg.fold}});

  nlohmann::json summary = std::move(extra);
  summary["epochs_run"] = r.history.size();
  summary["best_epoch"] = r.state.best_epoch;
  summary["best_val_sl"] = r.state.best_val;
  summary["checkpoint"] = (dir / "checkpoint.amc").string();
  summary["checkpoint_id"] = checkpoint_id(bundle);
  summary["n_train"] = data.train.size();
  summary["n_unlabeled"] = data.unlabeled.size();
  summary["n_validation"] = data.validation.size();
  summary["n_test"] = data.test.size();
  if (!data.validation.empty()) {
    try {
      summary["val_c_index"] = evaluate(bundle.generator, data.validation, cfg.eval.n_draws, cfg.seed).c_index;
    } catch (const Error&) {
      summary["val_c_index"] = nullptr;
    }
  }
  write_json(summary, dir / "summary.json");
  std::cout << summary.dump() << '\n';
  return kExitOk;
}

inline int cmd_train(const TrainOptions& opt) {
  const RunConfig cfg = load_run_config(opt.common, train_overrides(opt));
  require_data_paths(cfg);
  const CohortManifest m = prepare_manifest(cfg);
  LoadedSplit data = load_split(cfg, m);
  if (data.train.empty()) throw Error("fold has no labeled training patients");
  const std::string name = opt.common.run_name.empty()
                               ? "train-fold" + std::to_string(cfg.fold) + "-seed" + std::to_string(cfg.seed)
                               : opt.common.run_name;
  return run_training(cfg, name, std::move(data), {}, {{"mode", "train"}, {"fold", cfg.fold}, {"t_max", m.t_max}});
}

struct TrainSemiOptions {
  TrainOptions train;
  std::optional<double> labeled_ratio;
  std::optional<int> k;
};

/// Keeps round(ratio·n) training labels (at least one), chosen by a seeded
/// shuffle; the remaining training patients join the unlabeled pool.
inline std::set<std::string> mask_labels(LoadedSplit& data, double ratio, std::uint64_t seed) {
  const std::size_t n = data.train.size();
  const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n))));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed ^ 0x1ABE1ULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> kept(n, false);
  for (std::size_t i = 0; i < std::min(keep, n); ++i) kept[idx[i]] = true;
  std::vector<Sample> labeled;
  std::set<std::string> masked;
  for (std::size_t i = 0; i < n; ++i) {
    Sample& s = data.train[i];
    if (kept[i]) {
      labeled.push_back(std::move(s));
    } else {
      masked.insert(s.id());
      s.labeled = false;
      s.t = std::numeric_limits<double>::quiet_NaN();
      s.delta = -1;
      data.unlabeled.push_back(std::move(s));
    }
  }
  data.train = std::move(labeled);
  return masked;
}

inline int cmd_train_semi(const TrainSemiOptions& opt) {
  auto overrides = train_overrides(opt.train);
  if (opt.labeled_ratio) overrides.push_back("labeled_ratio=" + nlohmann::json(*opt.labeled_ratio).dump());
  if (opt.k) overrides.push_back("train.k_folds_unlabeled=" + std::to_string(*opt.k));
  const RunConfig cfg = load_run_config(opt.train.common, overrides);
  require_data_paths(cfg);
  const CohortManifest m = prepare_manifest(cfg);
  LoadedSplit data = load_split(cfg, m);
  if (data.train.empty()) throw Error("fold has no labeled training patients");
  const auto masked = mask_labels(data, cfg.labeled_ratio, cfg.seed);
  char ratio[32];
  std::snprintf(ratio, sizeof ratio, "%g", cfg.labeled_ratio);
  const std::string name = opt.train.common.run_name.empty()
                               ? "semi-fold" + std::to_string(cfg.fold) + "-r" + ratio + "-k" +
                                     std::to_string(cfg.train.k_folds_unlabeled) + "-seed" + std::to_string(cfg.seed)
                               : opt.train.common.run_name;
  return run_training(cfg, name, std::move(data), masked,
                      {{"mode", "train-semi"},
                       {"fold", cfg.fold},
                       {"labeled_ratio", cfg.labeled_ratio},
                       {"k", cfg.train.k_folds_unlabeled},
                       {"n_masked", masked.size()},
                       {"t_max", m.t_max}});
}

struct EvalOptions {
  CommonOptions common;
  std::string checkpoint;
  std::optional<int> draws;
  std::optional<int> fold;
  std::optional<std::uint64_t> seed;
  std::string split = "test";
  std::vector<double> ratios;
};

struct EvalContext {
  RunConfig cfg;
  std::unique_ptr<ModelBundle> bundle;
  std::vector<Sample> samples;
  CohortManifest manifest;
};

inline EvalContext load_eval_context(const EvalOptions& opt) {
  std::vector<std::string> o;
  if (opt.draws) o.push_back("eval.n_draws=" + std::to_string(*opt.draws));
  if (opt.fold) o.push_back("fold=" + std::to_string(*opt.fold));
  if (opt.seed) o.push_back("seed=" + std::to_string(*opt.seed));
  if (!opt.ratios.empty()) o.push_back("eval.mask_ratios=" + nlohmann::json(opt.ratios).dump());
  EvalContext ctx;
  ctx.cfg = load_run_config(opt.common, o);
  require_data_paths(ctx.cfg);
  if (opt.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(opt.checkpoint)) throw ConfigError("checkpoint does not exist: " + opt.checkpoint);
  if (opt.split != "test" && opt.split != "validation") throw ConfigError("--split must be test or validation");
  ctx.bundle = load_bundle(opt.checkpoint);
  ctx.cfg.model = ctx.bundle->config();
  ctx.manifest = prepare_manifest(ctx.cfg);
  const FoldSplit split = fold_split(ctx.manifest, ctx.cfg.fold);
  for (std::size_t i : opt.split == "test" ? split.test : split.validation)
    ctx.samples.push_back(load_sample(ctx.cfg, ctx.manifest.entries[i]));
  if (ctx.samples.empty()) throw Error("no labeled patients in the " + opt.split + " split");
  return ctx;
}

inline std::string eval_run_name(const EvalOptions& opt, const EvalContext& ctx, const char* verb) {
  if (!opt.common.run_name.empty()) return opt.common.run_name;
  return std::string(verb) + "-" + opt.split + "-fold" + std::to_string(ctx.cfg.fold) + "-seed" +
         std::to_string(ctx.cfg.seed);
}

inline int cmd_eval(const EvalOptions& opt) {
  EvalContext ctx = load_eval_context(opt);
  EvalReport report = evaluate(ctx.bundle->generator, ctx.samples, ctx.cfg.eval.n_draws, ctx.cfg.seed);
  report.checkpoint = checkpoint_id(*ctx.bundle);
  if (!ctx.cfg.paths.truth.empty()) {
    const CohortTruth truth = read_truth(ctx.cfg.paths.truth);
    std::map<std::string, const Sample*> by_id;
    for (const auto& s : ctx.samples) by_id[s.id()] = &s;
    std::vector<std::string> ids;
    for (const auto& s : ctx.samples) ids.push_back(s.id());
    Generator& g = ctx.bundle->generator;
    std::map<std::string, RowVector> z;
    for (const auto& s : ctx.samples) z[s.id()] = g.encode(s.bag);
    const TimeSampler sampler = [&](const std::string& id, Rng& rng) { return g.sample_time(z.at(id), rng); };
    report.coverage = coverage_check(sampler, ids, truth, truth.time_scale / ctx.manifest.t_max, ctx.cfg.eval.n_draws,
                                     ctx.cfg.seed);
  }
  const fs::path dir = make_run_dir(ctx.cfg, eval_run_name(opt, ctx, "eval"));
  write_resolved_config(ctx.cfg, dir / "resolved_config.json");
  write_json(report_to_json(report), dir / "report.json");
  nlohmann::json brief{{"c_index", report.c_index}, {"mae", report.mae}, {"report", (dir / "report.json").string()}};
  if (report.coverage) brief["coverage"] = *report.coverage;
  std::cout << brief.dump() << '\n';
  return kExitOk;
}

inline int cmd_occlude(const EvalOptions& opt) {
  EvalContext ctx = load_eval_context(opt);
  EvalReport report = evaluate(ctx.bundle->generator, ctx.samples, ctx.cfg.eval.n_draws, ctx.cfg.seed);
  report.checkpoint = checkpoint_id(*ctx.bundle);
  report.occlusion = occlusion_sweep(ctx.bundle->generator, ctx.samples, ctx.cfg.eval.mask_ratios,
                                     ctx.cfg.eval.n_draws, ctx.cfg.seed);
  const fs::path dir = make_run_dir(ctx.cfg, eval_run_name(opt, ctx, "occlude"));
  write_resolved_config(ctx.cfg, dir / "resolved_config.json");
  write_json(report_to_json(report), dir / "report.json");
  write_occlusion_csv(report.occlusion, dir / "occlusion.csv");
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : report.occlusion) curve.push_back({p.mask_ratio, p.c_index});
  std::cout << nlohmann::json{{"occlusion", curve}, {"report", (dir / "report.json").string()}}.dump() << '\n';
  return kExitOk;
}

struct PlotOptions {
  std::string report;
  std::string out_dir;
  std::size_t max_patients = 40;
};

inline int cmd_plot(const PlotOptions& opt) {
  if (!fs::exists(opt.report)) throw ConfigError("report does not exist: " + opt.report);
  std::ifstream is(opt.report);
  std::stringstream ss;
  ss << is.rdbuf();
  const EvalReport report = report_from_json(parse_json_text(ss.str(), opt.report));
  const fs::path dir = opt.out_dir.empty() ? fs::path(opt.report).parent_path() : fs::path(opt.out_dir);
  fs::create_directories(dir);
  std::vector<PatientEstimate> shown(report.patients.begin(),
                                     report.patients.begin() +
                                         static_cast<std::ptrdiff_t>(std::min(opt.max_patients, report.patients.size())));
  write_strip_plot(shown, dir / "estimates.svg");
  nlohmann::json out{{"estimates", (dir / "estimates.svg").string()}};
  if (!report.occlusion.empty()) {
    write_occlusion_plot(report.occlusion, dir / "occlusion.svg");
    out["occlusion"] = (dir / "occlusion.svg").string();
  }
  write_json({{"report", opt.report}, {"max_patients", opt.max_patients}}, dir / "plot_config.json");
  std::cout << out.dump() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline void print_error(const char* kind, const std::string& command, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"command", command}, {"message", message}}.dump() << '\n';
}

inline int run(int argc, char** argv) {
  CLI::App app{"Adversarial multiple-instance survival analysis"};
  app.require_subcommand(1);

  auto add_common = [](CLI::App* sub, CommonOptions& c) {
    sub->add_option("--config", c.config_path, "Run config (JSON)")->required();
    sub->add_option("--set", c.overrides, "Override a config key, e.g. --set train.epochs=50");
    sub->add_option("--run-name", c.run_name, "Run directory name under the output root");
  };

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic cohort");
  s->add_option("--out", synth.out_dir, "Output directory")->required();
  s->add_option("--patients", synth.spec.n_patients);
  s->add_option("--m", synth.spec.m, "Patches per bag");
  s->add_option("--c", synth.spec.c, "Feature dimension");
  s->add_option("--s", synth.spec.s, "Patches per region");
  s->add_option("--signal-dim", synth.spec.signal_dim);
  s->add_option("--noise-sd", synth.spec.noise_sd);
  s->add_option("--censor-rate", synth.spec.censor_rate);
  s->add_option("--seed", synth.spec.seed);

  BuildOptions build;
  auto* b = app.add_subcommand("build", "Build a bag container from patch coordinates and features");
  b->add_option("--coords", build.coords_csv, "CSV of x,y grid coordinates")->required();
  b->add_option("--features", build.features_csv, "CSV with one feature row per patch")->required();
  b->add_option("--id", build.patient_id);
  b->add_option("--out", build.out_path, "Output .amb path")->required();
  b->add_option("--eta", build.eta, "Region side length in patches");

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Train on labeled data of one fold");
  add_common(t, train.common);
  t->add_option("--fold", train.fold);
  t->add_option("--seed", train.seed);
  t->add_option("--epochs", train.epochs);

  TrainSemiOptions semi;
  auto* ts = app.add_subcommand("train-semi", "k-fold semi-supervised training with masked labels");
  add_common(ts, semi.train.common);
  ts->add_option("--fold", semi.train.fold);
  ts->add_option("--seed", semi.train.seed);
  ts->add_option("--epochs", semi.train.epochs);
  ts->add_option("--labeled-ratio", semi.labeled_ratio);
  ts->add_option("--k", semi.k);

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(e, ev.common);
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--draws", ev.draws);
  e->add_option("--fold", ev.fold);
  e->add_option("--seed", ev.seed);
  e->add_option("--split", ev.split);

  EvalOptions oc;
  auto* o = app.add_subcommand("occlude", "Region occlusion sweep");
  add_common(o, oc.common);
  o->add_option("--checkpoint", oc.checkpoint)->required();
  o->add_option("--draws", oc.draws);
  o->add_option("--fold", oc.fold);
  o->add_option("--seed", oc.seed);
  o->add_option("--split", oc.split);
  o->add_option("--ratios", oc.ratios, "Mask ratios")->delimiter(',');

  PlotOptions plot;
  auto* p = app.add_subcommand("plot", "Render SVG figures from a report");
  p->add_option("--report", plot.report)->required();
  p->add_option("--out", plot.out_dir);
  p->add_option("--max-patients", plot.max_patients);

  std::string command = argc > 1 ? argv[1] : "";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    print_error("usage", command, ex.what());
    return kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (b->parsed()) return cmd_build(build);
    if (t->parsed()) return cmd_train(train);
    if (ts->parsed()) return cmd_train_semi(semi);
    if (e->parsed()) return cmd_eval(ev);
    if (o->parsed()) return cmd_occlude(oc);
    if (p->parsed()) return cmd_plot(plot);
  } catch (const ConfigError& ex) {
    print_error("usage", command, ex.what());
    return kExitUsage;
  } catch (const std::exception& ex) {
    print_error("runtime", command, ex.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace advmil::cli
