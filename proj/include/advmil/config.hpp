// Run configuration: a nested JSON document whose keys mirror the config
// structs, plus dotted-path overrides from the command line.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "advmil/trainer.hpp"
#include "json.hpp"

namespace advmil {

/// Bad or missing configuration. The CLI maps this to a usage error.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct PathsConfig {
  std::string manifest;
  std::string bag_dir;
  std::string output_dir = "runs";
  std::string truth;  // optional synthetic truth sidecar
};

struct EvalConfig {
  int n_draws = 30;
  std::vector<double> mask_ratios{0.0, 0.25, 0.5, 0.75, 0.9, 0.99};
};

struct RunConfig {
  PathsConfig paths;
  TrainConfig train;
  ModelConfig model;
  EvalConfig eval;
  std::uint64_t seed = 0;
  int fold = 0;
  double labeled_ratio = 1.0;

  void validate() const {
    try {
      train.validate();
      model.weights.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    if (eval.n_draws < 1) throw ConfigError("eval.n_draws must be >= 1");
    for (double r : eval.mask_ratios)
      if (!(r >= 0.0 && r < 1.0)) throw ConfigError("eval.mask_ratios entries must be in [0,1)");
    if (fold < 0 || fold >= kNumFolds) throw ConfigError("fold must be in 0..4");
    if (!(labeled_ratio > 0.0 && labeled_ratio <= 1.0)) throw ConfigError("labeled_ratio must be in (0,1]");
    if (model.weights.lambda_adv > 0.0 && !model.generator.noise.any())
      throw ConfigError("model.generator.noise.code 00 is only allowed with model.loss.lambda_adv = 0");
    if (model.generator.encoder.in_dim != model.discriminator.in_dim)
      throw ConfigError("model.generator.in_dim and model.discriminator.in_dim must match");
  }
};

// ---------------------------------------------------------------------------
// JSON mapping

inline nlohmann::json model_to_json(const ModelConfig& m) {
  const auto& g = m.generator;
  const auto& d = m.discriminator;
  return {
      {"generator",
       {{"encoder", to_string(g.encoder.kind)},
        {"in_dim", g.encoder.in_dim},
        {"out_dim", g.encoder.out_dim},
        {"attn_dim", g.encoder.attn_dim},
        {"mlp_hidden", g.mlp_hidden},
        {"noise", {{"family", to_string(g.noise.family)}, {"code", g.noise.code()}}}}},
      {"discriminator",
       {{"in_dim", d.in_dim},
        {"d", d.d},
        {"phi_hidden", d.phi_hidden},
        {"attn_dim", d.attn_dim},
        {"fusion", to_string(d.fusion)}}},
      {"loss", {{"lambda_adv", m.weights.lambda_adv}, {"lambda_sl", m.weights.lambda_sl}}},
  };
}

inline nlohmann::json train_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"grad_accum", t.grad_accum},
          {"patience", t.patience},
          {"warmup", t.warmup},
          {"lr_g", t.lr_g},
          {"lr_d", t.lr_d},
          {"optimizer", t.optimizer},
          {"weight_decay", t.weight_decay},
          {"lr_decay_factor", t.lr_decay_factor},
          {"lr_decay_patience", t.lr_decay_patience},
          {"k_folds_unlabeled", t.k_folds_unlabeled},
          {"val_draws", t.val_draws}};
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"paths",
           {{"manifest", c.paths.manifest},
            {"bag_dir", c.paths.bag_dir},
            {"output_dir", c.paths.output_dir},
            {"truth", c.paths.truth}}},
          {"train", train_to_json(c.train)},
          {"model", model_to_json(c.model)},
          {"eval", {{"n_draws", c.eval.n_draws}, {"mask_ratios", c.eval.mask_ratios}}},
          {"seed", c.seed},
          {"fold", c.fold},
          {"labeled_ratio", c.labeled_ratio}};
}

namespace detail {

/// Reads keys of one JSON object, rejecting unknown keys and type mismatches.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("invalid value for " + child(key) + ": " + it->dump());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  const nlohmann::json* object(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key: " + child(k.c_str()));
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_train(const nlohmann::json& j, TrainConfig& t) {
  ObjectReader r(j, "train");
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("grad_accum", t.grad_accum);
  r.get("patience", t.patience);
  r.get("warmup", t.warmup);
  r.get("lr_g", t.lr_g);
  r.get("lr_d", t.lr_d);
  r.get("optimizer", t.optimizer);
  r.get("weight_decay", t.weight_decay);
  r.get("lr_decay_factor", t.lr_decay_factor);
  r.get("lr_decay_patience", t.lr_decay_patience);
  r.get("k_folds_unlabeled", t.k_folds_unlabeled);
  r.get("val_draws", t.val_draws);
  r.finish();
}

template <class F>
auto parse_enum(const std::string& key, const std::string& value, F&& f) {
  try {
    return f(value);
  } catch (const Error&) {
    throw ConfigError("invalid value for " + key + ": " + value);
  }
}

inline void read_model(const nlohmann::json& j, ModelConfig& m) {
  ObjectReader r(j, "model");
  if (const auto* g = r.object("generator")) {
    ObjectReader gr(*g, "model.generator");
    std::string kind = to_string(m.generator.encoder.kind);
    gr.get("encoder", kind);
    m.generator.encoder.kind = parse_enum("model.generator.encoder", kind, encoder_kind_from_string);
    gr.get("in_dim", m.generator.encoder.in_dim);
    gr.get("out_dim", m.generator.encoder.out_dim);
    gr.get("attn_dim", m.generator.encoder.attn_dim);
    gr.get("mlp_hidden", m.generator.mlp_hidden);
    if (const auto* n = gr.object("noise")) {
      ObjectReader nr(*n, "model.generator.noise");
      std::string family = to_string(m.generator.noise.family), code = m.generator.noise.code();
      nr.get("family", family);
      nr.get("code", code);
      nr.finish();
      const NoiseFamily fam = parse_enum("model.generator.noise.family", family, noise_family_from_string);
      m.generator.noise = parse_enum("model.generator.noise.code", code,
                                     [&](const std::string& c) { return NoiseSpec::from_code(c, fam); });
    }
    gr.finish();
  }
  if (const auto* d = r.object("discriminator")) {
    ObjectReader dr(*d, "model.discriminator");
    dr.get("in_dim", m.discriminator.in_dim);
    dr.get("d", m.discriminator.d);
    dr.get("phi_hidden", m.discriminator.phi_hidden);
    dr.get("attn_dim", m.discriminator.attn_dim);
    std::string fusion = to_string(m.discriminator.fusion);
    dr.get("fusion", fusion);
    m.discriminator.fusion = parse_enum("model.discriminator.fusion", fusion, fusion_kind_from_string);
    dr.finish();
  }
  if (const auto* l = r.object("loss")) {
    ObjectReader lr(*l, "model.loss");
    lr.get("lambda_adv", m.weights.lambda_adv);
    lr.get("lambda_sl", m.weights.lambda_sl);
    lr.finish();
  }
  r.finish();
}

}  // namespace detail

/// Builds a RunConfig from JSON. Absent keys keep their defaults; unknown keys
/// and ill-typed values raise ConfigError.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::ObjectReader r(j, "");
  if (const auto* p = r.object("paths")) {
    detail::ObjectReader pr(*p, "paths");
    pr.get("manifest", c.paths.manifest);
    pr.get("bag_dir", c.paths.bag_dir);
    pr.get("output_dir", c.paths.output_dir);
    pr.get("truth", c.paths.truth);
    pr.finish();
  }
  if (const auto* t = r.object("train")) detail::read_train(*t, c.train);
  if (const auto* m = r.object("model")) detail::read_model(*m, c.model);
  if (const auto* e = r.object("eval")) {
    detail::ObjectReader er(*e, "eval");
    er.get("n_draws", c.eval.n_draws);
    er.get("mask_ratios", c.eval.mask_ratios);
    er.finish();
  }
  r.get("seed", c.seed);
  r.get("fold", c.fold);
  r.get("labeled_ratio", c.labeled_ratio);
  r.finish();
  c.train.seed = c.seed;
  return c;
}

inline nlohmann::json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + origin + ": " + e.what());
  }
}

inline nlohmann::json load_config_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_json_text(ss.str(), path.string());
}

/// Applies "a.b.c=value" to a config document. The value is parsed as JSON
/// when possible and taken as a plain string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("bad override key: " + key);
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override path runs through a non-object: " + key);
      *node = nlohmann::json::object();
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

inline void write_resolved_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << to_json(c).dump(2) << '\n';
}

}  // namespace advmil
