#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "advmil/checkpoint.hpp"
#include "advmil/config.hpp"

using namespace advmil;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("advmil_" + std::to_string(::getpid()) + "_" + name);
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.generator.encoder.kind = EncoderKind::cluster;
  m.generator.encoder.in_dim = 5;
  m.generator.encoder.out_dim = 4;
  m.generator.encoder.attn_dim = 3;
  m.generator.mlp_hidden = 6;
  m.generator.noise = NoiseSpec::from_code("01", NoiseFamily::gaussian01);
  m.discriminator.in_dim = 5;
  m.discriminator.d = 4;
  m.discriminator.phi_hidden = 0;
  m.discriminator.attn_dim = 2;
  m.weights.lambda_adv = 0.5;
  m.weights.lambda_sl = 2.0;
  return m;
}

}  // namespace

TEST(Config, DefaultsValidate) {
  const RunConfig c = run_config_from_json(nlohmann::json::object());
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.train.epochs, 300);
  EXPECT_EQ(c.train.grad_accum, 16);
  EXPECT_EQ(c.model.generator.noise.code(), "11");
  EXPECT_EQ(c.eval.n_draws, 30);
  EXPECT_EQ(c.paths.output_dir, "runs");
}

TEST(Config, ReadsNestedKeys) {
  const auto j = nlohmann::json::parse(R"({
    "paths": {"manifest": "m.csv", "bag_dir": "bags", "truth": "truth.json"},
    "train": {"epochs": 12, "grad_accum": 4, "lr_g": 0.001, "k_folds_unlabeled": 3},
    "model": {
      "generator": {"encoder": "attention", "in_dim": 32, "out_dim": 16, "noise": {"family": "gaussian", "code": "10"}},
      "discriminator": {"in_dim": 32, "d": 8, "fusion": "wsi_projection"},
      "loss": {"lambda_adv": 0.25}
    },
    "eval": {"n_draws": 11, "mask_ratios": [0, 0.5]},
    "seed": 77, "fold": 2, "labeled_ratio": 0.5
  })");
  const RunConfig c = run_config_from_json(j);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.paths.truth, "truth.json");
  EXPECT_EQ(c.train.epochs, 12);
  EXPECT_EQ(c.train.k_folds_unlabeled, 3);
  EXPECT_EQ(c.train.seed, 77u);
  EXPECT_EQ(c.model.generator.encoder.kind, EncoderKind::attention);
  EXPECT_EQ(c.model.generator.noise.family, NoiseFamily::gaussian01);
  EXPECT_EQ(c.model.generator.noise.code(), "10");
  EXPECT_EQ(c.model.discriminator.fusion, FusionKind::wsi_projection);
  EXPECT_EQ(c.model.weights.lambda_adv, 0.25);
  EXPECT_EQ(c.eval.mask_ratios, (std::vector<double>{0.0, 0.5}));
  EXPECT_EQ(c.fold, 2);
  EXPECT_EQ(c.labeled_ratio, 0.5);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c;
  c.model = tiny_model();
  c.train.epochs = 9;
  c.seed = 5;
  c.train.seed = 5;
  c.eval.mask_ratios = {0.1};
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"trian": {}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"train": {"epoch": 3}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"train": {"epochs": "many"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"model": {"generator": {"encoder": "gcn"}}})")),
               ConfigError);
  EXPECT_THROW(parse_json_text("{not json", "inline"), ConfigError);
}

TEST(Config, ValidationErrors) {
  auto invalid = [](const char* text) {
    const RunConfig c = run_config_from_json(nlohmann::json::parse(text));
    EXPECT_THROW(c.validate(), ConfigError) << text;
  };
  invalid(R"({"model": {"generator": {"noise": {"code": "00"}}}})");
  invalid(R"({"model": {"generator": {"in_dim": 16}}})");
  invalid(R"({"fold": 5})");
  invalid(R"({"labeled_ratio": 0})");
  invalid(R"({"train": {"batch_size": 2}})");
  invalid(R"({"eval": {"mask_ratios": [1.0]}})");
  invalid(R"({"model": {"loss": {"lambda_adv": -1}}})");
  // Noise-free generator is fine once the adversarial term is off.
  EXPECT_NO_THROW(run_config_from_json(nlohmann::json::parse(
                      R"({"model": {"generator": {"noise": {"code": "00"}}, "loss": {"lambda_adv": 0}}})"))
                      .validate());
}

TEST(Config, Overrides) {
  nlohmann::json doc = nlohmann::json::object();
  apply_override(doc, "train.epochs=7");
  apply_override(doc, "model.generator.encoder=attention");
  apply_override(doc, "eval.mask_ratios=[0,0.9]");
  apply_override(doc, "model.generator.noise.code=\"01\"");
  EXPECT_EQ(doc["train"]["epochs"], 7);
  EXPECT_EQ(doc["model"]["generator"]["encoder"], "attention");
  EXPECT_EQ(doc["model"]["generator"]["noise"]["code"], "01");
  const RunConfig c = run_config_from_json(doc);
  EXPECT_EQ(c.train.epochs, 7);
  EXPECT_EQ(c.eval.mask_ratios.size(), 2u);
  EXPECT_THROW(apply_override(doc, "noequals"), ConfigError);
  EXPECT_THROW(apply_override(doc, "=3"), ConfigError);
  EXPECT_THROW(apply_override(doc, "train.epochs.deep=3"), ConfigError);
}

TEST(Config, ResolvedConfigFileRoundTrip) {
  RunConfig c;
  c.model = tiny_model();
  const fs::path p = temp_path("resolved.json");
  write_resolved_config(c, p);
  EXPECT_EQ(to_json(run_config_from_json(load_config_json(p))), to_json(c));
  fs::remove(p);
  EXPECT_THROW(load_config_json(p), ConfigError);
}

TEST(Checkpoint, RoundTripRestoresEveryParameter) {
  ModelBundle a(tiny_model(), 3);
  const fs::path p = temp_path("ck.amc");
  save_checkpoint(a, p, {{"epoch", 4}});
  const Checkpoint ck = read_checkpoint(p);
  EXPECT_EQ(ck.meta.at("epoch"), 4);
  EXPECT_EQ(model_to_json(ck.model), model_to_json(a.config()));
  EXPECT_EQ(ck.tensors.size(), a.generator.parameters().size() + a.discriminator.parameters().size());
  EXPECT_TRUE(ck.tensors.count("generator/head.fc1.weight"));
  EXPECT_TRUE(ck.tensors.count("discriminator/phi.fc.weight"));

  const auto loaded = load_bundle(p);
  EXPECT_EQ(hash_parameters(std::as_const(*loaded).generator.parameters()),
            hash_parameters(std::as_const(a).generator.parameters()));
  EXPECT_EQ(hash_parameters(std::as_const(*loaded).discriminator.parameters()),
            hash_parameters(std::as_const(a).discriminator.parameters()));
  EXPECT_EQ(loaded->weights.lambda_sl, 2.0);
  EXPECT_EQ(loaded->generator.config().noise.code(), "01");
  fs::remove(p);
}

TEST(Checkpoint, ShapeAndNameMismatchesAreErrors) {
  ModelBundle a(tiny_model(), 3);
  const fs::path p = temp_path("ck2.amc");
  save_checkpoint(a, p);
  Checkpoint ck = read_checkpoint(p);
  ModelConfig wider = tiny_model();
  wider.generator.mlp_hidden = 7;
  ModelBundle b(wider, 1);
  EXPECT_THROW(load_parameters(b, ck), Error);
  ck.tensors.erase("generator/head.fc2.bias");
  ModelBundle c(tiny_model(), 1);
  EXPECT_THROW(load_parameters(c, ck), Error);
  fs::remove(p);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  ModelBundle a(tiny_model(), 3);
  const fs::path p = temp_path("ck3.amc");
  save_checkpoint(a, p);
  const auto size = fs::file_size(p);
  fs::resize_file(p, size - 8);
  EXPECT_THROW(read_checkpoint(p), Error);
  {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os << "NOPE....";
  }
  EXPECT_THROW(read_checkpoint(p), Error);
  fs::remove(p);
  EXPECT_THROW(read_checkpoint(p), Error);
}
