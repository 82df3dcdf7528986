// Model checkpoint container.
//
// Layout (little-endian): "AMC1", u32 header length, JSON header, then the
// float64 values of every tensor in header order (row-major). The header
// holds the model config, free-form metadata and the tensor table; tensor
// names carry a "generator/" or "discriminator/" namespace prefix.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "advmil/config.hpp"
#include "advmil/trainer.hpp"
#include "json.hpp"

namespace advmil {

inline constexpr char kCheckpointMagic[4] = {'A', 'M', 'C', '1'};

struct Checkpoint {
  ModelConfig model;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Matrix> tensors;
};

namespace detail {
inline std::vector<std::pair<std::string, const Parameter*>> named_parameters(const ModelBundle& b) {
  std::vector<std::pair<std::string, const Parameter*>> out;
  for (const Parameter* p : b.generator.parameters()) out.emplace_back("generator/" + p->name, p);
  for (const Parameter* p : b.discriminator.parameters()) out.emplace_back("discriminator/" + p->name, p);
  return out;
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
  RunConfig c = run_config_from_json(nlohmann::json{{"model", j}});
  return c.model;
}
}  // namespace detail

inline void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  const auto params = detail::named_parameters(bundle);
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, p] : params) table.push_back({{"name", name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  const nlohmann::json header{{"model", model_to_json(bundle.config())}, {"meta", meta}, {"tensors", table}};
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os.write(kCheckpointMagic, 4);
  const auto len = static_cast<std::uint32_t>(text.size());
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, p] : params) {
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        const double v = p->value(r, c);
        os.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
  }
  if (!os) throw Error("failed writing " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw Error("not a checkpoint: " + path.string());
  std::uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || len > (1u << 28)) throw Error("corrupt checkpoint header: " + path.string());
  std::string text(len, '\0');
  is.read(text.data(), len);
  if (!is) throw Error("corrupt checkpoint header: " + path.string());

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.model = detail::model_from_json(header.at("model"));
    ck.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      const auto rows = t.at("rows").get<Eigen::Index>(), cols = t.at("cols").get<Eigen::Index>();
      if (rows < 0 || cols < 0) throw Error("negative tensor shape");
      Matrix m(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
          double v = 0.0;
          is.read(reinterpret_cast<char*>(&v), sizeof v);
          m(r, c) = v;
        }
      if (!is) throw Error("truncated tensor data");
      ck.tensors.emplace(t.at("name").get<std::string>(), std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("corrupt checkpoint " + path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw Error("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  return ck;
}

/// Copies checkpoint tensors into a bundle built from the same config.
inline void load_parameters(ModelBundle& bundle, const Checkpoint& ck) {
  for (const auto& [name, cp] : detail::named_parameters(bundle)) {
    auto* p = const_cast<Parameter*>(cp);
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw Error("checkpoint lacks tensor " + name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw Error("checkpoint tensor " + name + " has the wrong shape");
    p->value = it->second;
  }
}

inline std::unique_ptr<ModelBundle> load_bundle(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  auto bundle = std::make_unique<ModelBundle>(ck.model, 0);
  load_parameters(*bundle, ck);
  return bundle;
}

}  // namespace advmil
