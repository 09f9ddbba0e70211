#pragma once

// One run configuration covering every stage. JSON on disk; unknown keys are
// rejected and `section.key=value` overrides apply on top.

#include "flowface/auxnets.hpp"
#include "flowface/evalsuite.hpp"
#include "flowface/facemae.hpp"
#include "flowface/reshape.hpp"
#include "flowface/swapnet.hpp"
#include "flowface/synthdata.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace flowface {

struct EvalConfig {
  int pairs = 160;
  int gallery_renders = 5;
  std::uint64_t seed = 21;
};

/// Which aux networks exist and their checkpoint tags.
struct AuxSpec {
  std::string key;  // config key under "aux"
  std::string tag;  // checkpoint stage tag
};
const std::vector<AuxSpec>& aux_specs();

struct RunConfig {
  synthdata::DatasetConfig dataset;
  std::map<std::string, auxnets::TrainConfig> aux;  // keyed by AuxSpec::key
  facemae::EncoderConfig encoder;
  facemae::PretrainConfig mae;
  reshape::NetConfig reshape_net;
  reshape::TrainConfig reshape_train;
  swapnet::SwapConfig swap_net;
  swapnet::TrainConfig swap_train;
  EvalConfig eval;
  std::filesystem::path data_dir = "data";
  std::filesystem::path run_dir = "runs/desk";

  RunConfig();

  nlohmann::json to_json() const;
  /// Defaults overlaid with `j`; every key of `j` must exist in the defaults.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Applies `a.b.c=value`; value parsed as JSON, falling back to a string.
  /// Does not validate, so dependent keys can be changed one at a time.
  void set(const std::string& assignment);
  void validate() const;

  /// Hash of the sections a stage depends on: dataset, aux, mae, reshape, swap, eval.
  std::string stage_hash(const std::string& stage) const;

 private:
  static RunConfig parse(const nlohmann::json& merged);
};

}  // namespace flowface
