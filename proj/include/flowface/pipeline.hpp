#pragma once

// Stage orchestration over one RunConfig: artifacts live under data_dir and
// run_dir, every checkpoint carries the config and dataset hashes it was
// produced from, and loading verifies them.

#include "flowface/config.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace flowface {

/// JSON-lines logger: stdout (unless quiet) and run_dir/log.jsonl; adds wall time.
class Logger {
 public:
  Logger(const std::filesystem::path& file, bool quiet);
  void operator()(nlohmann::json entry);

 private:
  std::ofstream file_;
  bool quiet_;
  std::chrono::steady_clock::time_point start_;
};

struct AuxNetsLoaded {
  swapnet::AuxNets train;
  evalsuite::EvalNets eval;
};

class Pipeline {
 public:
  /// `force` skips config-hash verification of loaded checkpoints.
  explicit Pipeline(RunConfig cfg, bool force = false, bool quiet = false);

  const RunConfig& config() const { return cfg_; }
  std::filesystem::path checkpoint_path(const std::string& tag) const;

  /// No-op when a dataset with the same config already exists; `overwrite` regenerates.
  synthdata::DatasetManifest gen_data(bool overwrite = false);
  /// Trains the listed aux nets (all when empty); returns their validation report.
  auxnets::AuxReport train_aux(const std::vector<std::string>& only = {});
  facemae::PretrainResult pretrain_mae();
  reshape::TrainResult train_reshape();
  reshape::FlowEval evaluate_reshape();
  swapnet::TrainResult train_swap();
  /// Full pipeline, no-reshape baseline and self-swap floor on held-out pairs.
  std::vector<evalsuite::EvalReport> eval();

  swapnet::SwapResult swap_files(const std::filesystem::path& source, const std::filesystem::path& target,
                                 const std::filesystem::path& out);
  void viz_flow(const std::filesystem::path& source, const std::filesystem::path& target, const std::filesystem::path& out);
  /// Rows: source, target, reshaped, swapped.
  void viz_grid(int pairs, const std::filesystem::path& out);
  void viz_attn(int pair, int patch, const std::filesystem::path& out);

  synthdata::DatasetManifest manifest();
  const face3d::BlendModel& blend_model();
  Corpus& corpus(const std::string& split);
  Checkpoint load(const std::string& tag, const std::string& hash_stage);
  AuxNetsLoaded load_aux();
  reshape::Model load_reshape();
  facemae::FaceEncoder load_encoder();
  swapnet::SwapModel load_swap();
  Logger& logger() { return log_; }

 private:
  void save(Checkpoint ckpt, const std::string& tag, const std::string& hash_stage);
  face3d::FaceParams sidecar_params(const std::filesystem::path& image) const;

  RunConfig cfg_;
  bool force_;
  Logger log_;
  std::optional<synthdata::DatasetManifest> manifest_;
  std::optional<face3d::BlendModel> model_;
  std::map<std::string, Corpus> corpora_;
};

}  // namespace flowface
