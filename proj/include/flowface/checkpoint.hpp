#pragma once

// Single-file checkpoint container:
//   "FFCK", u32 version, stage tag, config hash, dataset hash, u64 step,
//   config JSON, u32 count, then per array: name, u32 ndim, u64 dims[ndim],
//   little-endian float32 data.

#include "json.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>

namespace flowface {

struct Checkpoint {
  std::string stage;
  std::string config_hash;
  std::string dataset_hash;
  std::uint64_t step = 0;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, torch::Tensor> arrays;

  void put_module(const std::string& prefix, const torch::nn::Module& module);
  /// Copies arrays into the module's parameters and buffers; every name must exist.
  void get_module(const std::string& prefix, torch::nn::Module& module) const;
  void put_optimizer(const std::string& prefix, const torch::optim::Adam& opt, const torch::nn::Module& module);
  void get_optimizer(const std::string& prefix, torch::optim::Adam& opt, const torch::nn::Module& module) const;
  void put_optimizer(const std::string& prefix, const torch::optim::AdamW& opt, const torch::nn::Module& module);
  void get_optimizer(const std::string& prefix, torch::optim::AdamW& opt, const torch::nn::Module& module) const;
  bool has_prefix(const std::string& prefix) const;
};

bool valid_stage_tag(const std::string& tag);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws ValidationError on a bad file or when `expected_stage` is set and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_stage = "");

}  // namespace flowface
