#include "flowface/checkpoint.hpp"

#include "flowface/binary_io.hpp"
#include "flowface/common.hpp"

namespace flowface {
namespace {

constexpr std::uint32_t kVersion = 1;

template <class Opt, class State>
void put_state(Checkpoint& c, const std::string& prefix, const Opt& opt, const torch::nn::Module& module) {
  const auto& states = opt.state();
  for (const auto& item : module.named_parameters()) {
    auto it = states.find(item.value().unsafeGetTensorImpl());
    if (it == states.end()) continue;
    const auto& s = static_cast<const State&>(*it->second);
    const std::string base = prefix + item.key();
    c.arrays[base + ".exp_avg"] = s.exp_avg().detach().clone();
    c.arrays[base + ".exp_avg_sq"] = s.exp_avg_sq().detach().clone();
    c.arrays[base + ".step"] = torch::tensor({static_cast<float>(s.step())});
  }
}

template <class Opt, class State>
void get_state(const Checkpoint& c, const std::string& prefix, Opt& opt, const torch::nn::Module& module) {
  auto& states = opt.state();
  for (const auto& item : module.named_parameters()) {
    const std::string base = prefix + item.key();
    auto avg = c.arrays.find(base + ".exp_avg");
    if (avg == c.arrays.end()) continue;
    auto s = std::make_unique<State>();
    s->exp_avg(avg->second.clone().to(item.value().dtype()));
    s->exp_avg_sq(c.arrays.at(base + ".exp_avg_sq").clone().to(item.value().dtype()));
    s->step(static_cast<std::int64_t>(c.arrays.at(base + ".step").item<float>()));
    states[item.value().unsafeGetTensorImpl()] = std::move(s);
  }
}

}  // namespace

void Checkpoint::put_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters()) arrays[prefix + p.key()] = p.value().detach().clone();
  for (const auto& b : module.named_buffers()) arrays[prefix + b.key()] = b.value().detach().clone();
}

void Checkpoint::get_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard guard;
  auto load = [&](const std::string& name, torch::Tensor& dst) {
    auto it = arrays.find(prefix + name);
    require(it != arrays.end(), "checkpoint (" + stage + ") lacks array " + prefix + name);
    require(it->second.sizes() == dst.sizes(), "checkpoint array " + prefix + name + " has the wrong shape");
    dst.copy_(it->second);
  };
  for (auto& p : module.named_parameters()) load(p.key(), p.value());
  for (auto& b : module.named_buffers()) load(b.key(), b.value());
}

void Checkpoint::put_optimizer(const std::string& prefix, const torch::optim::Adam& opt, const torch::nn::Module& module) {
  put_state<torch::optim::Adam, torch::optim::AdamParamState>(*this, prefix, opt, module);
}
void Checkpoint::get_optimizer(const std::string& prefix, torch::optim::Adam& opt, const torch::nn::Module& module) const {
  get_state<torch::optim::Adam, torch::optim::AdamParamState>(*this, prefix, opt, module);
}
void Checkpoint::put_optimizer(const std::string& prefix, const torch::optim::AdamW& opt, const torch::nn::Module& module) {
  put_state<torch::optim::AdamW, torch::optim::AdamWParamState>(*this, prefix, opt, module);
}
void Checkpoint::get_optimizer(const std::string& prefix, torch::optim::AdamW& opt, const torch::nn::Module& module) const {
  get_state<torch::optim::AdamW, torch::optim::AdamWParamState>(*this, prefix, opt, module);
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  auto it = arrays.lower_bound(prefix);
  return it != arrays.end() && it->first.compare(0, prefix.size(), prefix) == 0;
}

bool valid_stage_tag(const std::string& tag) {
  return tag == "face3d" || tag == "mae" || tag == "reshape" || tag == "swap" ||
         (tag.size() > 4 && tag.compare(0, 4, "aux-") == 0);
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  require(valid_stage_tag(c.stage), "invalid checkpoint stage tag: " + c.stage);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    io::BinaryWriter w(tmp);
    w.magic("FFCK");
    w.u32(kVersion);
    w.str(c.stage);
    w.str(c.config_hash);
    w.str(c.dataset_hash);
    w.u64(c.step);
    w.str(c.config.dump());
    w.u32(static_cast<std::uint32_t>(c.arrays.size()));
    for (const auto& [name, t] : c.arrays) {
      w.str(name);
      w.u32(static_cast<std::uint32_t>(t.dim()));
      for (auto d : t.sizes()) w.u64(static_cast<std::uint64_t>(d));
      auto f = t.detach().to(torch::kFloat32).contiguous();
      w.array(std::span<const float>(f.data_ptr<float>(), static_cast<std::size_t>(f.numel())));
    }
    w.finish();
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_stage) {
  io::BinaryReader r(path);
  r.expect_magic("FFCK");
  require(r.u32() == kVersion, "unsupported checkpoint version in " + path.string());
  Checkpoint c;
  c.stage = r.str();
  require(valid_stage_tag(c.stage), "invalid stage tag in " + path.string());
  require(expected_stage.empty() || c.stage == expected_stage,
          path.string() + " is a '" + c.stage + "' checkpoint, expected '" + expected_stage + "'");
  c.config_hash = r.str();
  c.dataset_hash = r.str();
  c.step = r.u64();
  c.config = nlohmann::json::parse(r.str());
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto ndim = r.u32();
    require(ndim <= 8, "corrupt array rank in " + path.string());
    std::vector<std::int64_t> dims(ndim);
    std::int64_t numel = 1;
    for (auto& d : dims) {
      d = static_cast<std::int64_t>(r.u64());
      numel *= d;
    }
    require(numel >= 0 && numel < (std::int64_t{1} << 31), "corrupt array size in " + path.string());
    auto t = torch::empty(dims, torch::kFloat32);
    r.array(std::span<float>(t.data_ptr<float>(), static_cast<std::size_t>(numel)));
    c.arrays.emplace(std::move(name), std::move(t));
  }
  require(r.at_end(), "trailing bytes in checkpoint " + path.string());
  return c;
}

}  // namespace flowface
