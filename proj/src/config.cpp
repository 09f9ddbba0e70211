#include "flowface/config.hpp"

#include "flowface/common.hpp"

#include <fstream>

namespace flowface {
namespace {

using nlohmann::json;

auxnets::TrainConfig aux_cfg(int steps, int width, std::uint64_t seed, bool augment = true) {
  auxnets::TrainConfig c;
  c.steps = steps;
  c.width = width;
  c.seed = seed;
  c.augment = augment;
  return c;
}

// Every key of `patch` must exist in `base` with a compatible kind.
void overlay(json& base, const json& patch, const std::string& where) {
  require(patch.is_object(), "config: " + (where.empty() ? std::string("root") : where) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    require(base.contains(key), "config: unknown key '" + path + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, path);
    } else {
      const bool ok = (slot.is_number() && value.is_number()) || (slot.is_boolean() && value.is_boolean()) ||
                      (slot.is_string() && value.is_string());
      require(ok, "config: key '" + path + "' has the wrong type");
      slot = value;
    }
  }
}

json dataset_json(const synthdata::DatasetConfig& d) {
  return {{"identities", d.identities},         {"per_identity", d.per_identity},  {"val_per_identity", d.val_per_identity},
          {"image_size", d.image_size},         {"master_seed", d.master_seed},    {"model_seed", d.model_seed},
          {"vertices", d.dims.vertices},        {"shape_dims", d.dims.shape},      {"expression_dims", d.dims.expression},
          {"workers", d.workers}};
}

synthdata::DatasetConfig dataset_from(const json& j) {
  synthdata::DatasetConfig d;
  d.identities = j.at("identities").get<int>();
  d.per_identity = j.at("per_identity").get<int>();
  d.val_per_identity = j.at("val_per_identity").get<int>();
  d.image_size = j.at("image_size").get<int>();
  d.master_seed = j.at("master_seed").get<std::uint64_t>();
  d.model_seed = j.at("model_seed").get<std::uint64_t>();
  d.dims.vertices = j.at("vertices").get<int>();
  d.dims.shape = j.at("shape_dims").get<int>();
  d.dims.expression = j.at("expression_dims").get<int>();
  d.workers = j.at("workers").get<int>();
  return d;
}

}  // namespace

const std::vector<AuxSpec>& aux_specs() {
  static const std::vector<AuxSpec> specs = {
      {"landmark", auxnets::kLandmarkTag}, {"id_train", auxnets::kIdTrainTag}, {"id_a", auxnets::kIdEvalATag},
      {"id_b", auxnets::kIdEvalBTag},      {"exp_train", auxnets::kExpTrainTag}, {"exp_eval", auxnets::kExpEvalTag},
      {"pose", auxnets::kPoseTag},         {"perceptual", auxnets::kPerceptualTag}};
  return specs;
}

RunConfig::RunConfig() {
  aux["landmark"] = aux_cfg(1500, 16, 11);
  aux["id_train"] = aux_cfg(1200, 16, 12);
  aux["id_a"] = aux_cfg(1200, 16, 13);
  aux["id_b"] = aux_cfg(1200, 24, 14);
  aux["exp_train"] = aux_cfg(1500, 16, 15);
  aux["exp_eval"] = aux_cfg(1500, 24, 16);
  aux["pose"] = aux_cfg(1200, 16, 17);
  aux["perceptual"] = aux_cfg(1200, 16, 18, false);
}

json RunConfig::to_json() const {
  json a = json::object();
  for (const auto& [k, v] : aux) a[k] = v.to_json();
  return {{"dataset", dataset_json(dataset)},
          {"aux", a},
          {"encoder", encoder.to_json()},
          {"mae", mae.to_json()},
          {"reshape", {{"net", reshape_net.to_json()}, {"train", reshape_train.to_json()}}},
          {"swap", {{"net", swap_net.to_json()}, {"train", swap_train.to_json()}}},
          {"eval", {{"pairs", eval.pairs}, {"gallery_renders", eval.gallery_renders}, {"seed", eval.seed}}},
          {"paths", {{"data_dir", data_dir.string()}, {"run_dir", run_dir.string()}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  json merged = RunConfig().to_json();
  overlay(merged, j, "");
  RunConfig c = parse(merged);
  c.validate();
  return c;
}

RunConfig RunConfig::parse(const json& merged) {
  RunConfig c;
  c.dataset = dataset_from(merged.at("dataset"));
  for (const auto& s : aux_specs()) c.aux[s.key] = auxnets::TrainConfig::from_json(merged.at("aux").at(s.key));
  c.encoder = facemae::EncoderConfig::from_json(merged.at("encoder"));
  c.mae = facemae::PretrainConfig::from_json(merged.at("mae"));
  c.reshape_net = reshape::NetConfig::from_json(merged.at("reshape").at("net"));
  c.reshape_train = reshape::TrainConfig::from_json(merged.at("reshape").at("train"));
  c.swap_net = swapnet::SwapConfig::from_json(merged.at("swap").at("net"));
  c.swap_train = swapnet::TrainConfig::from_json(merged.at("swap").at("train"));
  const auto& e = merged.at("eval");
  c.eval.pairs = e.at("pairs").get<int>();
  c.eval.gallery_renders = e.at("gallery_renders").get<int>();
  c.eval.seed = e.at("seed").get<std::uint64_t>();
  c.data_dir = merged.at("paths").at("data_dir").get<std::string>();
  c.run_dir = merged.at("paths").at("run_dir").get<std::string>();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw RuntimeAbort("cannot write config " + path.string());
  out << to_json().dump(2) << "\n";
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1, end - (dot == std::string::npos ? 0 : dot + 1));
    require(!part.empty(), "override key '" + key + "' has an empty component");
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  json merged = to_json();
  overlay(merged, patch, "");
  *this = parse(merged);
}

void RunConfig::validate() const {
  require(dataset.identities >= 2, "config: dataset.identities must be at least 2");
  require(dataset.per_identity >= 1 && dataset.val_per_identity >= 1, "config: per-identity counts must be positive");
  require(dataset.workers >= 1, "config: dataset.workers must be at least 1");
  require(encoder.image_size == dataset.image_size, "config: encoder.image_size must equal dataset.image_size");
  encoder.validate();
  swap_net.validate(encoder.width);
  require(eval.pairs > 0 && eval.gallery_renders > 0, "config: eval counts must be positive");
  require(eval.gallery_renders <= dataset.val_per_identity, "config: eval.gallery_renders exceeds the validation renders per identity");
  for (const auto& [k, v] : aux) require(v.steps >= 0 && v.batch > 0 && v.width > 0 && v.lr > 0, "config: invalid aux." + k);
}

std::string RunConfig::stage_hash(const std::string& stage) const {
  json j = to_json();
  j["dataset"].erase("workers");
  json h;
  h["dataset"] = j["dataset"];
  if (stage == "dataset") return hex64(fnv1a64(h.dump()));
  if (stage == "aux") {
    h["aux"] = j["aux"];
  } else if (stage == "mae") {
    h["encoder"] = j["encoder"];
    h["mae"] = j["mae"];
  } else if (stage == "reshape") {
    h["aux"] = j["aux"];
    h["reshape"] = j["reshape"];
  } else if (stage == "swap" || stage == "eval") {
    h["aux"] = j["aux"];
    h["encoder"] = j["encoder"];
    h["mae"] = j["mae"];
    h["reshape"] = j["reshape"];
    h["swap"] = j["swap"];
    if (stage == "eval") h["eval"] = j["eval"];
  } else {
    throw ValidationError("unknown stage '" + stage + "'");
  }
  return hex64(fnv1a64(h.dump()));
}

}  // namespace flowface
