#include "flowface/cli.hpp"

#include "flowface/common.hpp"
#include "flowface/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>

namespace flowface::cli {
namespace {

namespace fs = std::filesystem;

const std::vector<std::pair<std::string, std::string>>& commands() {
  static const std::vector<std::pair<std::string, std::string>> list = {
      {"gen-data", "render the synthetic corpus (no-op if it already exists)"},
      {"train-aux", "train the auxiliary landmark/identity/expression/pose/perceptual networks"},
      {"pretrain-mae", "masked-autoencoder pretraining of the face encoder"},
      {"train-reshape", "train the stage-one flow network and report held-out EPE"},
      {"train-swap", "train the stage-two swapping network"},
      {"swap", "swap one source face into one target image"},
      {"eval", "evaluate on held-out pairs and print the results table"},
      {"viz-flow", "colourize the estimated reshaping flow for one pair"},
      {"viz-grid", "source/target/reshaped/swapped grid for held-out pairs"},
      {"viz-attn", "attention of one target patch over the source"},
      {"print-config", "print the effective configuration as JSON"},
  };
  return list;
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string data_dir, run_dir;
  bool force = false;
  bool quiet = false;
};

void add_common(CLI::App& app, Common& c) {
  app.add_option("--config", c.config, "JSON run config; keys not given keep their defaults");
  app.add_option("--set", c.sets, "override one config key, e.g. --set swap.train.steps=100 (repeatable)");
  app.add_option("--data-dir", c.data_dir, "dataset directory (default: $FLOWFACE_DATA_DIR, then paths.data_dir)");
  app.add_option("--run-dir", c.run_dir, "checkpoint and log directory");
  app.add_flag("--force", c.force, "load checkpoints even if their config hash differs");
  app.add_flag("--quiet", c.quiet, "log to run_dir/log.jsonl only");
}

RunConfig resolve(const Common& c) {
  nlohmann::json j = nlohmann::json::object();
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    require(static_cast<bool>(in), "cannot read config " + c.config);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("config " + c.config + ": " + e.what());
    }
  }
  if (const char* env = std::getenv("FLOWFACE_DATA_DIR"); env && *env) {
    const bool given = j.is_object() && j.contains("paths") && j["paths"].is_object() && j["paths"].contains("data_dir");
    if (!given) j["paths"]["data_dir"] = env;
  }
  RunConfig cfg = RunConfig::from_json(j);
  for (const auto& s : c.sets) cfg.set(s);
  if (!c.data_dir.empty()) cfg.data_dir = c.data_dir;
  if (!c.run_dir.empty()) cfg.run_dir = c.run_dir;
  cfg.validate();
  return cfg;
}

int dispatch(const std::string& command, const std::vector<std::string>& rest, std::ostream& out) {
  CLI::App app("flowface " + command);
  app.name("flowface " + command);
  Common common;
  add_common(app, common);
  bool overwrite = false;
  int workers = 0, precompute = -1, count = 4, pair = 0, patch = 0;
  std::vector<std::string> only;
  std::string source, target, dest;
  std::function<void(Pipeline&)> action;

  if (command == "gen-data") {
    app.add_flag("--overwrite", overwrite, "delete and regenerate an existing dataset");
    app.add_option("--workers", workers, "render worker threads (output is identical for any count)");
    action = [&](Pipeline& p) { p.gen_data(overwrite); };
  } else if (command == "train-aux") {
    app.add_option("--only", only, "subset of: landmark id_train id_a id_b exp_train exp_eval pose perceptual");
    action = [&](Pipeline& p) { p.train_aux(only); };
  } else if (command == "pretrain-mae") {
    action = [](Pipeline& p) { p.pretrain_mae(); };
  } else if (command == "train-reshape") {
    action = [](Pipeline& p) { p.train_reshape(); };
  } else if (command == "train-swap") {
    app.add_option("--precompute", precompute, "draw pairs from a bank of N precomputed reshaped targets (0: online)");
    action = [](Pipeline& p) { p.train_swap(); };
  } else if (command == "swap") {
    app.add_option("--source", source, "source face PNG")->required();
    app.add_option("--target", target, "target PNG")->required();
    app.add_option("--out", dest, "output PNG")->required();
    app.footer(
        "Each input needs a <stem>.params.json sidecar holding its 3D face parameters. Fitting the\n"
        "3D model to arbitrary photographs is not implemented: on the synthetic corpus the\n"
        "parameters are known and gen-data writes the sidecars.");
    action = [&](Pipeline& p) { p.swap_files(source, target, dest); };
  } else if (command == "eval") {
    action = [&](Pipeline& p) { out << evalsuite::table_text(p.eval()); };
  } else if (command == "viz-flow") {
    app.add_option("--source", source, "source face PNG (params sidecar required)")->required();
    app.add_option("--target", target, "target PNG (params sidecar required)")->required();
    app.add_option("--out", dest, "output PNG; the raw flow goes next to it as .sflw")->required();
    action = [&](Pipeline& p) { p.viz_flow(source, target, dest); };
  } else if (command == "viz-grid") {
    app.add_option("--pairs", count, "number of held-out pairs (rows)");
    app.add_option("--out", dest, "output PNG")->required();
    action = [&](Pipeline& p) { p.viz_grid(count, dest); };
  } else if (command == "viz-attn") {
    app.add_option("--pair", pair, "held-out pair index");
    app.add_option("--patch", patch, "target patch index, row-major");
    app.add_option("--out", dest, "output PNG")->required();
    action = [&](Pipeline& p) { p.viz_attn(pair, patch, dest); };
  }

  std::vector<std::string> reversed(rest.rbegin(), rest.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    throw ValidationError(std::string(e.what()) + "\n" + app.help());
  }
  RunConfig cfg = resolve(common);
  if (workers > 0) cfg.dataset.workers = workers;
  if (precompute >= 0) cfg.swap_train.precompute = precompute;
  if (command == "print-config") {  // no run dir, no log file
    out << cfg.to_json().dump(2) << "\n";
    return kOk;
  }
  Pipeline p(cfg, common.force, common.quiet);
  action(p);
  return kOk;
}

}  // namespace

std::string usage() {
  std::string s =
      "usage: flowface <command> [options]\n\n"
      "Stages run in order: gen-data, train-aux, pretrain-mae, train-reshape, train-swap, eval.\n\n"
      "commands:\n";
  for (const auto& [name, help] : commands()) s += "  " + name + std::string(16 - name.size(), ' ') + help + "\n";
  s +=
      "\ncommon options: --config FILE, --set key=value, --data-dir DIR, --run-dir DIR, --force, --quiet\n"
      "environment: FLOWFACE_DATA_DIR sets the default dataset directory.\n"
      "3D face parameters come from the synthetic generator (params sidecars); fitting the 3D\n"
      "model to arbitrary photographs is not implemented.\n"
      "exit status: 0 success, 1 validation error, 2 runtime abort (NaN, IO), 64 usage error.\n";
  return s;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << usage();
    return kUsage;
  }
  const std::string& command = args.front();
  if (command == "-h" || command == "--help" || command == "help") {
    out << usage();
    return kOk;
  }
  const bool known = std::any_of(commands().begin(), commands().end(), [&](const auto& c) { return c.first == command; });
  if (!known) {
    err << "unknown command '" << command << "'\n" << usage();
    return kUsage;
  }
  try {
    return dispatch(command, {args.begin() + 1, args.end()}, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const RuntimeAbort& e) {
    err << "abort: " << e.what() << "\n";
    return kAbort;
  } catch (const std::exception& e) {
    err << "abort: " << e.what() << "\n";
    return kAbort;
  }
}

}  // namespace flowface::cli
