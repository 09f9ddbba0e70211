#include "flowface/checkpoint.hpp"
#include "flowface/cli.hpp"
#include "flowface/image.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

using namespace flowface;
namespace fs = std::filesystem;

namespace {

constexpr const char* kTinyConfig = R"({
  "dataset": {"identities": 3, "per_identity": 3, "val_per_identity": 2},
  "eval": {"pairs": 4, "gallery_renders": 2},
  "encoder": {"width": 32, "depth": 1, "decoder_width": 16, "decoder_depth": 1},
  "mae": {"steps": 1, "batch": 2},
  "reshape": {"net": {"base_width": 8, "disc_width": 8}, "train": {"steps": 1, "batch": 2}},
  "swap": {"net": {"blocks": 1, "decoder_channels": 32, "disc_width": 8}, "train": {"steps": 1, "batch": 2}},
  "aux": {
    "landmark": {"steps": 1, "batch": 2, "width": 8}, "id_train": {"steps": 1, "batch": 2, "width": 8},
    "id_a": {"steps": 1, "batch": 2, "width": 8}, "id_b": {"steps": 1, "batch": 2, "width": 8},
    "exp_train": {"steps": 1, "batch": 2, "width": 8}, "exp_eval": {"steps": 1, "batch": 2, "width": 8},
    "pose": {"steps": 1, "batch": 2, "width": 8}, "perceptual": {"steps": 1, "batch": 2, "width": 8}
  }
})";

struct Outcome {
  int code;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(test_util::temp_dir("cli"));
    std::ofstream(*root_ / "tiny.json") << kTinyConfig;
    for (const char* stage : {"gen-data", "train-aux", "pretrain-mae", "train-reshape", "train-swap"}) {
      const auto r = call({stage});
      ASSERT_EQ(r.code, cli::kOk) << stage << ": " << r.err;
    }
  }
  static void TearDownTestSuite() { delete root_; }

  static Outcome call(std::vector<std::string> args, bool with_paths = true) {
    if (with_paths) {
      const std::vector<std::pair<std::string, std::string>> defaults = {
          {"--config", "tiny.json"}, {"--data-dir", "data"}, {"--run-dir", "run"}};
      for (const auto& [flag, value] : defaults)
        if (std::find(args.begin(), args.end(), flag) == args.end()) {
          args.push_back(flag);
          args.push_back((*root_ / value).string());
        }
      args.emplace_back("--quiet");
    }
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
  }
  static fs::path data() { return *root_ / "data"; }
  static fs::path run() { return *root_ / "run"; }

  static fs::path* root_;
};
fs::path* Cli::root_ = nullptr;

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(call({}, false).code, cli::kUsage);
  EXPECT_EQ(call({"frobnicate"}, false).code, cli::kUsage);
  EXPECT_EQ(call({"--help"}, false).code, cli::kOk);
}

TEST_F(Cli, ValidationErrors) {
  EXPECT_EQ(call({"print-config", "--set", "nope.key=1"}).code, cli::kValidation);
  EXPECT_EQ(call({"print-config", "--set", "dataset.identities=\"x\""}).code, cli::kValidation);
  EXPECT_EQ(call({"print-config", "--bogus-flag"}).code, cli::kValidation);
  EXPECT_EQ(call({"swap", "--source", "a.png"}).code, cli::kValidation);  // --target/--out missing
  const auto bad = call({"print-config", "--config", (data() / "nope.json").string()}, false);
  EXPECT_EQ(bad.code, cli::kValidation);
}

TEST_F(Cli, PrintConfigHonoursOverrides) {
  const auto r = call({"print-config", "--set", "reshape.train.steps=17"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["reshape"]["train"]["steps"], 17);
  EXPECT_EQ(j["dataset"]["identities"], 3);
  EXPECT_EQ(j["paths"]["data_dir"], data().string());
}

TEST_F(Cli, GenDataIsIdempotent) {
  const auto before = fs::last_write_time(data() / "manifest.jsonl");
  EXPECT_EQ(call({"gen-data"}).code, cli::kOk);
  EXPECT_EQ(fs::last_write_time(data() / "manifest.jsonl"), before);
  // A different dataset config over the same directory needs --overwrite.
  EXPECT_EQ(call({"gen-data", "--set", "dataset.master_seed=99"}).code, cli::kValidation);
}

TEST_F(Cli, ConfigHashGuardsCheckpoints) {
  const auto r = call({"train-swap", "--set", "reshape.train.lr=0.5"});
  EXPECT_EQ(r.code, cli::kValidation);
  EXPECT_NE(r.err.find("config"), std::string::npos);
}

TEST_F(Cli, MissingCheckpointIsValidationError) {
  const auto r = call({"train-swap", "--run-dir", (*root_ / "empty_run").string()});
  EXPECT_EQ(r.code, cli::kValidation);
  EXPECT_NE(r.err.find("missing checkpoint"), std::string::npos);
}

TEST_F(Cli, IoFailureAborts) {
  std::ofstream(*root_ / "not_a_dir") << "x";
  const auto r = call({"gen-data", "--data-dir", (*root_ / "not_a_dir" / "sub").string()});
  EXPECT_EQ(r.code, cli::kAbort) << r.err;
}

TEST_F(Cli, EvalWritesTableAndReports) {
  const auto r = call({"eval"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_NE(r.out.find("ID Acc(%)"), std::string::npos);
  EXPECT_NE(r.out.find("No reshape"), std::string::npos);
  EXPECT_TRUE(fs::exists(run() / "eval.json"));
  EXPECT_TRUE(fs::exists(run() / "eval.csv"));
  const auto again = call({"eval"});
  EXPECT_EQ(again.out, r.out);  // metrics are deterministic
}

TEST_F(Cli, SwapAndVisualizations) {
  const auto src = data() / "images" / "val_000_0003.png";
  const auto tgt = data() / "images" / "val_001_0004.png";
  ASSERT_TRUE(fs::exists(src)) << src;
  ASSERT_TRUE(fs::exists(tgt)) << tgt;

  const auto out = *root_ / "swap.png";
  ASSERT_EQ(call({"swap", "--source", src.string(), "--target", tgt.string(), "--out", out.string()}).code, cli::kOk);
  EXPECT_EQ(read_png(out).height, 64);

  const auto flow = *root_ / "flow.png";
  ASSERT_EQ(call({"viz-flow", "--source", src.string(), "--target", tgt.string(), "--out", flow.string()}).code, cli::kOk);
  EXPECT_EQ(read_flow(*root_ / "flow.sflw").width, 64);

  const auto grid = *root_ / "grid.png";
  ASSERT_EQ(call({"viz-grid", "--pairs", "3", "--out", grid.string()}).code, cli::kOk);
  const auto g = read_png(grid);
  EXPECT_EQ(g.height, 3 * 64 + 4 * 2);
  EXPECT_EQ(g.width, 4 * 64 + 5 * 2);

  const auto attn = *root_ / "attn.png";
  ASSERT_EQ(call({"viz-attn", "--pair", "0", "--patch", "5", "--out", attn.string()}).code, cli::kOk);
  EXPECT_EQ(read_png(attn).width, 3 * 64 + 4 * 2);
  EXPECT_EQ(call({"viz-attn", "--pair", "0", "--patch", "99", "--out", attn.string()}).code, cli::kValidation);

  // A photo without a params sidecar cannot be reshaped.
  fs::copy_file(tgt, *root_ / "bare.png", fs::copy_options::overwrite_existing);
  EXPECT_EQ(call({"swap", "--source", src.string(), "--target", (*root_ / "bare.png").string(), "--out", out.string()}).code,
            cli::kValidation);
}

TEST_F(Cli, ResolutionMismatchRejected) {
  // A copy of the run whose stage-one checkpoint claims a different resolution.
  const auto odd = *root_ / "odd_run";
  fs::remove_all(odd);
  fs::copy(run(), odd, fs::copy_options::recursive);
  auto ck = load_checkpoint(odd / "reshape.ffck");
  ck.config["image_size"] = 128;
  save_checkpoint(ck, odd / "reshape.ffck");
  const auto src = data() / "images" / "val_000_0003.png";
  const auto r = call({"swap", "--force", "--run-dir", odd.string(), "--source", src.string(), "--target", src.string(), "--out",
                       (*root_ / "odd.png").string()});
  EXPECT_EQ(r.code, cli::kValidation);
  EXPECT_NE(r.err.find("resolution mismatch"), std::string::npos) << r.err;
}
