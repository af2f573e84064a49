#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "json.hpp"
#include "protoseg/error.hpp"
#include "protoseg/volume.hpp"
#include "test_util.hpp"

using nlohmann::json;
using protoseg::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "protoseg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = protoseg::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// Small end-to-end configuration: 6 phantoms split 4/1/1 and a short run.
std::string write_config(const TempDir& dir) {
  const json cfg = {
      {"seed", 5},
      {"n_subjects", 6},
      {"phantom", {{"dims", {32, 32, 16}}}},
      {"split", {{"train", 0.67}, {"val", 0.17}, {"test", 0.16}}},
      {"train",
       {{"encoder", {{"levels", 2}, {"base_channels", 4}, {"feature_dim", 8}}},
        {"patch", {{"size", {8, 8, 4}}, {"per_volume_count", 6}, {"min_foreground_voxels", 8}}},
        {"max_iterations", 20},
        {"val_interval", 10}}},
      {"baseline",
       {{"encoder", {{"levels", 2}, {"base_channels", 4}}},
        {"patch", {{"size", {8, 8, 4}}, {"per_volume_count", 6}, {"min_foreground_voxels", 8}}},
        {"max_iterations", 10},
        {"val_interval", 5}}},
      {"crossval", {{"k", 2}}}};
  const fs::path p = dir / "run.json";
  std::ofstream(p) << cfg.dump(2);
  return p.string();
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"bogus"}).code, 2);
  EXPECT_EQ(run({"train"}).code, 2);  // --data is required
  EXPECT_EQ(run({"phantom", "--tiling", "overlap"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, PhantomWritesDataset) {
  TempDir dir("cli_ph");
  const auto cfg = write_config(dir);
  const Result r = run({"phantom", "--config", cfg, "--n-subjects", "4", "--out", (dir / "data").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json manifest = read_json(dir / "data" / "manifest.json");
  ASSERT_EQ(manifest["subjects"].size(), 4u);
  for (const auto& s : manifest["subjects"]) {
    EXPECT_TRUE(fs::exists(dir / "data" / s["image"].get<std::string>()));
    EXPECT_TRUE(fs::exists(dir / "data" / s["mask"].get<std::string>()));
  }
  EXPECT_TRUE(fs::exists(dir / "data" / "config.json"));
  EXPECT_EQ(protoseg::load_volume(dir / "data" / manifest["subjects"][0]["image"].get<std::string>()).dims(),
            (protoseg::Dims{32, 32, 16}));
}

TEST(Cli, EmptyPhantomSetCannotTrain) {
  TempDir dir("cli_empty");
  ASSERT_EQ(run({"phantom", "--n-subjects", "0", "--out", (dir / "data").string()}).code, 0);
  const Result r = run({"train", "--data", (dir / "data").string(), "--out", (dir / "run").string()});
  EXPECT_EQ(r.code, static_cast<int>(protoseg::ErrorCode::kInsufficientData));
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  EXPECT_EQ(run({"phantom", "--n-subjects", "-1", "--out", (dir / "x").string()}).code,
            static_cast<int>(protoseg::ErrorCode::kInvalidArgument));
}

TEST(Cli, ExitCodesForBadInputs) {
  TempDir dir("cli_err");
  EXPECT_EQ(run({"evaluate", "--checkpoint", (dir / "none.bin").string(), "--data", dir.path().string()}).code,
            static_cast<int>(protoseg::ErrorCode::kNotFound));
  std::ofstream(dir / "bad.json") << "{\"unknown_key\": 1}";
  EXPECT_EQ(run({"phantom", "--config", (dir / "bad.json").string(), "--out", (dir / "d").string()}).code,
            static_cast<int>(protoseg::ErrorCode::kFormat));
  std::ofstream(dir / "junk.bin") << "garbage";
  EXPECT_EQ(run({"evaluate", "--checkpoint", (dir / "junk.bin").string(), "--data", dir.path().string()}).code,
            static_cast<int>(protoseg::ErrorCode::kFormat));
}

TEST(Cli, TrainEvaluateSegmentPipeline) {
  TempDir dir("cli_pipe");
  const auto cfg = write_config(dir);
  const std::string data = (dir / "data").string(), run_dir = (dir / "run").string();
  ASSERT_EQ(run({"phantom", "--config", cfg, "--out", data}).code, 0);

  const Result tr = run({"train", "--config", cfg, "--data", data, "--out", run_dir, "--shots", "2"});
  ASSERT_EQ(tr.code, 0) << tr.err;
  for (const char* f : {"checkpoint.bin", "split.json", "config.json", "train_log.jsonl", "summary.json"})
    EXPECT_TRUE(fs::exists(fs::path(run_dir) / f)) << f;
  const json split = read_json(fs::path(run_dir) / "split.json");
  EXPECT_EQ(split["train"].size(), 4u);
  EXPECT_EQ(split["test"].size(), 1u);

  const std::string eval_dir = (dir / "eval").string();
  const Result ev = run({"evaluate", "--config", cfg, "--checkpoint", run_dir + "/checkpoint.bin", "--data", data,
                         "--out", eval_dir});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const json report = read_json(fs::path(eval_dir) / "report.json");
  for (const char* key : {"label", "cases", "aggregate", "summary", "support", "tiling"})
    EXPECT_TRUE(report.contains(key)) << key;
  for (const char* key : {"dice", "sensitivity", "precision", "iou"}) EXPECT_TRUE(report["aggregate"].contains(key)) << key;
  ASSERT_EQ(report["cases"].size(), 1u);
  EXPECT_EQ(report["cases"][0]["id"], split["test"][0]);
  EXPECT_EQ(report["support"].size(), 2u);
  EXPECT_EQ(report["tiling"], "clamped");
  std::ifstream txt(fs::path(eval_dir) / "report.txt");
  const std::string table((std::istreambuf_iterator<char>(txt)), std::istreambuf_iterator<char>());
  EXPECT_NE(table.find("Sensitivity"), std::string::npos);

  // Evaluating twice gives the same report.
  const std::string eval2 = (dir / "eval2").string();
  ASSERT_EQ(run({"evaluate", "--config", cfg, "--checkpoint", run_dir + "/checkpoint.bin", "--data", data, "--out",
                 eval2})
                .code,
            0);
  EXPECT_EQ(read_json(fs::path(eval2) / "report.json")["aggregate"], report["aggregate"]);

  const json manifest = read_json(fs::path(data) / "manifest.json");
  std::string vol, gt;
  for (const auto& s : manifest["subjects"])
    if (s["id"] == split["test"][0]) {
      vol = (fs::path(data) / s["image"].get<std::string>()).string();
      gt = (fs::path(data) / s["mask"].get<std::string>()).string();
    }
  const std::string seg_dir = (dir / "seg").string();
  const Result sg = run({"segment", "--config", cfg, "--checkpoint", run_dir + "/checkpoint.bin", "--volume", vol,
                         "--support-data", data, "--gt", gt, "--format", ".nii", "--out", seg_dir, "--tiling",
                         "drop-partial"});
  ASSERT_EQ(sg.code, 0) << sg.err;
  const json summary = read_json(fs::path(seg_dir) / "segment.json");
  EXPECT_EQ(summary["dims"], json({32, 32, 16}));
  EXPECT_EQ(summary["tiling"], "drop-partial");
  EXPECT_TRUE(summary.contains("metrics"));
  const std::string stem = fs::path(vol).filename().string().substr(0, fs::path(vol).filename().string().find('.'));
  const auto overlap = protoseg::load_mask(fs::path(seg_dir) / (stem + "_overlap.nii"));
  const auto pred = protoseg::load_mask(fs::path(seg_dir) / (stem + "_pred.nii"));
  const auto truth = protoseg::load_mask(gt);
  for (std::size_t i = 0; i < overlap.size(); ++i) {
    const int expect = truth[i] && pred[i] ? 1 : truth[i] ? 2 : pred[i] ? 3 : 0;
    ASSERT_EQ(overlap[i], expect);
  }

  // A config whose encoder differs from the checkpoint is rejected.
  json other = read_json(cfg);
  other["train"]["encoder"]["feature_dim"] = 4;
  std::ofstream(dir / "other.json") << other.dump();
  EXPECT_EQ(run({"evaluate", "--config", (dir / "other.json").string(), "--checkpoint", run_dir + "/checkpoint.bin",
                 "--data", data, "--out", (dir / "e3").string()})
                .code,
            static_cast<int>(protoseg::ErrorCode::kConfigMismatch));
}

TEST(Cli, SupervisedBaselineAndCrossval) {
  TempDir dir("cli_cv");
  const auto cfg = write_config(dir);
  const std::string data = (dir / "data").string();
  ASSERT_EQ(run({"phantom", "--config", cfg, "--out", data}).code, 0);

  const Result tr = run({"train", "--config", cfg, "--data", data, "--model", "supervised", "--out",
                         (dir / "sup").string()});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_EQ(read_json(dir / "sup" / "summary.json")["model"], "supervised");
  const Result ev = run({"evaluate", "--config", cfg, "--checkpoint", (dir / "sup" / "checkpoint.bin").string(),
                         "--data", data, "--out", (dir / "sup_eval").string()});
  ASSERT_EQ(ev.code, 0) << ev.err;

  const Result cv = run({"crossval", "--config", cfg, "--data", data, "--out", (dir / "cv").string(), "--iterations",
                         "6"});
  ASSERT_EQ(cv.code, 0) << cv.err;
  const json folds = read_json(dir / "cv" / "folds.json");
  ASSERT_EQ(folds["folds"].size(), 2u);
  EXPECT_EQ(folds["folds"][0]["test"].size() + folds["folds"][1]["test"].size(), 6u);
  EXPECT_TRUE(fs::exists(dir / "cv" / "fold_0.json"));
  EXPECT_TRUE(fs::exists(dir / "cv" / "fold_1.json"));
  EXPECT_EQ(read_json(dir / "cv" / "aggregate.json")["cases"].size(), 2u);
  std::ifstream txt(dir / "cv" / "report.txt");
  const std::string table((std::istreambuf_iterator<char>(txt)), std::istreambuf_iterator<char>());
  EXPECT_NE(table.find("DC"), std::string::npos);
}
