#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "lln/io.hpp"

using namespace lln;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("lln_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  std::string operator/(const std::string& s) const { return (path_ / s).string(); }

 private:
  fs::path path_;
};

struct RunResult {
  int status;
  std::string out;
  std::string err;
};

RunResult lln_run(std::vector<std::string> args) {
  args.insert(args.begin(), "lln");
  std::ostringstream out, err;
  const int status = cli::run(args, out, err);
  return {status, out.str(), err.str()};
}

// Small synthetic dataset under dir/data.
void synth(const TempDir& dir, const std::string& seed = "4") {
  const RunResult r = lln_run({"synth", "--out-dir", dir / "data", "--seed", seed, "--locations", "5", "--views",
                               "4", "--train-views", "3", "--grid-width", "5", "--grid-height", "4", "--channels",
                               "8", "--structure-channels", "4", "--prototypes", "3", "--distractors", "2"});
  ASSERT_EQ(r.status, 0) << r.err;
}

// Blocky texture per location with a per-view brightness jitter.
GrayImage scene(int location, int view, int w, int h) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(location) * 1000 + 17);
  std::vector<int> tiles(64);
  for (int& t : tiles) t = static_cast<int>(rng() % 200);
  std::mt19937_64 jitter(static_cast<std::uint64_t>(location) * 31 + static_cast<std::uint64_t>(view));
  GrayImage img{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w * h))};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int base = tiles[static_cast<std::size_t>((y / 8) % 8 * 8 + (x / 8) % 8)];
      const int stripe = ((x + y * (location + 1)) % 16) < 8 ? 40 : 0;
      img.pixels[static_cast<std::size_t>(y * w + x)] =
          static_cast<std::uint8_t>(std::min(255, base + stripe + static_cast<int>(jitter() % 6)));
    }
  }
  return img;
}

}  // namespace

TEST(Cli, NoSubcommandIsUsageError) {
  const RunResult r = lln_run({});
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(r.err.rfind("error: usage:", 0), 0u);
}

TEST(Cli, UnknownFlagIsSingleLineUsageError) {
  const RunResult r = lln_run({"train", "--manifest", "x.jsonl", "--bogus", "1"});
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(r.err.rfind("error: usage:", 0), 0u);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, MissingInputIsIoError) {
  TempDir dir;
  const RunResult r = lln_run({"train", "--manifest", dir / "missing.jsonl", "--out", dir / "m.llnw"});
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error: io:", 0), 0u) << r.err;
}

TEST(Cli, InvalidConfigIsExitTwo) {
  TempDir dir;
  synth(dir);
  const RunResult r = lln_run({"train", "--manifest", dir / "data/train.jsonl", "--margin", "-1", "--out",
                               dir / "m.llnw"});
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(r.err.rfind("error: config:", 0), 0u) << r.err;
}

TEST(Cli, TrainTwiceGivesIdenticalModels) {
  TempDir dir;
  synth(dir);
  for (const char* name : {"a.llnw", "b.llnw"}) {
    const RunResult r = lln_run({"train", "--manifest", dir / "data/train.jsonl", "--epochs", "1", "--seed", "7",
                                 "--kernels", "1,3", "--branch-channels", "4", "--negatives", "2", "--out",
                                 dir / name});
    ASSERT_EQ(r.status, 0) << r.err;
  }
  EXPECT_EQ(read_bytes(dir / "a.llnw"), read_bytes(dir / "b.llnw"));
}

TEST(Cli, ConfigFileSuppliesOptions) {
  TempDir dir;
  synth(dir);
  write_text("[train]\nepochs = 2\nnegatives = 2\nkernels = [3]\nbranch-channels = 2\n", dir / "cfg.ini");
  const RunResult r = lln_run({"--config", dir / "cfg.ini", "train", "--manifest", dir / "data/train.jsonl", "--out",
                               dir / "m.llnw", "--loss-csv", dir / "loss.csv"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("epoch 2 "), std::string::npos) << r.out;
  const LLNParams p = read_model(dir / "m.llnw");
  ASSERT_EQ(p.branches.size(), 1u);
  EXPECT_EQ(p.branches[0].out_channels, 2);
  EXPECT_EQ(read_text(dir / "loss.csv").rfind("epoch,step,loss\n", 0), 0u);
}

TEST(Cli, EvalOnAllCorrectResultsReportsHundred) {
  TempDir dir;
  synth(dir);
  ASSERT_EQ(lln_run({"index", "--manifest", dir / "data/map.jsonl", "--out-dir", dir / "idx", "--variant", "holistic"})
                .status,
            0);
  // Query the map images against themselves.
  ASSERT_EQ(lln_run({"query", "--index", dir / "idx", "--manifest", dir / "data/map.jsonl", "--out", dir / "r.csv"})
                .status,
            0);
  const RunResult r = lln_run({"eval-pr", "--results", dir / "r.csv", "--queries", dir / "data/map.jsonl", "--index",
                               dir / "idx", "--out", dir / "pr.csv", "--topk", "1,2"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("precision_at_full_recall=100.0"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("k,precision\n1,1.000000\n"), std::string::npos) << r.out;
  EXPECT_NE(read_text(dir / "pr.csv").find("# precision_at_full_recall=100.0"), std::string::npos);
}

TEST(Cli, EvalWithoutGroundTruthIsDatasetError) {
  TempDir dir;
  synth(dir);
  ASSERT_EQ(lln_run({"index", "--manifest", dir / "data/map.jsonl", "--out-dir", dir / "idx", "--variant", "all"})
                .status,
            0);
  ASSERT_EQ(lln_run({"query", "--index", dir / "idx", "--manifest", dir / "data/query.jsonl", "--out", dir / "r.csv"})
                .status,
            0);
  write_text("{\"id\":\"other\",\"path\":\"x\",\"location\":\"l\",\"frame\":0}\n", dir / "q.jsonl");
  const RunResult r =
      lln_run({"eval-pr", "--results", dir / "r.csv", "--queries", dir / "q.jsonl", "--index", dir / "idx"});
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error: dataset:", 0), 0u) << r.err;
}

TEST(Cli, DumpActivationsAndExportMatches) {
  TempDir dir;
  synth(dir);
  ASSERT_EQ(lln_run({"train", "--manifest", dir / "data/train.jsonl", "--epochs", "1", "--kernels", "3",
                     "--branch-channels", "3", "--negatives", "2", "--out", dir / "m.llnw", "--seed", "2"})
                .status,
            0);
  const std::string fmap = dir / "data/features/loc0_view3.fmap";
  RunResult r = lln_run({"dump-activations", "--features", fmap, "--model", dir / "m.llnw", "--out", dir / "a.pgm"});
  ASSERT_EQ(r.status, 0) << r.err;
  const GrayImage img = read_pgm(dir / "a.pgm");
  EXPECT_EQ(img.width, 5);
  EXPECT_EQ(img.height, 4);

  ASSERT_EQ(lln_run({"index", "--manifest", dir / "data/map.jsonl", "--model", dir / "m.llnw", "--out-dir",
                     dir / "idx", "--landmarks", "4"})
                .status,
            0);
  r = lln_run({"export-matches", "--index", dir / "idx", "--features", fmap, "--query-id", "q", "--map-id",
               "loc0_view0", "--model", dir / "m.llnw", "--out", dir / "m.csv"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(read_text(dir / "m.csv").rfind("query_cell_x,query_cell_y,map_cell_x,map_cell_y,", 0), 0u);

  r = lln_run({"export-matches", "--index", dir / "idx", "--features", fmap, "--map-id", "nope", "--model",
               dir / "m.llnw", "--out", dir / "m.csv"});
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error: dataset:", 0), 0u);
}

TEST(Cli, ExtractTrainIndexQueryEvalPipeline) {
  TempDir dir;
  fs::create_directories(dir.path() / "img");
  std::string train, map, query;
  const int locations = 4;
  for (int loc = 0; loc < locations; ++loc) {
    for (int view = 0; view < 3; ++view) {
      const std::string id = "p" + std::to_string(loc) + "v" + std::to_string(view);
      write_pgm(scene(loc, view, 96, 64), dir.path() / "img" / (id + ".pgm"));
      const std::string line = "{\"id\":\"" + id + "\",\"path\":\"img/" + id + ".pgm\",\"location\":\"L" +
                               std::to_string(loc) + "\",\"frame\":" + std::to_string(loc) + "}\n";
      if (view < 2) train += line;
      if (view == 0) map += line;
      if (view == 2) query += line;
    }
  }
  write_text(train, dir / "train_img.jsonl");
  write_text(map, dir / "map_img.jsonl");
  write_text(query, dir / "query_img.jsonl");

  for (const std::string part : {"train", "map", "query"}) {
    const RunResult r = lln_run({"extract-toy", "--input", dir / (part + "_img.jsonl"), "--out-dir", dir / "feat",
                                 "--out-manifest", dir / (part + ".jsonl"), "--channels", "16", "--stride", "32",
                                 "--seed", "1"});
    ASSERT_EQ(r.status, 0) << r.err;
  }
  const FeatureMap f = read_feature_map(dir / "feat/p0v0.fmap");
  EXPECT_EQ(f.height(), 2);
  EXPECT_EQ(f.width(), 3);
  EXPECT_EQ(f.channels(), 16);
  // Manifest paths are relative so the tree can move.
  EXPECT_EQ(read_manifest(dir / "train.jsonl").entries[0].path, "feat/p0v0.fmap");

  RunResult r = lln_run({"train", "--manifest", dir / "train.jsonl", "--epochs", "2", "--negatives", "2", "--kernels",
                         "1,3", "--branch-channels", "4", "--lr", "1e-3", "--seed", "3", "--out", dir / "m.llnw"});
  ASSERT_EQ(r.status, 0) << r.err;
  r = lln_run({"index", "--manifest", dir / "map.jsonl", "--model", dir / "m.llnw", "--out-dir", dir / "idx",
               "--landmarks", "3"});
  ASSERT_EQ(r.status, 0) << r.err;
  r = lln_run({"query", "--index", dir / "idx", "--manifest", dir / "query.jsonl", "--model", dir / "m.llnw", "--out",
               dir / "results.csv"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(read_results_csv(dir / "results.csv").size(), static_cast<std::size_t>(locations));
  r = lln_run({"eval-pr", "--results", dir / "results.csv", "--queries", dir / "query.jsonl", "--index", dir / "idx",
               "--out", dir / "pr.csv"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("precision_at_full_recall="), std::string::npos);
  const std::string pr = read_text(dir / "pr.csv");
  EXPECT_EQ(pr.rfind("threshold,precision,recall\n", 0), 0u);
  EXPECT_NE(pr.find("# precision_at_full_recall="), std::string::npos);
}
