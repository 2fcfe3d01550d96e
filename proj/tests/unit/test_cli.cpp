#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "support.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(PLREFINE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, ExitCodes) {
  testing_support::TempDir dir;
  const auto data = dir / "data";
  ASSERT_EQ(run("synth --out " + data.string() + " --train 6 --val 2 --test 2 --unlabelled 2 --size 48 --classes 2"), 0);
  const auto index = (data / "index.json").string();
  ASSERT_TRUE(fs::exists(index));

  EXPECT_EQ(run("refine --index " + index + " --refiner random_walk --out " + (dir / "rw").string()), 0);
  EXPECT_EQ(run("refine --index " + index + " --refiner oracle --split test --out " + (dir / "oracle").string()), 0);
  EXPECT_EQ(run("evaluate --index " + index + " --pred " + (dir / "oracle").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "oracle" / "report.json"));
  EXPECT_EQ(run("evaluate --index " + index + " --source probs --out " + (dir / "base").string()), 0);

  // unlabelled entries give the oracle nothing to answer from
  EXPECT_EQ(run("refine --index " + index + " --refiner oracle --out " + (dir / "bad").string()), 2);
  // the unlabelled-split outputs are not test predictions
  EXPECT_EQ(run("evaluate --index " + index + " --pred " + (dir / "rw").string()), 1);

  EXPECT_EQ(run("refine --index " + (dir / "missing.json").string() + " --out " + (dir / "x").string()), 1);
  std::ofstream(dir / "bad.json") << R"({"morph": {"kind": "opening"}})";
  EXPECT_EQ(run("refine --index " + index + " --config " + (dir / "bad.json").string() + " --out " +
                (dir / "x").string()),
            1);
  EXPECT_EQ(run("refine --out " + (dir / "x").string()), 1);
  EXPECT_EQ(run("frobnicate"), 1);

  const auto space = dir / "space.json";
  std::ofstream(space) << R"({"dimensions":[{"name":"radius","type":"int","low":1,"high":3}]})";
  EXPECT_EQ(run("tune --index " + index + " --refiner oracle --space " + space.string() + " --trials 3 --history " +
                (dir / "h.jsonl").string() + " --out " + (dir / "best.json").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "best.json"));

  std::ofstream(dir / "plan.json") << R"({"seed_image": "train_0", "predictions_root": "preds"})";
  EXPECT_EQ(run("ablate --index " + index + " --plan " + (dir / "plan.json").string() + " --out " +
                (dir / "ablation").string()),
            2);
  std::ofstream(dir / "plan2.json") << R"({"seed_image": "train_0"})";
  EXPECT_EQ(run("ablate --index " + index + " --plan " + (dir / "plan2.json").string() + " --out " +
                (dir / "ablation2").string()),
            0);
  std::ofstream(dir / "plan3.json") << R"({"seed_image": "train_0", "subset_sizes": [3, 2]})";
  EXPECT_EQ(run("ablate --index " + index + " --plan " + (dir / "plan3.json").string() + " --out " +
                (dir / "ablation3").string()),
            1);
}
