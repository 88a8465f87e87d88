#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(RMC_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rmc_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const std::string kSmall = "--size 32 --act-num 3 --train-count 6 --test-count 3";

}  // namespace

TEST(Cli, GenDataIsDeterministic) {
  const fs::path a = scratch("a"), b = scratch("b");
  ASSERT_EQ(run("gen-data " + kSmall + " --seed 5 --out " + a.string()), 0);
  ASSERT_EQ(run("gen-data " + kSmall + " --seed 5 --out " + b.string()), 0);
  const std::string manifest = slurp(a / "manifest.txt");
  EXPECT_EQ(manifest, slurp(b / "manifest.txt"));
  EXPECT_EQ(std::count(manifest.begin(), manifest.end(), '\n'), 9);
  int clips = 0;
  for (const auto& e : fs::directory_iterator(a))
    if (e.path().extension() == ".rmc") {
      EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
      ++clips;
    }
  EXPECT_EQ(clips, 9);
}

TEST(Cli, RejectsBadInput) {
  const fs::path out = scratch("bad");
  EXPECT_NE(run("gen-data --act-num 0 --out " + out.string()), 0);
  EXPECT_NE(run("gen-data --no-such-flag 1 --out " + out.string()), 0);
  EXPECT_NE(run("gen-data --set no_such_key=1 --out " + out.string()), 0);
  EXPECT_NE(run("train --data " + (out / "missing").string() + " --out " + out.string()), 0);
  EXPECT_NE(run("frobnicate"), 0);
}

TEST(Cli, TrainEvalInferRoundTrip) {
  const fs::path data = scratch("data"), runs = scratch("runs");
  ASSERT_EQ(run("gen-data " + kSmall + " --seed 3 --out " + data.string()), 0);
  const std::string net = " --size 32 --act-num 3 --width 1/16 --tap-channels 64 --anchors micro --crop-size 2";
  ASSERT_EQ(run("train" + net + " --iterations 2 --data " + data.string() + " --out " + runs.string()), 0);
  fs::path checkpoint;
  for (const auto& e : fs::directory_iterator(runs))
    if (fs::exists(e.path() / "checkpoint.rmcw")) checkpoint = e.path() / "checkpoint.rmcw";
  ASSERT_FALSE(checkpoint.empty());
  EXPECT_TRUE(fs::exists(checkpoint.parent_path() / "curves.txt"));
  const std::string ck = " --checkpoint " + checkpoint.string() + " --data " + data.string() + " --out " + runs.string();
  EXPECT_EQ(run("eval" + net + ck), 0);
  EXPECT_EQ(run("infer" + net + ck), 0);
  // A checkpoint for a different action count or head is a format mismatch.
  EXPECT_EQ(run("eval --size 32 --act-num 4 --width 1/16 --tap-channels 64 --anchors micro --crop-size 2" + ck), 2);
  EXPECT_EQ(run("eval" + net + " --improved" + ck), 2);
}
