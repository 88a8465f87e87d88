#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "rmc/checkpoint.hpp"
#include "rmc/errors.hpp"
#include "rmc/network.hpp"

using namespace rmc;
namespace fs = std::filesystem;

namespace {

NetConfig small_net(bool improved = false) {
  NetConfig c;
  c.backbone.width = {1, 16};
  c.backbone.input_size = 32;
  c.backbone.clip_len = 8;
  c.backbone.num_classes = 3;
  c.backbone.tap_channels = 64;
  c.anchors = AnchorConfig::preset("micro");
  c.crop_size = 2;
  c.improved = improved;
  c.reg_hidden = 8;
  return c;
}

fs::path scratch() {
  const fs::path p = fs::temp_directory_path() / "rmc_checkpoint_test";
  fs::create_directories(p);
  return p;
}

FormatError::Kind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no FormatError raised";
  return FormatError::Kind::Io;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path path = scratch() / "a.rmcw";
  const ActionNet<float> a(small_net(true), 1), b(small_net(true), 2);
  save_checkpoint(path.string(), a.state());
  load_checkpoint(path.string(), b.state());
  const auto sa = a.state(), sb = b.state();
  ASSERT_EQ(sa.params.size(), sb.params.size());
  for (size_t i = 0; i < sa.params.size(); ++i) {
    const auto x = sa.params[i].tensor.data(), y = sb.params[i].tensor.data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end())) << sa.params[i].name;
  }
  for (size_t i = 0; i < sa.buffers.size(); ++i) {
    const auto x = sa.buffers[i].tensor.data(), y = sb.buffers[i].tensor.data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end())) << sa.buffers[i].name;
  }
  EXPECT_EQ(read_checkpoint(path.string()).size(), sa.params.size() + sa.buffers.size());
}

TEST(Checkpoint, ErrorKinds) {
  const fs::path dir = scratch();
  const ActionNet<float> base(small_net(false), 1), improved(small_net(true), 1);
  save_checkpoint((dir / "base.rmcw").string(), base.state());
  std::ifstream in(dir / "base.rmcw", std::ios::binary);
  const std::vector<char> bytes{std::istreambuf_iterator<char>(in), {}};
  auto write = [&](const std::vector<char>& b) {
    std::ofstream out(dir / "bad.rmcw", std::ios::binary);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
    return (dir / "bad.rmcw").string();
  };
  auto magic = bytes;
  magic[3] = '?';
  EXPECT_EQ(kind_of([&] { read_checkpoint(write(magic)); }), FormatError::Kind::BadMagic);
  auto version = bytes;
  version[4] = 2;
  EXPECT_EQ(kind_of([&] { read_checkpoint(write(version)); }), FormatError::Kind::BadVersion);
  EXPECT_EQ(kind_of([&] { read_checkpoint(write({bytes.begin(), bytes.end() - 3})); }), FormatError::Kind::Truncated);
  EXPECT_EQ(kind_of([&] { read_checkpoint(write({bytes.begin(), bytes.begin() + 6})); }), FormatError::Kind::Truncated);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_EQ(kind_of([&] { read_checkpoint(write(trailing)); }), FormatError::Kind::Mismatch);
  EXPECT_EQ(kind_of([&] { load_checkpoint((dir / "base.rmcw").string(), improved.state()); }),
            FormatError::Kind::Mismatch);
  NetConfig other = small_net(false);
  other.backbone.num_classes = 4;
  EXPECT_EQ(kind_of([&] { load_checkpoint((dir / "base.rmcw").string(), ActionNet<float>(other, 1).state()); }),
            FormatError::Kind::Mismatch);
  EXPECT_THROW(read_checkpoint((dir / "missing.rmcw").string()), FormatError);
}

TEST(Checkpoint, MismatchNamesTheTensor) {
  const fs::path dir = scratch();
  save_checkpoint((dir / "c.rmcw").string(), ActionNet<float>(small_net(false), 1).state());
  NetConfig other = small_net(false);
  other.backbone.num_classes = 5;
  try {
    load_checkpoint((dir / "c.rmcw").string(), ActionNet<float>(other, 1).state());
    FAIL() << "expected a mismatch";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("rmc.fc."), std::string::npos) << e.what();
  }
}
