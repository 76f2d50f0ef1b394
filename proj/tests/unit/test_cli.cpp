#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>
#include <sys/wait.h>

#include "sam/image.hpp"
#include "sam/samb.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string output;
};

CliResult sam_cli(const std::string& args) {
  const std::string cmd = std::string(SAM_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string out;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  const int status = ::pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("sam-test-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(sam_cli("").code, 2);
  EXPECT_EQ(sam_cli("frobnicate").code, 2);
  EXPECT_EQ(sam_cli("invert --out x.samb").code, 2);
  EXPECT_EQ(sam_cli("invert --image /nonexistent.png --out x.samb").code, 2);
  EXPECT_EQ(sam_cli("--help").code, 0);
  EXPECT_NE(sam_cli("--help").output.find("build-dataset"), std::string::npos);
  EXPECT_EQ(sam_cli("eval --method magic --toy-count 1").code, 2);
}

TEST_F(Cli, InvertEditRoundTrip) {
  ASSERT_EQ(sam_cli("toy-target --target-seed 4 --out " + path("t.png")).code, 0);
  const CliResult inv = sam_cli("invert --image " + path("t.png") + " --out " + path("b.samb") + " --render " + path("r.png") +
                          " --overlay " + path("o.png") + " --steps 20 --stats-samples 500");
  ASSERT_EQ(inv.code, 0) << inv.output;
  EXPECT_NE(inv.output.find("psnr"), std::string::npos);
  EXPECT_EQ(sam::image_width(sam::read_png(path("r.png"))), 32);
  EXPECT_TRUE(fs::exists(path("o.png")));

  const CliResult plain = sam_cli("edit --bundle " + path("b.samb") + " --direction \"car color (red)\" --magnitude 1 --out " +
                            path("e.png"));
  EXPECT_EQ(plain.code, 0) << plain.output;
  EXPECT_EQ(sam_cli("edit --bundle " + path("b.samb") + " --direction nope --out " + path("e.png")).code, 2);
  const CliResult strip = sam_cli("edit --bundle " + path("b.samb") + " --direction \"car size\" --force --strip -1,0,1 --out " +
                            path("s.png"));
  ASSERT_EQ(strip.code, 0) << strip.output;
  EXPECT_EQ(sam::image_width(sam::read_png(path("s.png"))), 4 * 32);
}

TEST_F(Cli, InapplicableEditExitsWithOne) {
  // tau = 0 sends every segment of an overlay target to the deepest space.
  ASSERT_EQ(sam_cli("toy-target --target-seed 6 --out " + path("t.png")).code, 0);
  ASSERT_EQ(sam_cli("invert --image " + path("t.png") + " --out " + path("b.samb") +
                    " --tau 0 --steps 5 --stats-samples 500")
                .code,
            0);
  const CliResult r = sam_cli("edit --bundle " + path("b.samb") + " --direction \"car size\" --out " + path("e.png"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("not applicable"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("e.png")));
}

TEST_F(Cli, DirectionsExportLoadsBack) {
  ASSERT_EQ(sam_cli("directions --out " + path("dirs")).code, 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(path("dirs"))) files += e.path().extension() == ".samb";
  EXPECT_EQ(files, 16);
  ASSERT_EQ(sam_cli("toy-target --plain --out " + path("t.png")).code, 0);
  ASSERT_EQ(sam_cli("invert --image " + path("t.png") + " --out " + path("b.samb") + " --tau 1 --steps 5 --stats-samples 500")
                .code,
            0);
  EXPECT_EQ(sam_cli("edit --bundle " + path("b.samb") + " --directions " + path("dirs") +
                    " --direction \"car size\" --out " + path("e.png"))
                .code,
            0);
}

TEST_F(Cli, EvalWritesCsv) {
  const CliResult r = sam_cli("eval --method wplus --toy-count 2 --stats-samples 500 --out " + path("e.csv") +
                        " --config " + path("cfg.json"));
  EXPECT_EQ(r.code, 1);  // missing config file is a runtime error
  FILE* f = std::fopen(path("cfg.json").c_str(), "w");
  std::fputs(R"({"steps": 5})", f);
  std::fclose(f);
  const CliResult ok = sam_cli("eval --method wplus --toy-count 2 --stats-samples 500 --out " + path("e.csv") + " --config " +
                         path("cfg.json"));
  ASSERT_EQ(ok.code, 0) << ok.output;
  const std::string csv = sam::read_file(path("e.csv"));
  EXPECT_EQ(csv.rfind("image_id,method,psnr_db,lpips,seconds", 0), 0u);
  EXPECT_NE(csv.find("\nmean,wplus,"), std::string::npos);
}
