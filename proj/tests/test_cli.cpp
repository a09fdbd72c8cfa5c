#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stf/textio.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "stf_cli_test";

const char* kTinyConfig =
    "grid_size = 16\narea_extent = 16\nnum_objects = 2\npoints_per_object = 12\n"
    "channels = 4\npoint_channels = 4\nsigma_gauss = 3\ntrain_scenes = 6\neval_scenes = 3\n"
    "epochs = 2\nteacher_epochs = 2\ngrad_clip = 1\n";

int run(const std::string& args) {
  const std::string cmd = std::string(STF_CLI_PATH) + " " + args + " > " + (kDir / "out.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
    std::ofstream(kDir / "tiny.cfg") << kTinyConfig;
  }
  static std::string cfg() { return "-c " + (kDir / "tiny.cfg").string(); }
  static std::string at(const std::string& name) { return (kDir / name).string(); }
};

}  // namespace

TEST_F(Cli, ConfigErrorsExitTwo) {
  EXPECT_EQ(run("train-teacher " + cfg() + " --set lamda=0.1 -o " + at("x.ckpt")), 2);
  EXPECT_EQ(run("train-teacher " + cfg() + " --set injection=geometric -o " + at("x.ckpt")), 2);
  EXPECT_EQ(run("train-student " + cfg() + " -o " + at("x.ckpt")), 2);
  EXPECT_EQ(run("no-such-command"), 2);
}

TEST_F(Cli, PipelineIsDeterministic) {
  ASSERT_EQ(run("gen-data " + cfg() + " -o " + at("data")), 0);
  EXPECT_TRUE(fs::exists(kDir / "data" / "config.txt"));
  EXPECT_FALSE(fs::is_empty(kDir / "data"));

  for (const char* tag : {"a", "b"}) {
    const std::string t = tag;
    ASSERT_EQ(run("train-teacher " + cfg() + " -o " + at("teacher_" + t + ".ckpt") + " --metrics " +
                  at("teacher_" + t + ".jsonl")),
              0);
    ASSERT_EQ(run("train-student " + cfg() + " --teacher " + at("teacher_a.ckpt") + " -o " +
                  at("student_" + t + ".ckpt") + " --metrics " + at("student_" + t + ".jsonl")),
              0);
  }
  for (const char* name : {"teacher_%.ckpt", "teacher_%.jsonl", "student_%.ckpt", "student_%.jsonl"}) {
    std::string a = name, b = name;
    a.replace(a.find('%'), 1, "a");
    b.replace(b.find('%'), 1, "b");
    const auto x = slurp(kDir / a);
    EXPECT_FALSE(x.empty()) << a;
    EXPECT_EQ(x, slurp(kDir / b)) << a;
  }

  EXPECT_EQ(run("eval --student " + at("student_a.ckpt") + " --detections " + at("dets.txt")), 0);
  EXPECT_TRUE(fs::exists(kDir / "dets.txt"));

  ASSERT_EQ(run("export-attention --student " + at("student_a.ckpt") + " --scene 1 -o " + at("attention.txt")), 0);
  const auto a = stf::read_tensor_text(kDir / "attention.txt");
  EXPECT_EQ(a.shape(), (stf::Shape{3, 16, 16}));
}
