#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
};

// Runs the CLI through the shell; stderr is discarded.
RunResult run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" FLATCONV_CLI "\" " + args + " 2>/dev/null";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Per-test directory so that tests may run concurrently.
std::filesystem::path scratch() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = std::filesystem::temp_directory_path() / (std::string("flatconv_cli_") + info->name());
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Drops the timing columns so that two runs can be compared.
std::string counts_only(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    std::size_t cut = 0;
    for (int i = 0; i < 9; ++i) cut = line.find(',', cut) + 1;
    out += line.substr(0, cut) + '\n';
  }
  return out;
}

}  // namespace

TEST(Cli, VerifyAllPasses) {
  const auto r = run("verify --suite all --seed 7");
  EXPECT_EQ(r.exit_code, 0) << r.out;
  EXPECT_NE(r.out.find("all suites passed"), std::string::npos);
}

TEST(Cli, VerifySuiteSelectsGroup) {
  const auto r = run("verify --suite shape");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("shape_contract"), std::string::npos);
  EXPECT_EQ(r.out.find("determinism"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("verify --suite bogus").exit_code, 2);
  EXPECT_EQ(run("bench --reps 0").exit_code, 2);
  EXPECT_EQ(run("bench --block Conv4D --reps 1").exit_code, 2);
  EXPECT_EQ(run("bench --shape 1,3,4,4,2 --stride 2 --reps 1").exit_code, 2);
  EXPECT_EQ(run("bench --shape 1,2,3 --reps 1").exit_code, 2);
  EXPECT_EQ(run("").exit_code, 2);
  EXPECT_EQ(run("table").exit_code, 2);
}

TEST(Cli, MissingOutputDirectoryExitsOne) {
  const auto r = run("bench --block Rank1 --shape 1,2,4,4,2 --out-channels 2 --reps 1 --warmup 0 --out /nonexistent/dir/x.csv");
  EXPECT_EQ(r.exit_code, 1);
}

TEST(Cli, CountTable) {
  const auto r = run("count --net eco-lite --format csv");
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.out.rfind("variant,params,flops", 0), 0u);
  EXPECT_NE(r.out.find("ProposedCat"), std::string::npos);
}

TEST(Cli, BenchAndTableRoundTrip) {
  const auto dir = scratch();
  const auto csv = dir / "bench.csv";
  const std::string common = "bench --block ProposedAdd,P3D_A --shape 1,2,4,4,2 --out-channels 3 --reps 2 --warmup 0";
  ASSERT_EQ(run(common + " --out " + csv.string()).exit_code, 0);
  const std::string text = read(csv);
  EXPECT_EQ(text.rfind("variant,B,T,X,Y,C,params,flops,reps,mean_ms,std_ms,throughput_fps\n", 0), 0u);
  const auto table = run("table --in " + csv.string() + " --format csv");
  EXPECT_EQ(table.exit_code, 0);
  EXPECT_EQ(table.out, text);
  const auto md = run("table --in " + csv.string());
  EXPECT_NE(md.out.find("|---|"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Cli, CountColumnsIdenticalAcrossProcesses) {
  const std::string args = "bench --block all --shape 1,2,4,4,2 --out-channels 3 --reps 1 --warmup 0";
  const auto a = run(args);
  const auto b = run(args);
  ASSERT_EQ(a.exit_code, 0);
  EXPECT_EQ(counts_only(a.out), counts_only(b.out));
}

TEST(Cli, ConfigFileWithFlagOverride) {
  const auto dir = scratch();
  const auto cfg = dir / "cfg.json";
  std::ofstream(cfg) << R"({"blocks": ["Rank1", "Conv3D"], "shape": [1, 2, 4, 4, 2], "out_channels": 3, "reps": 1, "warmup": 0})";
  const auto r = run("bench --config " + cfg.string());
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("\nRank1,1,2,4,4,2,"), std::string::npos);
  EXPECT_NE(r.out.find("\nConv3D,"), std::string::npos);
  const auto over = run("bench --config " + cfg.string() + " --block P3D_B");
  ASSERT_EQ(over.exit_code, 0);
  EXPECT_NE(over.out.find("\nP3D_B,"), std::string::npos);
  EXPECT_EQ(over.out.find("Rank1"), std::string::npos);

  std::ofstream(cfg) << "{ not json";
  EXPECT_EQ(run("bench --config " + cfg.string()).exit_code, 2);
  std::filesystem::remove_all(dir);
}

TEST(Cli, SeedEnvironmentVariable) {
  const auto dir = scratch();
  const auto a = dir / "a.jsonl";
  const auto b = dir / "b.jsonl";
  ASSERT_EQ(run("verify --suite equivalence --separable-cases 5 --jsonl " + a.string(), "FLATCONV_SEED=11").exit_code, 0);
  ASSERT_EQ(run("verify --suite equivalence --separable-cases 5 --seed 11 --jsonl " + b.string()).exit_code, 0);
  EXPECT_EQ(read(a), read(b));
  EXPECT_EQ(run("verify --suite shape", "FLATCONV_SEED=abc").exit_code, 2);
  std::filesystem::remove_all(dir);
}
