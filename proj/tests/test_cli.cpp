#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "m3s/cli.hpp"
#include "support.hpp"

namespace {

int run_cli(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "m3s");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream os, es;
  const int rc = m3s::cli::main(static_cast<int>(argv.size()), argv.data(), os, es);
  if (out) *out = os.str();
  if (err) *err = es.str();
  return rc;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small, fast run settings.
std::filesystem::path write_config(const std::filesystem::path& dir, const std::string& data) {
  const auto p = dir / "c.json";
  std::ofstream(p) << nlohmann::json{{"data", data}, {"hidden", {16}}, {"embedding", 8}, {"epochs", 20},
                                     {"patience", 20}, {"max_steps", 3}}
                          .dump();
  return p;
}

}  // namespace

TEST(Cli, SynthWritesLoadableFile) {
  const auto dir = scratch_dir("cli_synth");
  const auto csv = (dir / "s.csv").string();
  ASSERT_EQ(run_cli({"synth", "--classes", "5", "--per-class", "200", "--out", csv}), 0);
  auto d = m3s::load_records(csv);
  EXPECT_EQ(d.records.size(), 1000u);
  EXPECT_EQ(m3s::class_counts(d.records).size(), 5u);
}

TEST(Cli, RunTwiceGivesIdenticalLogs) {
  const auto dir = scratch_dir("cli_run");
  const auto csv = (dir / "s.csv").string();
  ASSERT_EQ(run_cli({"synth", "--classes", "5", "--per-class", "40", "--dim", "6", "--out", csv}), 0);
  const auto cfg = write_config(dir, csv).string();
  std::string out;
  ASSERT_EQ(run_cli({"run", "--config", cfg, "--seed", "7", "--out", (dir / "a").string()}, &out), 0);
  EXPECT_NE(out.find("known accuracy"), std::string::npos);
  ASSERT_EQ(run_cli({"run", "--config", cfg, "--seed", "7", "--out", (dir / "b").string()}), 0);
  const auto a = slurp(dir / "a" / "run.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b" / "run.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(dir / "a" / "result.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "a" / "checkpoint.json"));
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "a" / "config.json"))["seed"], 7);

  std::string rep;
  ASSERT_EQ(run_cli({"report", (dir / "a").string()}, &rep), 0);
  EXPECT_NE(rep.find("step  1"), std::string::npos);
}

TEST(Cli, SweepPrintsOneRowPerValue) {
  const auto dir = scratch_dir("cli_sweep");
  const auto csv = (dir / "s.csv").string();
  ASSERT_EQ(run_cli({"synth", "--classes", "5", "--per-class", "40", "--dim", "6", "--out", csv}), 0);
  const auto cfg = write_config(dir, csv).string();
  std::string out;
  ASSERT_EQ(run_cli({"sweep", "--config", cfg, "--axis", "known_fraction", "--values", "0.1,0.3,0.5", "--out",
                     (dir / "sw").string()},
                    &out),
            0);
  std::istringstream lines(slurp(dir / "sw" / "sweep.csv"));
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1].rfind("known_fraction,0.1,", 0), 0u);
  EXPECT_EQ(out, slurp(dir / "sw" / "sweep.csv"));
}

TEST(Cli, InvalidInvocationsFail) {
  std::string err;
  EXPECT_NE(run_cli({}, nullptr, &err), 0);
  EXPECT_NE(run_cli({"bogus"}), 0);
  EXPECT_NE(run_cli({"run", "--seed", "notanumber"}), 0);
  EXPECT_NE(run_cli({"run", "--mode", "sometimes", "--data", "x.csv"}), 0);
  EXPECT_NE(run_cli({"sweep", "--data", "x.csv"}), 0);  // --axis and --values are required
  EXPECT_NE(run_cli({"run"}, nullptr, &err), 0);       // no dataset
  EXPECT_NE(err.find("error:"), std::string::npos);
  EXPECT_NE(run_cli({"run", "--data", "/nonexistent/file.csv"}, nullptr, &err), 0);
  EXPECT_NE(err.find("cannot open"), std::string::npos);
  EXPECT_NE(run_cli({"run", "--data", "x.csv", "--mode", "interactive"}), 0);
  EXPECT_NE(run_cli({"report", "/nonexistent"}), 0);
  EXPECT_NE(run_cli({"synth", "--classes", "1"}), 0);
}

TEST(Cli, ParseValues) {
  EXPECT_EQ(m3s::cli::parse_values("0.1, 0.5,1"), (std::vector<double>{0.1, 0.5, 1.0}));
  EXPECT_THROW(m3s::cli::parse_values("0.1,x"), m3s::ConfigError);
}
