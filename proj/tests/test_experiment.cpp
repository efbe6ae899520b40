#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mdrlab/config.hpp"
#include "mdrlab/error.hpp"
#include "mdrlab/experiment.hpp"
#include "mdrlab/report.hpp"

using namespace mdrlab;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::path(testing::TempDir()) / ("mdrlab_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig smoke(const std::string& extra = "") {
  return resolve_config(parse_config_text("preset = smoke\nmode = [bn, eval, bn-mdr]\nseeds = [1]\n" + extra, "t"));
}

}  // namespace

TEST(Config, ParseErrorsCarryOrigin) {
  try {
    resolve_config(parse_config_text("preset = smoke\nfoo = 1\n", "bad.cfg"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()), "bad.cfg:2: unknown key 'foo'");
  }
  EXPECT_THROW(resolve_config(parse_config_text("steps = many\n", "c")), ConfigError);
  EXPECT_THROW(resolve_config(parse_config_text("mode = [bn, turbo]\n", "c")), ConfigError);
  EXPECT_THROW(resolve_config(parse_config_text("preset = nope\n", "c")), ConfigError);
  EXPECT_THROW(resolve_config(parse_config_text("mode = [bn-mdr]\nepochs = 4\nalpha1 = 2\nalpha2 = 1\n", "c")), ConfigError);
  EXPECT_THROW(parse_config_text("just words\n", "c"), ConfigError);
  EXPECT_THROW(parse_override("novalue"), ConfigError);
  const ConfigEntry e = parse_override("lr=0.5");
  EXPECT_EQ(e.key, "lr");
  EXPECT_EQ(e.value, "0.5");
}

TEST(Config, LaterEntriesWinAndPresetsApplyFirst) {
  const auto c = resolve_config(parse_config_text("lr = 0.01\npreset = smoke\n# comment\nlr = 0.02\n", "c"));
  EXPECT_EQ(c.preset, "smoke");
  EXPECT_EQ(c.ppo.lr, 0.02);
  EXPECT_EQ(c.env, "gridgame");
  EXPECT_EQ(parse_seed_list("[3, 1,2]"), (std::vector<std::uint64_t>{3, 1, 2}));
}

TEST(Config, TextRoundTrip) {
  for (const auto& name : preset_names()) {
    const ExperimentConfig c = preset_config(name);
    const std::string text = c.to_text();
    EXPECT_EQ(resolve_config(parse_config_text(text, "rt")).to_text(), text) << name;
  }
}

TEST(Config, ModePlansMapToSchedules) {
  const ExperimentConfig c = preset_config("collapse-demo");
  EXPECT_EQ(c.schedule(ModePlan::Bn).standard_epochs, 3u);
  EXPECT_EQ(c.schedule(ModePlan::Eval).rectification_epochs, 3u);
  EXPECT_EQ(c.schedule(ModePlan::Eval).standard_epochs, 0u);
  const MdrSchedule mdr = c.schedule(ModePlan::BnMdr);
  EXPECT_EQ(mdr.standard_epochs, 2u);
  EXPECT_EQ(mdr.rectification_epochs, 1u);
  EXPECT_TRUE(c.network(ModePlan::Bn, 4, 2).batchnorm);
  EXPECT_FALSE(c.network(ModePlan::NoNorm, 4, 2).batchnorm);
  EXPECT_TRUE(c.network(ModePlan::DropoutMdr, 4, 2).dropout);
  for (ModePlan p : all_mode_plans()) EXPECT_EQ(parse_mode_plan(to_string(p)), p);
}

TEST(Csv, RowFormatting) {
  RunRecord r;
  r.mode = "bn";
  r.seed = 2;
  r.reward_mean = 0.1;
  r.eval_test_reward = std::nan("");
  const std::string row = format_csv_row(r);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), static_cast<long>(csv_columns().size() - 1));
  EXPECT_NE(row.find("0.10000000000000001"), std::string::npos);
  EXPECT_NE(row.find(",nan,"), std::string::npos);
  EXPECT_EQ(csv_file_name(ModePlan::BnMdr, 4), "bn-mdr_seed4.csv");
}

TEST(Run, FansOutPerModeAndReproducesFromManifest) {
  const fs::path out = fresh_dir("fanout");
  const ExperimentConfig c = smoke();
  const auto results = run_experiment(c, {out.string(), nullptr}, "test");
  ASSERT_EQ(results.size(), 3u);
  for (const auto& r : results) {
    EXPECT_FALSE(r.error.has_value()) << *r.error;
    EXPECT_TRUE(fs::exists(r.csv_path));
    const CsvTable t = read_run_csv(r.csv_path);
    EXPECT_EQ(t.schema, kCsvSchema);
    EXPECT_EQ(t.columns, csv_columns());
    EXPECT_EQ(t.rows.size(), c.steps);
    const auto mm = t.numbers("mismatch_pre");
    if (r.mode == ModePlan::Eval) {
      for (double v : mm) EXPECT_EQ(v, 0.0);
      for (double v : t.numbers("delta_r_max_abs")) EXPECT_EQ(v, 0.0);
      for (double v : t.numbers("standard_updates")) EXPECT_EQ(v, 0.0);
    } else {
      for (double v : mm) EXPECT_GT(v, 0.0);
    }
  }
  ASSERT_TRUE(fs::exists(out / "manifest.cfg"));

  const fs::path again = fresh_dir("fanout_again");
  const ExperimentConfig replay = resolve_config(read_config_file((out / "manifest.cfg").string()));
  run_experiment(replay, {again.string(), nullptr}, "test");
  for (const auto& r : results) {
    const fs::path name = fs::path(r.csv_path).filename();
    EXPECT_EQ(slurp(out / name), slurp(again / name)) << name;
  }
  EXPECT_EQ(slurp(out / "manifest.cfg"), slurp(again / "manifest.cfg"));
}

TEST(Run, FailureLeavesErrorRow) {
  const fs::path out = fresh_dir("error_row");
  fs::create_directories(out);
  std::ofstream(out / "checkpoints") << "not a directory";
  ExperimentConfig c = smoke("mode = [nonorm]\ncheckpoints = true\ncheckpoint_every = 2\n");
  const RunResult r = run_single(c, ModePlan::NoNorm, 1, {out.string(), nullptr});
  ASSERT_TRUE(r.error.has_value());
  EXPECT_EQ(r.records.size(), 2u);
  const CsvTable t = read_run_csv(r.csv_path);
  EXPECT_EQ(t.rows.size(), 2u);
  ASSERT_EQ(t.errors.size(), 1u);
  EXPECT_NE(t.errors[0].find("step 1"), std::string::npos);
}

TEST(Compare, SummarizesAndRejectsBadInput) {
  const fs::path out = fresh_dir("compare");
  run_experiment(smoke("seeds = [1, 2]\n"), {(out / "runs").string(), nullptr}, "test");
  const auto files = expand_glob((out / "runs" / "*.csv").string());
  ASSERT_EQ(files.size(), 6u);
  const CompareResult res = compare_runs(files, (out / "report").string());
  ASSERT_EQ(res.summary.size(), 3u);
  for (const auto& s : res.summary) EXPECT_EQ(s.seeds, 2u);
  EXPECT_TRUE(fs::exists(out / "report" / "summary.csv"));
  EXPECT_TRUE(fs::exists(out / "report" / "summary.md"));
  for (const auto& img : res.images) EXPECT_EQ(slurp(img).rfind("<svg", 0), 0u) << img;

  EXPECT_THROW(compare_runs({}, (out / "none").string()), Error);
  EXPECT_FALSE(fs::exists(out / "none"));
  std::ofstream(out / "other.csv") << "#schema=something.else\nmode,seed\nbn,1\n";
  EXPECT_THROW(compare_runs({files[0], (out / "other.csv").string()}, (out / "mixed").string()), Error);
  EXPECT_FALSE(fs::exists(out / "mixed"));
  EXPECT_TRUE(expand_glob((out / "nothing*.csv").string()).empty());
}

TEST(Scan, WritesFullGrid) {
  const fs::path out = fresh_dir("scan");
  ScanSpec spec;
  const SaturationScan s = run_scan(spec, out.string());
  EXPECT_EQ(s.cells.size(), 4u * 241u);
  const std::string csv = slurp(out / "scan.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2 + 4 * 241);
  EXPECT_TRUE(fs::exists(out / "scan.svg"));
  EXPECT_EQ(linear_grid(0.0, 1.0, 5), (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
}

TEST(Sha1, MatchesGitBlobHash) {
  EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}
