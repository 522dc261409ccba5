#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace pdcn;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(PDCN_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  for (std::string f; std::getline(is, f, '\t');) out.push_back(f);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(Config, DefaultsFileThenFlags) {
  RunConfig c;
  EXPECT_EQ(c.model, 8);
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_EQ(c.balance_target, 5000u);
  apply_config_text(c, "# run\nmodel = 3\nseed = 7  # trailing\nbatch_size=4\n\naug_rotation_deg = 5\n");
  EXPECT_EQ(c.model, 3);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.batch_size, 4u);
  EXPECT_DOUBLE_EQ(c.augment.rotation_deg, 5.0);
  config_set(c, "model", "5");
  EXPECT_EQ(c.model, 5);
  RunConfig again;
  apply_config_text(again, format_config(c));
  EXPECT_EQ(format_config(again), format_config(c));
}

TEST(Config, ErrorsNameTheProblem) {
  RunConfig c;
  EXPECT_THROW(config_set(c, "colour", "red"), ConfigError);
  EXPECT_THROW(config_set(c, "model", "nine"), ConfigError);
  EXPECT_THROW(config_set(c, "model", "9"), ConfigError);
  EXPECT_THROW(config_set(c, "batch_size", "0"), ConfigError);
  try {
    apply_config_text(c, "model = 2\nthis line has no equals\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Config, DerivedPathsAndSeeds) {
  RunConfig c;
  c.workdir = "/tmp/w";
  EXPECT_EQ(c.manifest_path(), fs::path("/tmp/w/manifest.tsv"));
  EXPECT_EQ(c.checkpoint_path(), fs::path("/tmp/w/model.pdcn"));
  EXPECT_NE(split_seed(c), balance_seed(c));
  const auto a = init_seed(c);
  c.model = 7;
  EXPECT_NE(a, init_seed(c));
}

TEST(CliFlags, FlagOverridesConfigFile) {
  const auto dir = pdcn::testing::temp_dir("cli_flags");
  write_file(dir / "run.cfg", "workdir = " + (dir / "w").string() + "\nmodel = 3\nseed = 11\n");
  // No manifest exists, so train stops after logging the resolved config.
  const auto from_file = run_cli("train -c " + (dir / "run.cfg").string(), dir);
  EXPECT_EQ(from_file.code, 2);
  EXPECT_NE(from_file.err.find("model = 3"), std::string::npos) << from_file.err;
  EXPECT_NE(from_file.err.find("seed = 11"), std::string::npos) << from_file.err;
  const auto with_flag = run_cli("train -c " + (dir / "run.cfg").string() + " --model 5", dir);
  EXPECT_EQ(with_flag.code, 2);
  EXPECT_NE(with_flag.err.find("model = 5"), std::string::npos) << with_flag.err;
  EXPECT_NE(with_flag.err.find("seed = 11"), std::string::npos) << with_flag.err;
  EXPECT_NE(with_flag.err.find("manifest not found"), std::string::npos) << with_flag.err;
  write_file(dir / "bad.cfg", "model = 9\n");
  EXPECT_EQ(run_cli("train -c " + (dir / "bad.cfg").string(), dir).code, 2);
}

TEST(CliFlags, UnknownFlagIsExit2) {
  const auto dir = pdcn::testing::temp_dir("cli_unknown");
  EXPECT_EQ(run_cli("train --no-such-flag 1", dir).code, 2);
  EXPECT_EQ(run_cli("", dir).code, 2);
}

// ---------------------------------------------------------------------------
// inspect

TEST(Inspect, Model8Totals) {
  const auto dir = pdcn::testing::temp_dir("cli_inspect8");
  const auto r = run_cli("inspect 8", dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("1,573,574 / 1,572,614"), std::string::npos) << r.out;
}

TEST(Inspect, Model1Totals) {
  std::ostringstream out;
  EXPECT_EQ(app::cmd_inspect("1", out), 0);
  EXPECT_NE(out.str().find("24,639,878 / 1,052,166"), std::string::npos);
}

TEST(Inspect, SameArchitectureSameLedger) {
  std::ostringstream a, b;
  app::cmd_inspect("5", a);
  app::cmd_inspect("7", b);
  auto body = [](const std::string& s) { return s.substr(s.find('\n')); };
  EXPECT_EQ(body(a.str()), body(b.str()));
  EXPECT_NE(a.str().find("524,998 / 524,038"), std::string::npos);
}

TEST(Inspect, BadTargetIsExit2) {
  const auto dir = pdcn::testing::temp_dir("cli_inspect_bad");
  EXPECT_EQ(run_cli("inspect 9", dir).code, 2);
  EXPECT_EQ(run_cli("inspect /no/such/file.pdcn", dir).code, 2);
}

// ---------------------------------------------------------------------------
// prepare / train / evaluate / infer

TEST(Prepare, MissingAnnotationsIsExit2WithPath) {
  const auto dir = pdcn::testing::temp_dir("cli_prepare_missing");
  const auto r = run_cli("prepare --annotations " + (dir / "absent.json").string() + " --frames " + dir.string() +
                             " --workdir " + (dir / "w").string(),
                         dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("absent.json"), std::string::npos) << r.err;
}

TEST(Pipeline, PrepareTrainEvaluateInfer) {
  const auto dir = pdcn::testing::temp_dir("cli_pipeline");
  pdcn::testing::write_toy_coco(dir / "corpus", 20, 1);
  const std::string common = "--workdir " + (dir / "w").string() + " --seed 5";
  const std::string prep = "prepare " + common + " --annotations " + (dir / "corpus/annotations.json").string() +
                           " --frames " + (dir / "corpus/frames").string() + " --balance-target 50";

  auto r = run_cli(prep, dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto manifest_bytes = read_file(dir / "w/manifest.tsv");
  const auto m = read_manifest(dir / "w/manifest.tsv");
  for (auto n : m.counts(Split::train)) EXPECT_EQ(n, 50u);
  for (auto n : m.counts(Split::val)) EXPECT_EQ(n, 4u);
  for (auto n : m.counts(Split::test)) EXPECT_EQ(n, 2u);
  EXPECT_TRUE(is_balanced(m, 50));
  EXPECT_NE(r.out.find("Female Teenager"), std::string::npos);

  r = run_cli(prep, dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(dir / "w/manifest.tsv"), manifest_bytes);

  r = run_cli("train " + common + " --model 7 --epochs 1", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::is_regular_file(dir / "w/model.pdcn"));
  const auto history = lines(read_file(dir / "w/model.history.csv"));
  EXPECT_EQ(history.size(), 2u);
  EXPECT_NE(read_file(dir / "w/model.config").find("model = 7"), std::string::npos);

  r = run_cli("inspect " + (dir / "w/model.pdcn").string(), dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("524,998 / 524,038"), std::string::npos) << r.out;

  r = run_cli("evaluate " + common, dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("accuracy "), std::string::npos);
  EXPECT_NE(r.out.find("macro PR-AUC "), std::string::npos);
  const auto report = parse_report(read_file(dir / "w/model.test.report.json"));
  EXPECT_EQ(report.model_id, 7);
  EXPECT_EQ(report.confusion_matrix.total(), 12u);
  const auto j = nlohmann::json::parse(read_file(dir / "w/model.test.report.json"));
  ASSERT_EQ(j["confusion_matrix"].size(), 6u);
  for (const auto& row : j["confusion_matrix"]) EXPECT_EQ(row.size(), 6u);
  std::set<std::string> classes;
  const auto csv = lines(read_file(dir / "w/model.test.pr.csv"));
  EXPECT_EQ(csv.at(0), "class,threshold,recall,precision");
  for (std::size_t i = 1; i < csv.size(); ++i) classes.insert(csv[i].substr(0, csv[i].find(',')));
  EXPECT_EQ(classes.size(), 6u);

  const auto crop = (dir / "w" / m.split(Split::test).at(0).path).string();
  r = run_cli("infer " + common + " " + crop + " " + crop, dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = lines(r.out);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0], out[1]);
  const auto f = fields(out[0]);
  ASSERT_EQ(f.size(), 8u);
  EXPECT_EQ(f[0], crop);
  EXPECT_TRUE(parse_class(f[1]).has_value());
  double sum = 0;
  for (std::size_t k = 2; k < 8; ++k) sum += std::stod(f[k]);
  EXPECT_NEAR(sum, 1.0, 1e-6);

  write_file(dir / "bad.ppm", "not an image");
  r = run_cli("infer " + common + " " + crop + " " + (dir / "bad.ppm").string(), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(lines(r.out).size(), 1u);
  EXPECT_NE(r.err.find("bad.ppm"), std::string::npos);

  // Non-99x99 inputs are resized.
  save_ppm(pdcn::testing::class_image(2, 3, 10.0f, 40), dir / "small.ppm");
  r = run_cli("infer " + common + " " + (dir / "small.ppm").string(), dir);
  EXPECT_EQ(r.code, 0) << r.err;
}
