#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "cpdeform/app.hpp"

using namespace cpdeform;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("cpdeform_test_app_" + name);
  fs::remove_all(d);
  return d;
}

io::RunConfig tiny_run(const std::string& task, const fs::path& out) {
  io::RunConfig c;
  c.task = task;
  c.n_stage = 1;
  c.n_step = 3;
  c.iterations = 1;
  c.output = out.string();
  return c;
}

// Drops the comment lines and splits the rest into rows of cells.
std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST(AppRun, WritesACompleteArtifactSet) {
  const auto dir = scratch_dir("run");
  std::ostringstream out, err;
  ASSERT_EQ(app::run(tiny_run("mini-writer", dir), out, err), app::kOk) << err.str();
  const auto j = io::Json::parse(io::read_file(dir / "run.json"));
  EXPECT_EQ(j.at("status"), "ok");
  EXPECT_EQ(j.at("schema"), "1");
  EXPECT_GE(j.at("stages").size(), 1u);
  EXPECT_TRUE(fs::exists(dir / "frames" / "0000.ply"));
  EXPECT_TRUE(fs::exists(dir / "frames" / "0001.ply"));
  EXPECT_TRUE(fs::exists(dir / "frames" / "goal.ply"));
  EXPECT_TRUE(fs::exists(dir / "priorities" / "0001.ply"));
  const std::string metrics = io::read_file(dir / "metrics.csv");
  EXPECT_EQ(metrics.rfind("# cpdeform metrics schema 1\n# config {", 0), 0u);
  const auto rows = csv_rows(metrics);
  ASSERT_EQ(rows.size(), 3u);  // header, initial, stage 1
  EXPECT_EQ(rows[0], (std::vector<std::string>{"stage", "method", "w1", "niiou"}));
  const std::string ply = io::read_file(dir / "frames" / "0001.ply");
  EXPECT_NE(ply.find("comment cpdeform frame 1 schema 1"), std::string::npos);
  std::istringstream plyin(ply);
  EXPECT_EQ(from_ply(plyin).size(), 400u);
}

TEST(AppRun, RerunsAreByteIdentical) {
  const auto a = scratch_dir("rerun_a"), b = scratch_dir("rerun_b");
  std::ostringstream out, err;
  auto ca = tiny_run("mini-move", a), cb = tiny_run("mini-move", b);
  cb.threads = 3;
  ASSERT_EQ(app::run(ca, out, err), app::kOk) << err.str();
  ASSERT_EQ(app::run(cb, out, err), app::kOk) << err.str();
  for (const char* f : {"metrics.csv", "history.csv", "frames/0001.ply", "priorities/0001.ply"})
    EXPECT_EQ(io::read_file(a / f), io::read_file(b / f)) << f;
  auto ja = io::Json::parse(io::read_file(a / "run.json")), jb = io::Json::parse(io::read_file(b / "run.json"));
  EXPECT_EQ(ja.at("metrics").at("w1"), jb.at("metrics").at("w1"));
}

TEST(AppRun, UnknownTaskLeavesNothingBehind) {
  const auto dir = scratch_dir("unknown");
  std::ostringstream out, err;
  EXPECT_EQ(app::run(tiny_run("mini-unicorn", dir), out, err), app::kConfigError);
  EXPECT_NE(err.str().find("task"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir));
  auto bad = tiny_run("mini-writer", dir);
  bad.n_step = 0;
  EXPECT_EQ(app::run(bad, out, err), app::kConfigError);
  EXPECT_FALSE(fs::exists(dir));
}

TEST(AppRun, PipelineFailureWritesAnErrorRecord) {
  // Clearance larger than the search cube: every placement collides.
  const auto dir = scratch_dir("pipefail");
  TaskSpec spec = mini_writer();
  spec.grid.clearance = 0.5;
  fs::create_directories(dir);
  io::atomic_write(dir / "bad.task", io::write_task(spec));
  io::RunConfig c = tiny_run("", dir / "out");
  c.task.clear();
  c.task_file = (dir / "bad.task").string();
  std::ostringstream out, err;
  EXPECT_EQ(app::run(c, out, err), app::kPipelineError);
  const auto j = io::Json::parse(io::read_file(dir / "out" / "run.json"));
  EXPECT_EQ(j.at("status"), "error");
  EXPECT_EQ(j.at("error").at("kind"), "pipeline");
}

TEST(AppRun, OutputRootPrefixesRelativePaths) {
  const auto root = scratch_dir("root");
  ::setenv(app::kOutputRootVar, root.c_str(), 1);
  EXPECT_EQ(app::output_path("runs/x"), root / "runs/x");
  EXPECT_EQ(app::output_path("/abs/x"), fs::path("/abs/x"));
  ::unsetenv(app::kOutputRootVar);
  EXPECT_EQ(app::output_path("runs/x"), fs::path("runs/x"));
}

TEST(AppCompare, StatisticsAndFiles) {
  EXPECT_EQ(app::mean_std({2.0}), std::make_pair(2.0, 0.0));
  const auto [m, s] = app::mean_std({1.0, 2.0, 4.0});
  EXPECT_DOUBLE_EQ(m, 7.0 / 3.0);
  // Sample variance: ((4/3)^2 + (1/3)^2 + (5/3)^2) / 2 = 7/3.
  EXPECT_DOUBLE_EQ(s, std::sqrt(7.0 / 3.0));

  const auto dir = scratch_dir("compare");
  app::CompareConfig cc;
  cc.base = tiny_run("mini-writer", dir);
  cc.methods = {Method::cpdeform, Method::vanilla};
  cc.seeds = {4};
  std::ostringstream out, err;
  ASSERT_EQ(app::compare(cc, out, err), app::kOk) << err.str();
  const auto rows = csv_rows(io::read_file(dir / "comparison.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1][0], "cpdeform");
  EXPECT_EQ(rows[1][1], "1");
  EXPECT_EQ(rows[1][4], "0");  // std over one seed
  EXPECT_EQ(rows[2][0], "vanilla");
  EXPECT_EQ(csv_rows(io::read_file(dir / "cells.csv")).size(), 3u);
  cc.seeds.clear();
  EXPECT_EQ(app::compare(cc, out, err), app::kConfigError);
}

TEST(AppLandscape, SmallGrid) {
  const auto dir = scratch_dir("landscape");
  app::LandscapeConfig lc;
  lc.task = "mini-writer";
  lc.nx = lc.nz = 2;
  lc.iterations = 1;
  lc.output = dir.string();
  std::ostringstream out, err;
  ASSERT_EQ(app::landscape(lc, out, err), app::kOk) << err.str();
  const auto rows = csv_rows(io::read_file(dir / "landscape.csv"));
  EXPECT_EQ(rows.size(), 5u);
  EXPECT_NE(out.str().find("cells 4"), std::string::npos);
  // Four cells are too few for a correlation: reported as nan with a warning.
  EXPECT_NE(out.str().find("rho nan"), std::string::npos);
  EXPECT_NE(err.str().find("warning"), std::string::npos);
  lc.task = "mini-move";
  EXPECT_EQ(app::landscape(lc, out, err), app::kConfigError);
}

TEST(AppExport, TaskTextRoundTrips) {
  std::ostringstream out, err;
  ASSERT_EQ(app::export_task("mini-rope", "", "", out, err), app::kOk);
  EXPECT_EQ(io::write_task(io::parse_task(out.str())), out.str());
  const auto dir = scratch_dir("export");
  ASSERT_EQ(app::export_task("mini-rope", "", (dir / "rope.task").string(), out, err), app::kOk);
  EXPECT_EQ(io::read_file(dir / "rope.task"), out.str());
  EXPECT_EQ(app::export_task("nope", "", "", out, err), app::kConfigError);
}
