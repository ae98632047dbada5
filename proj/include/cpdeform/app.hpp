#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "cpdeform/io/artifacts.hpp"
#include "cpdeform/io/run_config.hpp"
#include "cpdeform/io/task_file.hpp"
#include "cpdeform/pipeline.hpp"

// Command implementations behind the command-line tool. Each returns the
// process exit code.

namespace cpdeform::app {

inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kPipelineError = 3;

inline constexpr const char* kOutputRootVar = "CPDEFORM_OUTPUT_ROOT";

/// Relative outputs land under $CPDEFORM_OUTPUT_ROOT when it is set.
inline std::filesystem::path output_path(const std::string& requested) {
  std::filesystem::path p(requested);
  const char* root = std::getenv(kOutputRootVar);
  if (root != nullptr && *root != '\0' && p.is_relative()) return std::filesystem::path(root) / p;
  return p;
}

/// Creates the directory and checks that a file can be written into it.
inline void ensure_writable(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string(), 0, "output");
  const auto probe = dir / ".write-probe";
  {
    std::ofstream out(probe);
    if (!out) throw ConfigError("output directory " + dir.string() + " is not writable", 0, "output");
  }
  std::filesystem::remove(probe, ec);
}

inline std::string default_run_dir(const TaskSpec& spec, const io::RunConfig& c) {
  return "runs/" + spec.id + "-" + std::string(to_string(c.method)) + "-s" + std::to_string(c.seed);
}

// --- run --------------------------------------------------------------------

inline int run(const io::RunConfig& c, std::ostream& out, std::ostream& err) {
  TaskSpec spec;
  PipelineOptions opts;
  TaskInstance inst;
  std::filesystem::path dir;
  try {
    spec = io::resolve_task(c.task, c.task_file);
    opts = io::resolve_options(spec, c);
    inst = instantiate(spec, c.seed);
    dir = output_path(c.output.empty() ? default_run_dir(spec, c) : c.output);
    ensure_writable(dir);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  const io::Json config = io::config_json(c, spec, opts);
  RunRecord record;
  try {
    record = run_method(inst, c.method, opts);
  } catch (const Error& e) {
    io::atomic_write(dir / "run.json", io::error_json(config, "pipeline", e.what()).dump(2) + "\n");
    err << "pipeline error: " << e.what() << "\n";
    return kPipelineError;
  }
  try {
    io::write_run_artifacts(dir, record, inst, c, config);
    if (c.landscape) {
      LandscapeOptions lo;
      lo.iterations = c.landscape_iterations;
      lo.priorities = opts.priorities;
      lo.threads = c.threads;
      const LandscapeResult land = loss_landscape(inst, c.landscape_nx, c.landscape_nz, lo);
      io::atomic_write(dir / "landscape.csv", io::landscape_csv(land, config));
    }
  } catch (const Error& e) {
    err << "pipeline error: " << e.what() << "\n";
    return kPipelineError;
  }
  for (const auto& w : record.warnings) err << "warning: " << w << "\n";
  out << spec.id << " " << to_string(c.method) << " seed " << c.seed << ": W1 " << io::csv_number(record.metrics.w1)
      << " (initial " << io::csv_number(record.metrics.w1_initial) << "), NIIoU "
      << io::csv_number(record.metrics.niiou) << ", " << io::csv_number(record.wall_time) << " s -> " << dir.string()
      << "\n";
  return kOk;
}

// --- compare ----------------------------------------------------------------

struct CompareConfig {
  io::RunConfig base;  // budgets and task; method and seed are swept
  std::vector<Method> methods;
  std::vector<std::uint64_t> seeds;
};

struct CompareCell {
  Method method = Method::cpdeform;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double w1 = std::nan("");
  double niiou = std::nan("");
  double wall_time = 0.0;
};

struct CompareRow {
  Method method = Method::cpdeform;
  std::size_t ok = 0, failed = 0;
  double mean_w1 = std::nan(""), std_w1 = std::nan("");
  double mean_niiou = std::nan(""), std_niiou = std::nan("");
};

/// Mean and sample standard deviation (n - 1); a single value has std 0.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

/// One row per method over its successful cells.
inline std::vector<CompareRow> summarize(const std::vector<Method>& methods, const std::vector<CompareCell>& cells) {
  std::vector<CompareRow> rows;
  for (Method m : methods) {
    CompareRow r;
    r.method = m;
    std::vector<double> w1, ni;
    for (const auto& c : cells) {
      if (c.method != m) continue;
      if (c.failed) {
        ++r.failed;
        continue;
      }
      ++r.ok;
      w1.push_back(c.w1);
      ni.push_back(c.niiou);
    }
    std::tie(r.mean_w1, r.std_w1) = mean_std(w1);
    std::tie(r.mean_niiou, r.std_niiou) = mean_std(ni);
    rows.push_back(r);
  }
  return rows;
}

inline std::string comparison_csv(const std::vector<CompareRow>& rows, const io::Json& config) {
  std::string out = io::csv_preamble("comparison", config) + "method,ok,failed,mean_w1,std_w1,mean_niiou,std_niiou\n";
  for (const auto& r : rows)
    out += std::string(to_string(r.method)) + "," + std::to_string(r.ok) + "," + std::to_string(r.failed) + "," +
           io::csv_number(r.mean_w1) + "," + io::csv_number(r.std_w1) + "," + io::csv_number(r.mean_niiou) + "," +
           io::csv_number(r.std_niiou) + "\n";
  return out;
}

inline std::string cells_csv(const std::vector<CompareCell>& cells, const io::Json& config) {
  std::string out = io::csv_preamble("comparison cells", config) + "method,seed,status,w1,niiou,error\n";
  for (const auto& c : cells) {
    std::string error = c.error;
    for (char& ch : error)
      if (ch == ',' || ch == '\n') ch = ';';
    out += std::string(to_string(c.method)) + "," + std::to_string(c.seed) + "," + (c.failed ? "failed" : "ok") + "," +
           io::csv_number(c.w1) + "," + io::csv_number(c.niiou) + "," + error + "\n";
  }
  return out;
}

inline int compare(const CompareConfig& cc, std::ostream& out, std::ostream& err) {
  if (cc.methods.empty() || cc.seeds.empty()) {
    err << "config error: compare needs at least one method and one seed\n";
    return kConfigError;
  }
  TaskSpec spec;
  PipelineOptions opts;
  std::filesystem::path dir;
  try {
    spec = io::resolve_task(cc.base.task, cc.base.task_file);
    opts = io::resolve_options(spec, cc.base);
    dir = output_path(cc.base.output.empty() ? "runs/" + spec.id + "-compare" : cc.base.output);
    ensure_writable(dir);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  io::Json config = io::config_json(cc.base, spec, opts);
  config.erase("method");
  config.erase("seed");
  config["methods"] = io::Json::array();
  for (Method m : cc.methods) config["methods"].push_back(std::string(to_string(m)));
  config["seeds"] = cc.seeds;

  // Cells run one after another; each run uses opts.threads for its candidates.
  std::vector<CompareCell> cells;
  for (Method m : cc.methods)
    for (std::uint64_t seed : cc.seeds) {
      CompareCell cell;
      cell.method = m;
      cell.seed = seed;
      try {
        const TaskInstance inst = instantiate(spec, seed);
        PipelineOptions o = opts;
        o.seed = seed;
        const RunRecord r = run_method(inst, m, o);
        cell.w1 = r.metrics.w1;
        cell.niiou = r.metrics.niiou;
        cell.wall_time = r.wall_time;
      } catch (const Error& e) {
        cell.failed = true;
        cell.error = e.what();
        err << "cell " << to_string(m) << " seed " << seed << " failed: " << e.what() << "\n";
      }
      cells.push_back(cell);
    }
  const auto rows = summarize(cc.methods, cells);
  io::atomic_write(dir / "cells.csv", cells_csv(cells, config));
  io::atomic_write(dir / "comparison.csv", comparison_csv(rows, config));

  out << spec.id << " over " << cc.seeds.size() << " seed(s)\n";
  for (const auto& r : rows) {
    out << "  " << to_string(r.method) << ": W1 " << io::csv_number(r.mean_w1) << " +- " << io::csv_number(r.std_w1)
        << ", NIIoU " << io::csv_number(r.mean_niiou) << " +- " << io::csv_number(r.std_niiou);
    if (r.failed > 0) out << " (" << r.failed << " failed)";
    out << "\n";
  }
  for (const auto& c : cells)
    if (c.failed) return kPipelineError;
  return kOk;
}

// --- landscape --------------------------------------------------------------

struct LandscapeConfig {
  std::string task, task_file;
  int nx = 10, nz = 10;
  int iterations = 50;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output;
};

inline int landscape(const LandscapeConfig& lc, std::ostream& out, std::ostream& err) {
  TaskSpec spec;
  TaskInstance inst;
  std::filesystem::path dir;
  try {
    spec = io::resolve_task(lc.task, lc.task_file);
    if (lc.nx < 1 || lc.nz < 1) throw ConfigError("grid must be at least 1x1", 0, "grid");
    if (lc.iterations < 1) throw ConfigError("must be >= 1", 0, "iterations");
    if (lc.threads < 1) throw ConfigError("must be >= 1", 0, "threads");
    if (spec.manipulators.size() != 1) throw ConfigError("landscape needs a single-manipulator task", 0, "task");
    inst = instantiate(spec, lc.seed);
    dir = output_path(lc.output.empty() ? "runs/" + spec.id + "-landscape" : lc.output);
    ensure_writable(dir);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  LandscapeOptions lo;
  lo.iterations = lc.iterations;
  lo.threads = lc.threads;
  io::Json config;
  config["task"] = spec.id;
  config["nx"] = lc.nx;
  config["nz"] = lc.nz;
  config["iterations"] = lc.iterations;
  config["seed"] = lc.seed;
  config["task_definition"] = io::write_task(spec);
  LandscapeResult r;
  try {
    r = loss_landscape(inst, lc.nx, lc.nz, lo);
  } catch (const Error& e) {
    err << "pipeline error: " << e.what() << "\n";
    return kPipelineError;
  }
  io::atomic_write(dir / "landscape.csv", io::landscape_csv(r, config));
  io::atomic_write(dir / "priorities.ply", to_ply(inst.initial, {{"priority", r.priorities}},
                                                  io::ply_comments("landscape priorities", config)));
  double rho = std::nan("");
  try {
    rho = priority_loss_correlation(r);
  } catch (const UndefinedMetricError& e) {
    err << "warning: " << e.what() << "\n";
  }
  std::size_t valid = 0;
  for (const auto& c : r.cells) valid += c.valid ? 1 : 0;
  out << "cells " << r.cells.size() << " valid " << valid << "\n";
  out << "rho " << io::csv_number(rho) << "\n";
  return kOk;
}

// --- export-task ------------------------------------------------------------

inline int export_task(const std::string& id, const std::string& file, const std::string& output, std::ostream& out,
                       std::ostream& err) {
  TaskSpec spec;
  try {
    spec = io::resolve_task(id, file);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  const std::string text = io::write_task(spec);
  if (output.empty() || output == "-") {
    out << text;
    return kOk;
  }
  try {
    io::atomic_write(output_path(output), text);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  return kOk;
}

}  // namespace cpdeform::app
