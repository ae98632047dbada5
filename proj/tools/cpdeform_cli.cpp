#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpdeform/app.hpp"

using namespace cpdeform;

namespace {

struct Overrides {
  std::string task, task_file, method, output;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_stage, n_step, iterations, restarts, threads;
  std::optional<double> lr;
  bool no_noop = false, no_frames = false, no_priorities = false, landscape = false;
};

void add_budget_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--task", o.task, "built-in task id");
  cmd->add_option("--task-file", o.task_file, "task definition file");
  cmd->add_option("--n-stage", o.n_stage, "number of stages");
  cmd->add_option("--n-step", o.n_step, "action steps per stage");
  cmd->add_option("--iterations", o.iterations, "solver iterations per trajectory");
  cmd->add_option("--lr", o.lr, "solver learning rate");
  cmd->add_option("--restarts", o.restarts, "contacts per stage for multi-restart");
  cmd->add_option("--threads", o.threads, "worker threads");
  cmd->add_flag("--no-noop", o.no_noop, "do not add the do-nothing plan to each stage");
  cmd->add_option("--output", o.output, "output directory");
}

void apply(const Overrides& o, io::RunConfig& c) {
  if (!o.task.empty() || !o.task_file.empty()) {
    c.task = o.task;
    c.task_file = o.task_file;
  }
  if (!o.method.empty()) c.method = method_from_string(o.method);
  if (o.seed) c.seed = *o.seed;
  if (o.n_stage) c.n_stage = o.n_stage;
  if (o.n_step) c.n_step = o.n_step;
  if (o.iterations) c.iterations = o.iterations;
  if (o.lr) c.lr = o.lr;
  if (o.restarts) c.restarts = *o.restarts;
  if (o.threads) c.threads = *o.threads;
  if (o.no_noop) c.inject_noop = false;
  if (o.no_frames) c.frames = false;
  if (o.no_priorities) c.priorities = false;
  if (o.landscape) c.landscape = true;
  if (!o.output.empty()) c.output = o.output;
  if (c.task.empty() == c.task_file.empty()) throw ConfigError("give exactly one of --task and --task-file");
}

template <class T>
std::vector<T> split_list(const std::string& text, T (*parse)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse(item));
  return out;
}

std::uint64_t parse_seed(const std::string& s) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || s[0] == '-') throw ConfigError("bad seed '" + s + "'", 0, "seeds");
  return v;
}

Method parse_method(const std::string& s) { return method_from_string(s); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Contact-point discovery for soft-body manipulation"};
  cli.require_subcommand(1);

  Overrides run_o;
  std::string run_config;
  CLI::App* run = cli.add_subcommand("run", "run one method on one task");
  run->add_option("--config", run_config, "run configuration file");
  add_budget_flags(run, run_o);
  run->add_option("--method", run_o.method, "cpdeform, vanilla, random or multi-restart");
  run->add_option("--seed", run_o.seed, "seed for sampling and random draws");
  run->add_flag("--no-frames", run_o.no_frames, "skip PLY frames");
  run->add_flag("--no-priorities", run_o.no_priorities, "skip priority PLYs");
  run->add_flag("--landscape", run_o.landscape, "also write landscape.csv");

  Overrides cmp_o;
  std::string methods = "cpdeform,vanilla", seeds = "0";
  CLI::App* cmp = cli.add_subcommand("compare", "run several methods over several seeds");
  add_budget_flags(cmp, cmp_o);
  cmp->add_option("--methods", methods, "comma-separated methods")->capture_default_str();
  cmp->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();

  app::LandscapeConfig land_c;
  CLI::App* land = cli.add_subcommand("landscape", "loss over a grid of tool placements");
  land->add_option("--task", land_c.task, "built-in task id");
  land->add_option("--task-file", land_c.task_file, "task definition file");
  land->add_option("--nx", land_c.nx, "cells along x")->capture_default_str();
  land->add_option("--nz", land_c.nz, "cells along z")->capture_default_str();
  land->add_option("--iterations", land_c.iterations, "solver iterations per cell")->capture_default_str();
  land->add_option("--seed", land_c.seed, "sampling seed")->capture_default_str();
  land->add_option("--threads", land_c.threads, "worker threads")->capture_default_str();
  land->add_option("--output", land_c.output, "output directory");

  std::string exp_task, exp_file, exp_out;
  CLI::App* exp = cli.add_subcommand("export-task", "print a task definition file");
  exp->add_option("--task", exp_task, "built-in task id");
  exp->add_option("--task-file", exp_file, "task definition file to normalize");
  exp->add_option("--output", exp_out, "file to write; stdout when absent");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : app::kConfigError;
  }

  try {
    if (run->parsed()) {
      io::RunConfig c = run_config.empty() ? io::RunConfig{} : io::read_run_config(run_config);
      apply(run_o, c);
      return app::run(c, std::cout, std::cerr);
    }
    if (cmp->parsed()) {
      app::CompareConfig cc;
      cc.base.frames = cc.base.priorities = false;
      apply(cmp_o, cc.base);
      cc.methods = split_list<Method>(methods, parse_method);
      cc.seeds = split_list<std::uint64_t>(seeds, parse_seed);
      return app::compare(cc, std::cout, std::cerr);
    }
    if (land->parsed()) {
      if (land_c.task.empty() == land_c.task_file.empty()) throw ConfigError("give exactly one of --task and --task-file");
      return app::landscape(land_c, std::cout, std::cerr);
    }
    if (exp->parsed()) {
      if (exp_task.empty() == exp_file.empty()) throw ConfigError("give exactly one of --task and --task-file");
      return app::export_task(exp_task, exp_file, exp_out, std::cout, std::cerr);
    }
  } catch (const Error& e) {
    // Everything that escapes before a pipeline starts is a configuration problem.
    std::cerr << "config error: " << e.what() << "\n";
    return app::kConfigError;
  }
  return app::kConfigError;
}
