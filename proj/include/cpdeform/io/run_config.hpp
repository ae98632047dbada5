#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "cpdeform/errors.hpp"
#include "cpdeform/io/ini.hpp"
#include "cpdeform/io/task_file.hpp"
#include "cpdeform/pipeline.hpp"

namespace cpdeform::io {

// Run files:
//
//   [run]
//   task = mini-writer++        (or task_file = path, relative to this file)
//   method = cpdeform
//   seed = 0
//   iterations = 100
//   output = runs/writer
//   [export]
//   frames = true
//   priorities = true
//   landscape = false
//
// Unset budget keys fall back to the task's defaults.

struct RunConfig {
  std::string task;
  std::string task_file;
  Method method = Method::cpdeform;
  std::uint64_t seed = 0;
  std::optional<int> n_stage, n_step, iterations;
  std::optional<double> lr;
  int restarts = 15;
  int threads = 1;
  bool inject_noop = true;
  std::string output;
  bool frames = true;
  bool priorities = true;
  bool landscape = false;
  int landscape_nx = 10, landscape_nz = 10, landscape_iterations = 50;
};

inline RunConfig run_config_from_ini(const IniDocument& doc, const std::filesystem::path& base_dir = {}) {
  for (const auto& s : doc.sections)
    if (s.kind != "run" && s.kind != "export") throw ConfigError("unknown section [" + s.kind + "]", s.line);
  const IniSection* run = doc.find("run");
  if (!run) throw ConfigError("missing [run] section");
  check_keys(*run, {"task", "task_file", "method", "seed", "n_stage", "n_step", "iterations", "lr", "restarts",
                    "threads", "inject_noop", "output"});
  RunConfig c;
  using detail::set_if;
  set_if(*run, "task", [&](auto& e) { c.task = e.value; });
  set_if(*run, "task_file", [&](auto& e) {
    std::filesystem::path p(e.value);
    c.task_file = (p.is_relative() && !base_dir.empty() ? base_dir / p : p).string();
  });
  if (c.task.empty() == c.task_file.empty()) throw ConfigError("give exactly one of task and task_file", run->line);
  set_if(*run, "method", [&](auto& e) {
    try {
      c.method = method_from_string(e.value);
    } catch (const InvalidArgument& err) {
      throw ConfigError(err.what(), e.line, e.key);
    }
  });
  set_if(*run, "seed", [&](auto& e) { c.seed = as_u64(e); });
  set_if(*run, "n_stage", [&](auto& e) { c.n_stage = as_int(e); });
  set_if(*run, "n_step", [&](auto& e) { c.n_step = as_int(e); });
  set_if(*run, "iterations", [&](auto& e) { c.iterations = as_int(e); });
  set_if(*run, "lr", [&](auto& e) { c.lr = as_double(e); });
  set_if(*run, "restarts", [&](auto& e) { c.restarts = as_int(e); });
  set_if(*run, "threads", [&](auto& e) { c.threads = as_int(e); });
  set_if(*run, "inject_noop", [&](auto& e) { c.inject_noop = as_bool(e); });
  set_if(*run, "output", [&](auto& e) { c.output = e.value; });
  if (const IniSection* ex = doc.find("export")) {
    check_keys(*ex, {"frames", "priorities", "landscape", "landscape_nx", "landscape_nz", "landscape_iterations"});
    set_if(*ex, "frames", [&](auto& e) { c.frames = as_bool(e); });
    set_if(*ex, "priorities", [&](auto& e) { c.priorities = as_bool(e); });
    set_if(*ex, "landscape", [&](auto& e) { c.landscape = as_bool(e); });
    set_if(*ex, "landscape_nx", [&](auto& e) { c.landscape_nx = as_int(e); });
    set_if(*ex, "landscape_nz", [&](auto& e) { c.landscape_nz = as_int(e); });
    set_if(*ex, "landscape_iterations", [&](auto& e) { c.landscape_iterations = as_int(e); });
  }
  return c;
}

inline RunConfig read_run_config(const std::string& path) {
  return run_config_from_ini(read_ini(path), std::filesystem::path(path).parent_path());
}

/// The task a config names: a built-in id or a task file.
inline TaskSpec resolve_task(const std::string& id, const std::string& file) {
  if (!file.empty()) return read_task(file);
  try {
    return find_task(id);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what(), 0, "task");
  }
}

/// Task defaults with the config's overrides applied, checked for range.
inline PipelineOptions resolve_options(const TaskSpec& spec, const RunConfig& c) {
  PipelineOptions o = default_options(spec);
  if (c.n_stage) o.n_stage = *c.n_stage;
  if (c.n_step) o.n_step = *c.n_step;
  if (c.iterations) o.solver.iterations = *c.iterations;
  if (c.lr) o.solver.lr = *c.lr;
  o.restarts = c.restarts;
  o.threads = c.threads;
  o.inject_noop = c.inject_noop;
  o.seed = c.seed;
  if (o.n_stage < 0) throw ConfigError("must be >= 0", 0, "n_stage");
  if (o.n_step < 1) throw ConfigError("must be >= 1", 0, "n_step");
  if (o.solver.iterations < 1) throw ConfigError("must be >= 1", 0, "iterations");
  if (!(o.solver.lr > 0.0)) throw ConfigError("must be positive", 0, "lr");
  if (o.restarts < 1) throw ConfigError("must be >= 1", 0, "restarts");
  if (o.threads < 1) throw ConfigError("must be >= 1", 0, "threads");
  if (c.landscape && (c.landscape_nx < 1 || c.landscape_nz < 1 || c.landscape_iterations < 1))
    throw ConfigError("landscape grid and budget must be >= 1", 0, "landscape");
  if (c.landscape && spec.manipulators.size() != 1)
    throw ConfigError("landscape export needs a single-manipulator task", 0, "landscape");
  return o;
}

}  // namespace cpdeform::io
