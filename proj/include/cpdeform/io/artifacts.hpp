#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpdeform/errors.hpp"
#include "cpdeform/io/ini.hpp"
#include "cpdeform/io/run_config.hpp"
#include "cpdeform/io/task_file.hpp"
#include "cpdeform/pipeline.hpp"

namespace cpdeform::io {

using Json = nlohmann::ordered_json;

inline constexpr const char* kSchemaVersion = "1";

/// Writes next to the target and renames over it, so readers never see a
/// half-written file.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error("cannot move " + tmp.string() + " into place");
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Fixed-precision text for CSV cells; NaN stays "nan".
inline std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }
inline Json to_json(const Quat& q) { return Json::array({q.w(), q.x(), q.y(), q.z()}); }
inline Json to_json(const Pose& p) { return Json{{"translation", to_json(p.translation)}, {"rotation", to_json(p.rotation)}}; }

/// Resolved configuration of a run: what was asked for and what it became.
inline Json config_json(const RunConfig& c, const TaskSpec& spec, const PipelineOptions& o) {
  Json j;
  j["task"] = spec.id;
  if (!c.task_file.empty()) j["task_file"] = c.task_file;
  j["method"] = std::string(to_string(c.method));
  j["seed"] = c.seed;
  j["n_stage"] = o.n_stage;
  j["n_step"] = o.n_step;
  j["iterations"] = o.solver.iterations;
  j["lr"] = o.solver.lr;
  j["restarts"] = o.restarts;
  j["inject_noop"] = o.inject_noop;
  j["priorities"] = {{"exponent", o.priorities.exponent},
                     {"gauge", o.priorities.gauge == ot::PriorityGauge::mean ? "mean" : "median"},
                     {"debias", o.priorities.debias},
                     {"epsilon_start", o.priorities.schedule.start_factor},
                     {"epsilon_end", o.priorities.schedule.end_factor},
                     {"levels", o.priorities.schedule.levels}};
  j["export"] = {{"frames", c.frames}, {"priorities", c.priorities}, {"landscape", c.landscape}};
  if (c.landscape)
    j["landscape"] = {{"nx", c.landscape_nx}, {"nz", c.landscape_nz}, {"iterations", c.landscape_iterations}};
  // Threads and the output path do not change results and stay out, so that
  // artifacts of equal runs are equal.
  j["task_definition"] = write_task(spec);
  return j;
}

inline Json candidate_json(const CandidateRecord& c) {
  Json j;
  j["pose"] = c.pose_id;
  j["center"] = c.center;
  Json poses = Json::array();
  for (const auto& p : c.poses) poses.push_back(to_json(p));
  j["poses"] = poses;
  j["score"] = c.score;
  j["loss"] = c.loss;
  j["solver_loss"] = c.solver_loss;
  j["best_iteration"] = c.best_iteration;
  j["blowups"] = c.blowups;
  j["wall_time"] = c.wall_time;
  j["failed"] = c.failed;
  if (c.failed) j["error"] = c.error;
  Json actions = Json::array();
  for (int t = 0; t < c.actions.steps(); ++t) {
    Json step = Json::array();
    for (int m = 0; m < c.actions.manipulators(); ++m) {
      Json a = Json::array();
      for (int d = 0; d < c.actions.dims(); ++d) a.push_back(c.actions.at(t, m, d));
      step.push_back(a);
    }
    actions.push_back(step);
  }
  j["actions"] = actions;
  return j;
}

inline Json metrics_json(const MetricsRecord& m) {
  return Json{{"w1", m.w1},         {"w1_initial", m.w1_initial}, {"iou_initial", m.iou_initial},
              {"iou_final", m.iou_final}, {"niiou", m.niiou},       {"wall_time", m.wall_time},
              {"stage_wall_times", m.stage_wall_times}};
}

inline Json run_json(const RunRecord& run, const Json& config) {
  Json j;
  j["schema"] = kSchemaVersion;
  j["status"] = "ok";
  j["config"] = config;
  j["task"] = run.task_id;
  j["method"] = std::string(to_string(run.method));
  j["seed"] = run.seed;
  Json stages = Json::array();
  for (const auto& s : run.stages) {
    Json st;
    st["stage"] = s.stage;
    st["peak"] = s.peak;
    st["executed"] = s.executed;
    st["loss_before"] = s.loss_before;
    st["loss"] = s.loss;
    st["niiou"] = s.niiou;
    st["wall_time"] = s.wall_time;
    if (!s.warning.empty()) st["warning"] = s.warning;
    Json cands = Json::array();
    for (const auto& c : s.candidates) cands.push_back(candidate_json(c));
    st["candidates"] = cands;
    stages.push_back(st);
  }
  j["stages"] = stages;
  j["metrics"] = metrics_json(run.metrics);
  j["warnings"] = run.warnings;
  j["wall_time"] = run.wall_time;
  return j;
}

/// Machine-readable record of a failed run.
inline Json error_json(const Json& config, const std::string& kind, const std::string& message) {
  Json j;
  j["schema"] = kSchemaVersion;
  j["status"] = "error";
  j["config"] = config;
  j["error"] = {{"kind", kind}, {"message", message}};
  return j;
}

/// Leading comment lines of every CSV: format version and resolved config.
inline std::string csv_preamble(const std::string& what, const Json& config) {
  return "# cpdeform " + what + " schema " + kSchemaVersion + "\n# config " + config.dump() + "\n";
}

// metrics.csv: stage 0 is the initial cloud, stage k the cloud after stage k.
// Every value is a deterministic function of the config; wall times are in
// timing.csv.
inline std::string metrics_csv(const RunRecord& run, const Json& config) {
  std::string out = csv_preamble("metrics", config) + "stage,method,w1,niiou\n";
  const std::string method(to_string(run.method));
  out += "0," + method + "," + csv_number(run.metrics.w1_initial) + ",0\n";
  for (const auto& s : run.stages)
    out += std::to_string(s.stage + 1) + "," + method + "," + csv_number(s.loss) + "," + csv_number(s.niiou) + "\n";
  return out;
}

inline std::string timing_csv(const RunRecord& run, const Json& config) {
  std::string out = csv_preamble("timing", config) + "stage,method,wall_time,cumulative_wall_time\n";
  const std::string method(to_string(run.method));
  double total = 0.0;
  for (const auto& s : run.stages) {
    total += s.wall_time;
    out += std::to_string(s.stage + 1) + "," + method + "," + csv_number(s.wall_time) + "," + csv_number(total) + "\n";
  }
  return out;
}

/// Solver loss per iteration of every candidate.
inline std::string history_csv(const RunRecord& run, const Json& config) {
  std::string out = csv_preamble("loss history", config) + "stage,candidate,pose,iteration,loss,shape,grasp\n";
  for (const auto& s : run.stages)
    for (std::size_t k = 0; k < s.candidates.size(); ++k)
      for (const auto& h : s.candidates[k].history)
        out += std::to_string(s.stage + 1) + "," + std::to_string(k) + "," + s.candidates[k].pose_id + "," +
               std::to_string(h.iteration) + "," + csv_number(h.loss) + "," + csv_number(h.shape) + "," +
               csv_number(h.grasp) + "\n";
  return out;
}

inline std::string landscape_csv(const LandscapeResult& r, const Json& config) {
  std::string out = csv_preamble("landscape", config) + "i,j,x,z,loss,priority\n";
  for (const auto& c : r.cells)
    out += std::to_string(c.i) + "," + std::to_string(c.j) + "," + csv_number(c.x) + "," + csv_number(c.z) + "," +
           csv_number(c.valid ? c.loss : std::nan("")) + "," + csv_number(c.priority) + "\n";
  return out;
}

inline std::vector<std::string> ply_comments(const std::string& what, const Json& config) {
  return {std::string("cpdeform ") + what + " schema " + kSchemaVersion, "config " + config.dump()};
}

inline std::string frame_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.ply", k);
  return buf;
}

/// Everything a finished run leaves in `dir`.
inline void write_run_artifacts(const std::filesystem::path& dir, const RunRecord& run, const TaskInstance& inst,
                                const RunConfig& rc, const Json& config) {
  std::filesystem::create_directories(dir);
  atomic_write(dir / "metrics.csv", metrics_csv(run, config));
  atomic_write(dir / "timing.csv", timing_csv(run, config));
  atomic_write(dir / "history.csv", history_csv(run, config));
  if (rc.frames) {
    atomic_write(dir / "frames" / frame_name(0), to_ply(run.initial, {}, ply_comments("frame 0", config)));
    for (std::size_t k = 0; k < run.stages.size(); ++k)
      atomic_write(dir / "frames" / frame_name(k + 1),
                   to_ply(run.stages[k].cloud, {}, ply_comments("frame " + std::to_string(k + 1), config)));
    atomic_write(dir / "frames" / "goal.ply", to_ply(inst.goal, {}, ply_comments("goal", config)));
  }
  if (rc.priorities) {
    // Priorities live on the cloud at the start of each stage.
    for (std::size_t k = 0; k < run.stages.size(); ++k) {
      const ParticleCloud& at = k == 0 ? run.initial : run.stages[k - 1].cloud;
      const auto& f = run.stages[k].priorities;
      if (f.size() != at.size()) continue;
      atomic_write(dir / "priorities" / frame_name(k + 1),
                   to_ply(at, {{"priority", f}}, ply_comments("priorities stage " + std::to_string(k + 1), config)));
    }
  }
  // run.json last: its presence marks a complete artifact set.
  atomic_write(dir / "run.json", run_json(run, config).dump(2) + "\n");
}

}  // namespace cpdeform::io
