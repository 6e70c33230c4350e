#pragma once

#include "ijepa/checkpoint.hpp"
#include "ijepa/config.hpp"
#include "ijepa/evaluation.hpp"
#include "ijepa/train.hpp"

#include "json.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace ijepa {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kCodeVersion = "ijepa-desk 1.0.0";
inline constexpr const char* kRunRootEnv = "IJEPA_RUN_ROOT";

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Relative output directories resolve against $IJEPA_RUN_ROOT when set.
inline fs::path resolve_run_dir(const std::string& out) {
  fs::path p(out);
  if (p.is_absolute()) return p;
  const char* root = std::getenv(kRunRootEnv);
  if (root != nullptr && *root != '\0') return fs::path(root) / p;
  return p;
}

inline void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << text;
    if (!os.flush()) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw IoError("run directory " + dir.string() + " is locked by another process (" + path_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) {
      ::close(fd_);
      fd_ = -1;
      throw IoError("cannot write lock file " + path_.string());
    }
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;
  ~RunLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

struct RunPaths {
  fs::path dir;

  fs::path manifest() const { return dir / "manifest.json"; }
  fs::path config() const { return dir / "config.resolved"; }
  fs::path metrics() const { return dir / "metrics.jsonl"; }
  fs::path failed() const { return dir / "FAILED"; }
  fs::path checkpoint(long step) const { return dir / ("ckpt_" + std::to_string(step)); }
};

struct RunManifest {
  std::string config_hash;
  std::string code_version = kCodeVersion;
  std::uint64_t seed = 0;
  std::string started;
  std::string ended;
  std::string status = "running";
  std::string resumed_from;
  std::vector<std::string> artifacts;

  json to_json() const {
    return {{"config_hash", config_hash}, {"code_version", code_version}, {"seed", seed},
            {"started", started},         {"ended", ended},               {"status", status},
            {"resumed_from", resumed_from}, {"artifacts", artifacts}};
  }
  void write(const RunPaths& p) const { write_atomic(p.manifest(), to_json().dump(2) + "\n"); }
};

inline json metrics_row(const StepReport& r, long steps_per_epoch, double wall_ms) {
  return {{"step", r.schedule.step},
          {"epoch", r.schedule.step / std::max(1L, steps_per_epoch)},
          {"lr", r.schedule.lr},
          {"wd", r.schedule.wd},
          {"ema_m", r.schedule.ema_m},
          {"loss", r.loss.total},
          {"loss_per_block", r.loss.per_block},
          {"context_ratio", r.context_ratio},
          {"wall_ms", wall_ms},
          {"skipped", r.skipped}};
}

inline std::vector<json> read_metrics(const fs::path& path) {
  std::vector<json> rows;
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) rows.push_back(json::parse(line));
  }
  return rows;
}

// Keeps metric rows with step < `step`; used when resuming.
inline void truncate_metrics(const fs::path& path, long step) {
  if (!fs::exists(path)) return;
  std::string kept;
  for (const json& row : read_metrics(path)) {
    if (row.at("step").get<long>() < step) kept += row.dump() + "\n";
  }
  write_atomic(path, kept);
}

// Configs that differ only in run-management fields train identically.
inline Config trajectory_config(Config c) {
  c.run.checkpoint_every = 0;
  c.run.max_steps = 0;
  c.run.workers = 1;
  return c;
}

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainOptions {
  std::string out;
  std::string resume;                          // checkpoint path, empty for a fresh run
  std::ostream* log = nullptr;                 // progress lines; null for silence
  int log_every = 50;
  std::function<void(const StepReport&)> on_step;
};

struct PretrainResult {
  TrainState<float> state;
  RunPaths paths;
  std::vector<double> losses;  // this invocation only
  std::string final_checkpoint;
};

inline PretrainResult pretrain(const Config& cfg, const PretrainOptions& opt) {
  validate(cfg);
  RunPaths paths{resolve_run_dir(opt.out)};
  fs::create_directories(paths.dir);
  RunLock lock(paths.dir);

  RunManifest manifest;
  manifest.config_hash = config_hash(cfg);
  manifest.seed = cfg.run.seed;
  manifest.started = utc_now();
  manifest.resumed_from = opt.resume;
  manifest.artifacts = {paths.config().filename().string(), paths.metrics().filename().string()};
  write_atomic(paths.config(), cfg.serialize());
  manifest.write(paths);
  std::error_code ec;
  fs::remove(paths.failed(), ec);

  PretrainResult result;
  result.paths = paths;
  try {
    const Dataset ds = load_training_data(cfg);
    const TrainData<float> data = TrainData<float>::from(ds, cfg.model);
    const Schedule sched = Schedule::from(cfg.optim, data.size());
    const auto pos = PositionTables<float>::make(data.grid, cfg.model.width, cfg.predictor.width);

    if (opt.resume.empty()) {
      result.state = init_state<float>(cfg);
      write_atomic(paths.metrics(), "");
    } else {
      const Checkpoint ck = load_checkpoint(opt.resume);
      const Config saved = parse_config_text(ck.config_text, opt.resume);
      if (trajectory_config(saved).serialize() != trajectory_config(cfg).serialize()) {
        throw ConfigError("resume config differs from the checkpoint's config (" + opt.resume + ")");
      }
      result.state = from_checkpoint<float>(ck, cfg);
      result.state.config = cfg;
      truncate_metrics(paths.metrics(), result.state.step);
    }
    TrainState<float>& st = result.state;

    const long end = cfg.run.max_steps > 0 ? std::min(sched.total_steps, cfg.run.max_steps) : sched.total_steps;
    std::ofstream metrics(paths.metrics(), std::ios::app);
    if (!metrics) throw IoError("cannot append to " + paths.metrics().string());
    while (st.step < end) {
      const auto t0 = std::chrono::steady_clock::now();
      const StepReport rep = train_step(st, data, sched, pos);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      metrics << metrics_row(rep, sched.steps_per_epoch, ms).dump() << "\n";
      metrics.flush();
      result.losses.push_back(rep.loss.total);
      if (opt.on_step) opt.on_step(rep);
      if (opt.log != nullptr) {
        if (!rep.event.empty()) *opt.log << "step " << rep.schedule.step << ": " << rep.event << "\n";
        if (opt.log_every > 0 && (rep.schedule.step % opt.log_every == 0 || st.step == end)) {
          *opt.log << "step " << rep.schedule.step << "/" << end << " loss " << rep.loss.total << " lr "
                   << rep.schedule.lr << " ema " << rep.schedule.ema_m << " (" << static_cast<long>(ms) << " ms)\n";
        }
      }
      if (cfg.run.checkpoint_every > 0 && st.step % cfg.run.checkpoint_every == 0 && st.step < end) {
        save_checkpoint(to_checkpoint(st), paths.checkpoint(st.step).string());
        manifest.artifacts.push_back(paths.checkpoint(st.step).filename().string());
      }
    }
    result.final_checkpoint = paths.checkpoint(st.step).string();
    save_checkpoint(to_checkpoint(st), result.final_checkpoint);
    manifest.artifacts.push_back(paths.checkpoint(st.step).filename().string());
    manifest.status = "complete";
    manifest.ended = utc_now();
    manifest.write(paths);
  } catch (const std::exception& e) {
    write_atomic(paths.failed(), std::string(e.what()) + "\n");
    manifest.status = "failed";
    manifest.ended = utc_now();
    manifest.write(paths);
    throw;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Ablations

// Short axis names accepted in grid files, mapped to config keys.
inline std::string axis_key(const std::string& axis) {
  static const std::map<std::string, std::string> aliases{
      {"target_scale", "masking.target_scale"},
      {"context_scale", "masking.context_scale"},
      {"n_targets", "masking.n_targets"},
      {"masking_strategy", "masking.strategy"},
      {"target_mask_mode", "objective.target_mask_mode"},
      {"target_type", "objective.target_type"},
      {"predictor_depth", "predictor.depth"},
      {"predictor_width", "predictor.width"},
      {"wd_mode", "wd_mode"},
  };
  const auto it = aliases.find(axis);
  return it == aliases.end() ? axis : it->second;
}

// wd_mode: "ramp" keeps the configured wd_start -> wd_end, "fixed:<v>" pins both.
inline void apply_axis(Config& c, const std::string& axis, const std::string& value) {
  const std::string key = axis_key(axis);
  if (key == "wd_mode") {
    const std::string v = config_detail::trim(value);
    if (v == "ramp") return;
    if (v.rfind("fixed:", 0) == 0) {
      const double wd = config_detail::parse_double(v.substr(6));
      c.optim.wd_start = c.optim.wd_end = wd;
      return;
    }
    throw ConfigError("wd_mode: expected 'ramp' or 'fixed:<value>', got '" + v + "'");
  }
  c.set(key, value);
}

struct AblationPoint {
  std::string value;
  bool ok = false;
  std::string error;
  double accuracy = 0.0;
  double val_accuracy = 0.0;
  std::string representation;
  std::string head;
  CollapseReport collapse;
  double first_loss = 0.0;  // mean over the first 10% of steps
  double final_loss = 0.0;  // mean over the last 10% of steps
  double mean_context_ratio = 0.0;
  long steps = 0;
  double seconds = 0.0;
};

struct AblationResult {
  std::string axis;
  std::string base_hash;
  bool quick = false;
  std::vector<AblationPoint> points;
};

struct AblationOptions {
  std::string out;
  bool quick = false;       // CI mode: few steps and a short probe per point
  long quick_steps = 12;
  std::ostream* log = nullptr;
};

inline json to_json(const CollapseReport& c) {
  return {{"mean_std", c.mean_std}, {"mean_pairwise_cosine", c.mean_pairwise_cosine}, {"effective_rank", c.effective_rank}};
}

inline json to_json(const AblationResult& r) {
  json pts = json::array();
  for (const auto& p : r.points) {
    json j{{"value", p.value}, {"ok", p.ok}};
    if (p.ok) {
      j.update({{"accuracy", p.accuracy},
                {"val_accuracy", p.val_accuracy},
                {"representation", p.representation},
                {"head", p.head},
                {"collapse", to_json(p.collapse)},
                {"first_loss", p.first_loss},
                {"final_loss", p.final_loss},
                {"mean_context_ratio", p.mean_context_ratio},
                {"steps", p.steps},
                {"seconds", p.seconds}});
    } else {
      j["error"] = p.error;
    }
    pts.push_back(j);
  }
  return {{"axis", r.axis}, {"base_config_hash", r.base_hash}, {"quick", r.quick}, {"points", pts}};
}

inline std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// Plain-text table with one row per axis value.
inline std::string render_table(const AblationResult& r) {
  std::string head = r.axis;
  std::vector<std::vector<std::string>> rows;
  for (const auto& p : r.points) {
    if (p.ok) {
      rows.push_back({p.value, fixed(100.0 * p.accuracy, 1), fixed(p.collapse.effective_rank, 2),
                      fixed(p.mean_context_ratio, 3), fixed(p.final_loss, 3)});
    } else {
      rows.push_back({p.value, "failed", "-", "-", p.error});
    }
  }
  const std::vector<std::string> cols{head, "Top-1", "Eff. rank", "Ctx ratio", "Final loss"};
  std::vector<std::size_t> w(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) {
    w[i] = cols[i].size();
    for (const auto& row : rows) w[i] = std::max(w[i], row[i].size());
  }
  std::string out;
  for (std::size_t i = 0; i < cols.size(); ++i) out += pad(cols[i], w[i] + 2);
  out += "\n";
  std::size_t total = 0;
  for (auto x : w) total += x + 2;
  out += std::string(total, '-') + "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += pad(row[i], w[i] + 2);
    out += "\n";
  }
  return out;
}

inline std::string slug(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' ? ch : '_';
  return out;
}

inline double mean_of(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
  if (hi <= lo) return 0.0;
  double s = 0.0;
  for (std::size_t i = lo; i < hi; ++i) s += v[i];
  return s / static_cast<double>(hi - lo);
}

// Trains and probes every grid point from the same seed. A failing point is
// recorded and the sweep continues.
inline AblationResult run_ablation(const Config& base, const AblationOptions& opt) {
  if (base.ablation.axis.empty()) throw ConfigError("ablation.axis: must name an axis");
  if (base.ablation.values.empty()) throw ConfigError("ablation.values: must list at least one value");
  const fs::path dir = resolve_run_dir(opt.out);
  fs::create_directories(dir);

  AblationResult result;
  result.axis = base.ablation.axis;
  result.base_hash = config_hash(base);
  result.quick = opt.quick;

  Config probe_cfg = base;
  if (opt.quick) {
    probe_cfg.probe.epochs = std::min(probe_cfg.probe.epochs, 40);
    probe_cfg.probe.n_images = std::min(probe_cfg.probe.n_images, 200);
  }
  const Dataset probe_ds = load_probe_data(probe_cfg.probe, base.model);

  for (const std::string& raw : base.ablation.values) {
    AblationPoint point;
    point.value = config_detail::trim(raw);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      Config c = base;
      c.ablation = {};
      apply_axis(c, base.ablation.axis, point.value);
      if (opt.quick) {
        c.run.max_steps = opt.quick_steps;
        c.probe = probe_cfg.probe;
      }
      c.run.checkpoint_every = 0;
      validate(c);
      if (opt.log != nullptr) *opt.log << "[" << result.axis << " = " << point.value << "] training\n";
      double ratio_sum = 0.0;
      PretrainOptions popt;
      popt.out = (dir / ("point_" + slug(point.value))).string();
      popt.on_step = [&](const StepReport& r) { ratio_sum += r.context_ratio; };
      PretrainResult run = pretrain(c, popt);
      const std::size_t n = run.losses.size();
      const std::size_t tenth = std::max<std::size_t>(1, n / 10);
      point.first_loss = mean_of(run.losses, 0, std::min(n, tenth));
      point.final_loss = mean_of(run.losses, n - std::min(n, tenth), n);
      point.mean_context_ratio = n > 0 ? ratio_sum / static_cast<double>(n) : 0.0;
      point.steps = static_cast<long>(n);

      const RepresentationProbe best = probe_encoder(run.state.target, c.model, probe_ds, c.probe);
      point.accuracy = best.result.accuracy;
      point.val_accuracy = best.result.val_accuracy;
      point.representation = config_detail::kRepresentations.name(best.representation);
      point.head = config_detail::kHeads.name(best.result.head);
      point.collapse = collapse_report(
          extract_features(run.state.target, c.model, probe_ds.images, Representation::kLastLayerAvgPool));
      point.ok = true;
    } catch (const std::exception& e) {
      point.ok = false;
      point.error = e.what();
      if (opt.log != nullptr) *opt.log << "  failed: " << e.what() << "\n";
    }
    point.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.points.push_back(point);
    write_atomic(dir / "results.json", to_json(result).dump(2) + "\n");
  }
  write_atomic(dir / "results.txt", render_table(result));
  return result;
}

// ---------------------------------------------------------------------------
// Report: CSV series for external plotting.

inline std::string loss_curve_csv(const fs::path& metrics) {
  std::string out = "step,epoch,lr,wd,ema_m,loss,context_ratio\n";
  for (const json& row : read_metrics(metrics)) {
    out += std::to_string(row.at("step").get<long>()) + "," + std::to_string(row.at("epoch").get<long>()) + "," +
           config_detail::fmt_double(row.at("lr").get<double>()) + "," +
           config_detail::fmt_double(row.at("wd").get<double>()) + "," +
           config_detail::fmt_double(row.at("ema_m").get<double>()) + "," +
           config_detail::fmt_double(row.at("loss").get<double>()) + "," +
           config_detail::fmt_double(row.at("context_ratio").get<double>()) + "\n";
  }
  return out;
}

inline std::string ablation_csv(const fs::path& results) {
  const json r = json::parse(read_text(results));
  std::string out = "axis,value,ok,accuracy,effective_rank,mean_context_ratio,final_loss\n";
  const std::string axis = r.at("axis").get<std::string>();
  for (const json& p : r.at("points")) {
    const bool ok = p.at("ok").get<bool>();
    out += axis + "," + p.at("value").get<std::string>() + "," + (ok ? "1" : "0") + ",";
    if (ok) {
      out += config_detail::fmt_double(p.at("accuracy").get<double>()) + "," +
             config_detail::fmt_double(p.at("collapse").at("effective_rank").get<double>()) + "," +
             config_detail::fmt_double(p.at("mean_context_ratio").get<double>()) + "," +
             config_detail::fmt_double(p.at("final_loss").get<double>());
    } else {
      out += ",,,";
    }
    out += "\n";
  }
  return out;
}

}  // namespace ijepa
