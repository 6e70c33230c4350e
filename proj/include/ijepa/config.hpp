#pragma once

#include "ijepa/backbone.hpp"
#include "ijepa/core.hpp"
#include "ijepa/masking.hpp"
#include "ijepa/objective.hpp"
#include "ijepa/optim.hpp"
#include "ijepa/predictor.hpp"
#include "ijepa/rng.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace ijepa {

enum class TargetType { kRepresentation, kPixels };

inline std::string to_string(TargetType t) { return t == TargetType::kRepresentation ? "representation" : "pixels"; }

struct DataConfig {
  std::string path;  // binary dataset; empty means generate the synthetic corpus
  int n_images = 1600;
  std::uint64_t seed = 1;
};

struct ObjectiveConfig {
  TargetMaskMode target_mask_mode = TargetMaskMode::kOutput;
  TargetType target_type = TargetType::kRepresentation;
  bool normalize_per_patch = false;
};

struct OptimConfig {
  int batch_size = 64;
  int epochs = 20;
  int warmup_epochs = 2;
  double lr_start = 1e-4;
  double lr_peak = 1e-3;
  double lr_final = 1e-6;
  double wd_start = 0.04;
  double wd_end = 0.4;
  double ema_start = 0.996;
  double ema_end = 1.0;
  AdamWConfig adamw;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int checkpoint_every = 100;
  long max_steps = 0;  // stop early (schedule unchanged) when > 0
  int workers = 1;     // batch fan-out threads; results do not depend on this
};

enum class Representation { kLastLayerAvgPool, kConcatLast4AvgPool };
enum class ProbeHead { kLinear, kBatchNormLinear };
enum class ProbeTask { kShape, kCount };

struct ProbeConfig {
  std::vector<Representation> representations{Representation::kLastLayerAvgPool,
                                              Representation::kConcatLast4AvgPool};
  std::vector<ProbeHead> heads{ProbeHead::kLinear, ProbeHead::kBatchNormLinear};
  int epochs = 300;
  std::vector<double> lr_grid{0.03, 0.3};
  std::vector<double> wd_grid{1e-4, 1e-3, 1e-2};
  double label_fraction = 1.0;  // < 1 gives the reduced-label (low-shot) mode
  ProbeTask task = ProbeTask::kShape;
  std::string data_path;  // empty means a synthetic probe corpus
  int n_images = 1000;
  std::uint64_t data_seed = 7;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct AblationConfig {
  std::string axis;
  std::vector<std::string> values;
};

inline ViTConfig desk_model() {
  ViTConfig m;
  m.pixel_shift = 0.3;
  m.pixel_scale = 3.0;
  m.patch_init_std = 0.08;
  return m;
}

struct Config {
  DataConfig data;
  ViTConfig model = desk_model();
  PredictorConfig predictor;
  MaskingConfig masking;
  ObjectiveConfig objective;
  OptimConfig optim;
  RunConfig run;
  ProbeConfig probe;
  AblationConfig ablation;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  std::string serialize() const;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

inline double parse_double(const std::string& s) {
  const std::string t = trim(s);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

inline long long parse_int(const std::string& s) {
  const std::string t = trim(s);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

inline std::uint64_t parse_u64(const std::string& s) {
  const std::string t = trim(s);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) throw ConfigError("expected an unsigned integer, got '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  const std::string t = trim(s);
  if (t == "true") return true;
  if (t == "false") return false;
  throw ConfigError("expected true|false, got '" + s + "'");
}

inline Range parse_range(const std::string& s) {
  std::string t = trim(s);
  if (t.size() >= 2 && t.front() == '(' && t.back() == ')') t = t.substr(1, t.size() - 2);
  const auto parts = split(t, ',');
  if (parts.size() != 2) throw ConfigError("expected a pair '(lo, hi)', got '" + s + "'");
  return {parse_double(parts[0]), parse_double(parts[1])};
}

inline std::string fmt_range(const Range& r) { return "(" + fmt_double(r.first) + ", " + fmt_double(r.second) + ")"; }

inline std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& p : split(s, ',')) out.push_back(parse_double(p));
  return out;
}

inline std::string fmt_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt_double(v[i]);
  return out;
}

template <class E>
struct EnumNames {
  std::vector<std::pair<E, std::string>> names;

  E parse(const std::string& s) const {
    for (const auto& [e, n] : names) {
      if (n == trim(s)) return e;
    }
    std::string opts;
    for (const auto& [e, n] : names) opts += (opts.empty() ? "" : "|") + n;
    throw ConfigError("unknown value '" + trim(s) + "' (expected " + opts + ")");
  }
  std::string name(E e) const {
    for (const auto& [v, n] : names) {
      if (v == e) return n;
    }
    return "?";
  }
  std::vector<E> parse_list(const std::string& s) const {
    std::vector<E> out;
    for (const auto& p : split(s, ',')) out.push_back(parse(p));
    return out;
  }
  std::string fmt_list(const std::vector<E>& v) const {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + name(v[i]);
    return out;
  }
};

inline const EnumNames<MaskStrategy> kStrategies{{{MaskStrategy::kMultiBlock, "multi-block"},
                                                  {MaskStrategy::kRasterized, "rasterized"},
                                                  {MaskStrategy::kBlock, "block"},
                                                  {MaskStrategy::kRandom, "random"}}};
inline const EnumNames<TargetMaskMode> kMaskModes{{{TargetMaskMode::kOutput, "output"}, {TargetMaskMode::kInput, "input"}}};
inline const EnumNames<TargetType> kTargetTypes{{{TargetType::kRepresentation, "representation"},
                                                 {TargetType::kPixels, "pixels"}}};
inline const EnumNames<Representation> kRepresentations{{{Representation::kLastLayerAvgPool, "last_layer_avgpool"},
                                                         {Representation::kConcatLast4AvgPool, "concat_last4_avgpool"}}};
inline const EnumNames<ProbeHead> kHeads{{{ProbeHead::kLinear, "linear"}, {ProbeHead::kBatchNormLinear, "batchnorm_linear"}}};
inline const EnumNames<ProbeTask> kTasks{{{ProbeTask::kShape, "shape"}, {ProbeTask::kCount, "count"}}};

struct Field {
  std::string key;  // "section.name"
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <class C>
std::vector<Field> fields(C& c) {
  // Works for both Config& and const Config& (setters are only used on the former).
  auto& m = const_cast<Config&>(static_cast<const Config&>(c));
  std::vector<Field> f;
  auto num = [&f](std::string key, auto& ref) {
    using V = std::remove_reference_t<decltype(ref)>;
    f.push_back({std::move(key),
                 [&ref] {
                   if constexpr (std::is_floating_point_v<V>) return fmt_double(ref);
                   else return std::to_string(ref);
                 },
                 [&ref](const std::string& s) {
                   if constexpr (std::is_floating_point_v<V>) ref = parse_double(s);
                   else if constexpr (std::is_same_v<V, std::uint64_t>) ref = parse_u64(s);
                   else ref = static_cast<V>(parse_int(s));
                 }});
  };
  auto flag = [&f](std::string key, bool& ref) {
    f.push_back({std::move(key), [&ref] { return std::string(ref ? "true" : "false"); },
                 [&ref](const std::string& s) { ref = parse_bool(s); }});
  };
  auto range = [&f](std::string key, Range& ref) {
    f.push_back({std::move(key), [&ref] { return fmt_range(ref); }, [&ref](const std::string& s) { ref = parse_range(s); }});
  };
  auto text = [&f](std::string key, std::string& ref) {
    f.push_back({std::move(key), [&ref] { return ref; }, [&ref](const std::string& s) { ref = trim(s); }});
  };
  auto choice = [&f](std::string key, auto& ref, const auto& names) {
    f.push_back({std::move(key), [&ref, &names] { return names.name(ref); },
                 [&ref, &names](const std::string& s) { ref = names.parse(s); }});
  };
  auto choices = [&f](std::string key, auto& ref, const auto& names) {
    f.push_back({std::move(key), [&ref, &names] { return names.fmt_list(ref); },
                 [&ref, &names](const std::string& s) { ref = names.parse_list(s); }});
  };
  auto reals = [&f](std::string key, std::vector<double>& ref) {
    f.push_back({std::move(key), [&ref] { return fmt_doubles(ref); }, [&ref](const std::string& s) { ref = parse_doubles(s); }});
  };

  text("data.path", m.data.path);
  num("data.n_images", m.data.n_images);
  num("data.seed", m.data.seed);

  num("model.width", m.model.width);
  num("model.depth", m.model.depth);
  num("model.heads", m.model.heads);
  num("model.mlp_ratio", m.model.mlp_ratio);
  num("model.patch_size", m.model.patch_size);
  num("model.channels", m.model.channels);
  num("model.image_size", m.model.image_size);
  num("model.pixel_shift", m.model.pixel_shift);
  num("model.pixel_scale", m.model.pixel_scale);
  num("model.patch_init_std", m.model.patch_init_std);

  num("predictor.width", m.predictor.width);
  num("predictor.depth", m.predictor.depth);
  num("predictor.heads", m.predictor.heads);
  num("predictor.mlp_ratio", m.predictor.mlp_ratio);
  flag("predictor.mask_positions", m.predictor.mask_positions);

  choice("masking.strategy", m.masking.strategy, kStrategies);
  num("masking.n_targets", m.masking.target.count);
  range("masking.target_scale", m.masking.target.scale);
  range("masking.target_aspect", m.masking.target.aspect);
  range("masking.context_scale", m.masking.context.scale);
  range("masking.context_aspect", m.masking.context.aspect);
  num("masking.block_scale", m.masking.block_scale);
  num("masking.random_ratio", m.masking.random_ratio);
  num("masking.min_context_patches", m.masking.limits.min_context_patches);
  num("masking.max_retries", m.masking.limits.max_retries);

  choice("objective.target_mask_mode", m.objective.target_mask_mode, kMaskModes);
  choice("objective.target_type", m.objective.target_type, kTargetTypes);
  flag("objective.normalize_per_patch", m.objective.normalize_per_patch);

  num("optim.batch_size", m.optim.batch_size);
  num("optim.epochs", m.optim.epochs);
  num("optim.warmup_epochs", m.optim.warmup_epochs);
  num("optim.lr_start", m.optim.lr_start);
  num("optim.lr_peak", m.optim.lr_peak);
  num("optim.lr_final", m.optim.lr_final);
  num("optim.wd_start", m.optim.wd_start);
  num("optim.wd_end", m.optim.wd_end);
  num("optim.ema_start", m.optim.ema_start);
  num("optim.ema_end", m.optim.ema_end);
  num("optim.beta1", m.optim.adamw.beta1);
  num("optim.beta2", m.optim.adamw.beta2);
  num("optim.eps", m.optim.adamw.eps);
  flag("optim.decay_norm_and_bias", m.optim.adamw.decay_norm_and_bias);

  num("run.seed", m.run.seed);
  num("run.checkpoint_every", m.run.checkpoint_every);
  num("run.max_steps", m.run.max_steps);
  num("run.workers", m.run.workers);

  choices("probe.representations", m.probe.representations, kRepresentations);
  choices("probe.heads", m.probe.heads, kHeads);
  num("probe.epochs", m.probe.epochs);
  reals("probe.lr_grid", m.probe.lr_grid);
  reals("probe.wd_grid", m.probe.wd_grid);
  num("probe.label_fraction", m.probe.label_fraction);
  choice("probe.task", m.probe.task, kTasks);
  text("probe.data_path", m.probe.data_path);
  num("probe.n_images", m.probe.n_images);
  num("probe.data_seed", m.probe.data_seed);
  num("probe.val_fraction", m.probe.val_fraction);
  num("probe.test_fraction", m.probe.test_fraction);
  num("probe.seed", m.probe.seed);

  text("ablation.axis", m.ablation.axis);
  f.push_back({"ablation.values",
               [&m] {
                 std::string out;
                 for (std::size_t i = 0; i < m.ablation.values.size(); ++i) out += (i ? " | " : "") + m.ablation.values[i];
                 return out;
               },
               [&m](const std::string& s) {
                 m.ablation.values.clear();
                 if (!trim(s).empty()) m.ablation.values = split(s, '|');
               }});
  return f;
}

inline const Field* find_field(const std::vector<Field>& fs, const std::string& key) {
  for (const auto& f : fs) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

}  // namespace config_detail

inline void Config::set(const std::string& key, const std::string& value) {
  const auto fs = config_detail::fields(*this);
  const auto* f = config_detail::find_field(fs, key);
  if (f == nullptr) throw ConfigError("unknown key '" + key + "'");
  try {
    f->set(value);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

inline std::string Config::get(const std::string& key) const {
  const auto fs = config_detail::fields(*this);
  const auto* f = config_detail::find_field(fs, key);
  if (f == nullptr) throw ConfigError("unknown key '" + key + "'");
  return f->get();
}

// Canonical text form: one "[section]" header per group, "key = value" lines
// in a fixed order. parse(serialize(c)) == c and the bytes are stable.
inline std::string Config::serialize() const {
  std::string out;
  std::string section;
  for (const auto& f : config_detail::fields(*this)) {
    const auto dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += f.key.substr(dot + 1) + " = " + f.get() + "\n";
  }
  return out;
}

inline void validate(const Config& c) {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); };
  try {
    validate(c.model);
  } catch (const ConfigError& e) {
    fail("model", e.what());
  }
  if (c.predictor.heads != c.model.heads) fail("predictor.heads", "must equal model.heads");
  if (c.predictor.width <= 0 || c.predictor.width % c.predictor.heads != 0) fail("predictor.width", "must be a positive multiple of heads");
  if (c.predictor.depth < 0) fail("predictor.depth", "must be >= 0");
  const auto check_spec = [&](const std::string& prefix, const BlockSpec& s) {
    if (!(s.scale.first > 0.0 && s.scale.first <= s.scale.second && s.scale.second <= 1.0)) {
      fail("masking." + prefix + "_scale", "must satisfy 0 < lo <= hi <= 1");
    }
    if (!(s.aspect.first > 0.0 && s.aspect.first <= s.aspect.second)) fail("masking." + prefix + "_aspect", "must satisfy 0 < lo <= hi");
  };
  check_spec("target", c.masking.target);
  check_spec("context", c.masking.context);
  if (c.masking.target.count < 1) fail("masking.n_targets", "must be >= 1");
  if (!(c.masking.block_scale > 0.0 && c.masking.block_scale < 1.0)) fail("masking.block_scale", "must lie in (0, 1)");
  if (!(c.masking.random_ratio > 0.0 && c.masking.random_ratio < 1.0)) fail("masking.random_ratio", "must lie in (0, 1)");
  if (c.masking.limits.min_context_patches < 1) fail("masking.min_context_patches", "must be >= 1");
  if (c.masking.limits.max_retries < 0) fail("masking.max_retries", "must be >= 0");
  if (c.data.n_images < 1) fail("data.n_images", "must be >= 1");
  const auto& o = c.optim;
  if (o.batch_size < 1) fail("optim.batch_size", "must be >= 1");
  if (o.epochs < 1) fail("optim.epochs", "must be >= 1");
  if (o.warmup_epochs < 0 || o.warmup_epochs >= o.epochs) fail("optim.warmup_epochs", "must satisfy 0 <= warmup_epochs < epochs");
  if (!(o.lr_start > 0.0)) fail("optim.lr_start", "must be > 0");
  if (!(o.lr_peak >= o.lr_start)) fail("optim.lr_peak", "must be >= lr_start");
  if (!(o.lr_final >= 0.0)) fail("optim.lr_final", "must be >= 0");
  if (!(o.wd_start >= 0.0)) fail("optim.wd_start", "must be >= 0");
  if (!(o.wd_end >= 0.0)) fail("optim.wd_end", "must be >= 0");
  if (!(o.ema_start > 0.0 && o.ema_start <= o.ema_end && o.ema_end <= 1.0)) fail("optim.ema_start", "must satisfy 0 < ema_start <= ema_end <= 1");
  if (!(o.adamw.beta1 >= 0.0 && o.adamw.beta1 < 1.0)) fail("optim.beta1", "must lie in [0, 1)");
  if (!(o.adamw.beta2 >= 0.0 && o.adamw.beta2 < 1.0)) fail("optim.beta2", "must lie in [0, 1)");
  if (!(o.adamw.eps > 0.0)) fail("optim.eps", "must be > 0");
  if (c.run.checkpoint_every < 0) fail("run.checkpoint_every", "must be >= 0");
  if (c.run.max_steps < 0) fail("run.max_steps", "must be >= 0");
  if (c.run.workers < 1) fail("run.workers", "must be >= 1");
  const auto& p = c.probe;
  if (p.representations.empty()) fail("probe.representations", "must not be empty");
  if (p.heads.empty()) fail("probe.heads", "must not be empty");
  if (p.lr_grid.empty()) fail("probe.lr_grid", "must not be empty");
  if (p.wd_grid.empty()) fail("probe.wd_grid", "must not be empty");
  for (double v : p.lr_grid) {
    if (!(v > 0.0)) fail("probe.lr_grid", "values must be > 0");
  }
  for (double v : p.wd_grid) {
    if (!(v >= 0.0)) fail("probe.wd_grid", "values must be >= 0");
  }
  if (p.epochs < 1) fail("probe.epochs", "must be >= 1");
  if (!(p.label_fraction > 0.0 && p.label_fraction <= 1.0)) fail("probe.label_fraction", "must lie in (0, 1]");
  if (!(p.val_fraction > 0.0 && p.test_fraction > 0.0 && p.val_fraction + p.test_fraction < 1.0)) {
    fail("probe.val_fraction", "val and test fractions must be > 0 and sum below 1");
  }
  if (p.n_images < 8) fail("probe.n_images", "must be >= 8");
}

inline Config parse_config_text(const std::string& text, const std::string& origin = "<config>") {
  Config c;
  const auto fs = config_detail::fields(c);
  std::istringstream is(text);
  std::string line;
  std::string section;
  std::map<std::string, int> key_lines;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = config_detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string name = config_detail::trim(line.substr(0, eq));
    const std::string key = section.empty() ? name : section + "." + name;
    const auto* f = config_detail::find_field(fs, key);
    if (f == nullptr) throw ConfigError(where + "unknown key '" + key + "'");
    key_lines[key] = lineno;
    try {
      f->set(line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  try {
    validate(c);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    const auto it = key_lines.find(msg.substr(0, msg.find(':')));
    const std::string at = it == key_lines.end() ? "" : std::to_string(it->second) + ":";
    throw ConfigError(origin + ":" + at + " " + msg);
  }
  return c;
}

inline Config parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config file not found: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

inline std::string config_hash(const Config& c) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(c.serialize())));
  return buf;
}

}  // namespace ijepa
