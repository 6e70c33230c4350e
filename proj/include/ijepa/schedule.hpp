#pragma once

#include "ijepa/config.hpp"
#include "ijepa/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ijepa {

// Step-indexed schedules. Totals are derived from epochs and the number of
// full batches per epoch.
struct Schedule {
  OptimConfig optim;
  long steps_per_epoch = 1;
  long total_steps = 1;
  long warmup_steps = 0;

  static Schedule from(const OptimConfig& o, std::size_t dataset_size) {
    Schedule s;
    s.optim = o;
    s.steps_per_epoch = std::max<long>(1, static_cast<long>(dataset_size) / std::max(1, o.batch_size));
    s.total_steps = s.steps_per_epoch * o.epochs;
    s.warmup_steps = s.steps_per_epoch * o.warmup_epochs;
    return s;
  }

  EmaSchedule ema() const { return {optim.ema_start, optim.ema_end, total_steps}; }
};

struct ScheduleState {
  long step = 0;
  double lr = 0.0;
  double wd = 0.0;
  double ema_m = 0.0;
};

// Linear warmup lr_start -> lr_peak, then cosine decay to lr_final.
inline double lr_at(const Schedule& s, long step) {
  step = std::clamp(step, 0L, s.total_steps);
  const auto& o = s.optim;
  if (step < s.warmup_steps) {
    return std::lerp(o.lr_start, o.lr_peak, static_cast<double>(step) / static_cast<double>(s.warmup_steps));
  }
  const long span = s.total_steps - s.warmup_steps;
  if (span <= 0) return o.lr_final;
  const double t = static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
  return o.lr_final + 0.5 * (o.lr_peak - o.lr_final) * (1.0 + std::cos(std::numbers::pi * t));
}

inline double wd_at(const Schedule& s, long step) {
  step = std::clamp(step, 0L, s.total_steps);
  if (s.total_steps <= 0) return s.optim.wd_end;
  return std::lerp(s.optim.wd_start, s.optim.wd_end, static_cast<double>(step) / static_cast<double>(s.total_steps));
}

inline ScheduleState schedule_at(const Schedule& s, long step) {
  return {step, lr_at(s, step), wd_at(s, step), momentum_at(s.ema(), std::clamp(step, 0L, s.total_steps))};
}

}  // namespace ijepa
