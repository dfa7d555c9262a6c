#include "fdvv/render.hpp"

#include <algorithm>
#include <cmath>

#include "fdvv/error.hpp"

namespace fdvv {

using nlohmann::json;

void validate_trajectory(const PressTrajectory& t) {
  for (std::size_t i = 0; i < t.samples.size(); ++i) {
    const auto& s = t.samples[i];
    if (!std::isfinite(s.t_ms) || !std::isfinite(s.displacement_mm)) {
      throw ValidationError("trajectory sample " + std::to_string(i) + " is not finite");
    }
    if (s.displacement_mm < 0.0) throw ValidationError("trajectory sample " + std::to_string(i) + " is negative");
    if (i > 0 && std::abs(s.t_ms - t.samples[i - 1].t_ms - 1.0) > 1e-9) {
      throw ValidationError("trajectory samples must be spaced exactly 1 ms apart (sample " + std::to_string(i) + ")");
    }
  }
}

PressTrajectory constant_velocity_press(double depth, double velocity, std::size_t rest, std::size_t hold,
                                        bool with_release) {
  if (!(depth > 0.0) || !(velocity > 0.0)) throw ParameterError("press depth and velocity must be positive");
  PressTrajectory t;
  t.profile = "constant-velocity";
  const double step = velocity / 1000.0;
  double now = 0.0;
  auto push = [&](double d) { t.samples.push_back({now++, d}); };
  for (std::size_t i = 0; i < rest; ++i) push(0.0);
  for (std::size_t j = 1;; ++j) {
    const double d = std::min(depth, step * static_cast<double>(j));
    push(d);
    if (d >= depth) break;
  }
  for (std::size_t i = 0; i < hold; ++i) push(depth);
  if (with_release) {
    for (std::size_t j = 1;; ++j) {
      const double d = std::max(0.0, depth - step * static_cast<double>(j));
      push(d);
      if (d <= 0.0) break;
    }
    for (std::size_t i = 0; i < rest; ++i) push(0.0);
  }
  return t;
}

PressTrajectory minimum_jerk_press(double depth, double duration_ms, std::size_t rest, std::size_t hold) {
  if (!(depth > 0.0) || !(duration_ms >= 1.0)) throw ParameterError("press depth and duration must be positive");
  PressTrajectory t;
  t.profile = "minimum-jerk";
  double now = 0.0;
  for (std::size_t i = 0; i < rest; ++i) t.samples.push_back({now++, 0.0});
  const auto steps = static_cast<std::size_t>(std::ceil(duration_ms));
  for (std::size_t j = 1; j <= steps; ++j) {
    const double s = std::min(1.0, static_cast<double>(j) / duration_ms);
    t.samples.push_back({now++, depth * s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)});
  }
  for (std::size_t i = 0; i < hold; ++i) t.samples.push_back({now++, depth});
  return t;
}

json trajectory_to_json(const PressTrajectory& t) {
  json samples = json::array();
  for (const auto& s : t.samples) samples.push_back({s.t_ms, s.displacement_mm});
  return {{"profile", t.profile}, {"samples", samples}};
}

PressTrajectory trajectory_from_json(const json& j) {
  PressTrajectory t;
  try {
    t.profile = j.value("profile", std::string("recorded"));
    for (const auto& s : j.at("samples")) t.samples.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
  } catch (const json::exception& e) {
    throw ParseError(std::string("trajectory: ") + e.what());
  }
  validate_trajectory(t);
  return t;
}

void validate_sim_config(const SimConfig& c) {
  if (c.ma_window < 1) throw ValidationError("moving-average window must be at least 1");
  if (!(c.travel_range_mm > 0.0 && c.travel_range_mm <= kMechanicalTravelLimitMm)) {
    throw ValidationError("travel range must lie in (0, 6.2] mm");
  }
  if (!(c.activation_point_mm > 0.0 && c.activation_point_mm < c.travel_range_mm)) {
    throw ValidationError("activation point must lie strictly inside the travel range");
  }
  if (!(c.velocity_window_hi_mm > c.velocity_window_lo_mm)) throw ValidationError("empty velocity window");
}

SimConfig sim_config_for(const ActuationTable& table) {
  SimConfig c;
  c.travel_range_mm = table.travel_range_mm;
  c.activation_point_mm = table.activation_point_mm > 0.0 ? table.activation_point_mm : 0.5 * table.travel_range_mm;
  if (table.vibration) {
    c.vibration_onset_mm = table.vibration->onset_mm;
    c.vibration_template = WaveTemplate{table.vibration->template_id, table.vibration->frequency_hz,
                                        table.vibration->duration_ms, kMaxDriveVolts, 0.0};
  }
  return c;
}

MovingAverage::MovingAverage(std::size_t window) : window_(window) {
  if (window_ < 1) throw ParameterError("moving-average window must be at least 1");
}

double MovingAverage::push(double x) {
  buffer_.push_back(x);
  if (buffer_.size() > window_) buffer_.pop_front();
  double sum = 0.0;
  for (double v : buffer_) sum += v;
  return sum / static_cast<double>(buffer_.size());
}

std::vector<double> moving_average(std::span<const double> stream, std::size_t window) {
  MovingAverage f(window);
  std::vector<double> out;
  out.reserve(stream.size());
  for (double x : stream) out.push_back(f.push(x));
  return out;
}

double least_squares_slope(std::span<const std::pair<double, double>> s) {
  if (s.size() < 2) throw ParameterError("slope needs at least two samples");
  double mt = 0.0, md = 0.0;
  for (const auto& [t, d] : s) {
    mt += t;
    md += d;
  }
  mt /= static_cast<double>(s.size());
  md /= static_cast<double>(s.size());
  double num = 0.0, den = 0.0;
  for (const auto& [t, d] : s) {
    num += (t - mt) * (d - md);
    den += (t - mt) * (t - mt);
  }
  if (!(den > 0.0)) throw ParameterError("slope needs distinct timestamps");
  return num / den;
}

VelocityEstimator::VelocityEstimator(double lo, double hi, std::size_t min_samples, double rest)
    : lo_(lo), hi_(hi), rest_(rest), min_samples_(min_samples) {}

void VelocityEstimator::observe(double t, double d) {
  if (d <= rest_) {
    armed_ = true;
    window_.clear();
    estimate_.reset();
    return;
  }
  if (!armed_ || estimate_) return;
  if (d >= lo_ && d <= hi_) {
    window_.emplace_back(t, d);
  } else if (d > hi_) {
    armed_ = false;
    if (window_.size() >= min_samples_) estimate_ = 1000.0 * least_squares_slope(window_);
  }
}

const ActuationCurve& select_actuation(std::span<const ActuationCurve> curves, double v) {
  if (curves.empty()) throw ValidationError("no actuation curves to select from");
  const ActuationCurve* best = &curves.front();
  for (const auto& c : curves) {
    const double gap = std::abs(c.velocity_mm_s - v);
    const double best_gap = std::abs(best->velocity_mm_s - v);
    if (gap < best_gap || (gap == best_gap && c.velocity_mm_s < best->velocity_mm_s)) best = &c;
  }
  return *best;
}

ActuationCurve actuation_at_velocity(std::span<const ActuationCurve> curves, double v) {
  if (curves.empty()) throw ValidationError("no actuation curves to interpolate");
  if (v <= curves.front().velocity_mm_s) return {v, curves.front().u};
  if (v >= curves.back().velocity_mm_s) return {v, curves.back().u};
  std::size_t hi = 1;
  while (curves[hi].velocity_mm_s < v) ++hi;
  const auto& a = curves[hi - 1];
  const auto& b = curves[hi];
  if (v == b.velocity_mm_s) return {v, b.u};
  const double w = (v - a.velocity_mm_s) / (b.velocity_mm_s - a.velocity_mm_s);
  ActuationCurve out{v, std::vector<double>(a.u.size())};
  for (std::size_t i = 0; i < a.u.size(); ++i) out.u[i] = (1.0 - w) * a.u[i] + w * b.u[i];
  return out;
}

const char* to_string(RenderEvent e) {
  switch (e) {
    case RenderEvent::kActivation: return "activation";
    case RenderEvent::kVibrationStart: return "vibration_start";
    case RenderEvent::kBottomOut: return "bottom_out";
    case RenderEvent::kRelease: return "release";
    case RenderEvent::kVibrationTick: return "vibration_tick";
  }
  return "unknown";
}

json tick_to_json(const TickRecord& r) {
  json events = json::array();
  for (auto e : r.events) events.push_back(to_string(e));
  return {{"t_ms", r.t_ms},
          {"raw_mm", r.raw_disp_mm},
          {"filtered_mm", r.filtered_disp_mm},
          {"velocity_mm_s", r.est_velocity_mm_s ? json(*r.est_velocity_mm_s) : json(nullptr)},
          {"curve_velocity_mm_s", r.selected_curve_velocity_mm_s},
          {"u", r.u},
          {"force_cN", r.plant_force_cN},
          {"vibration_V", r.vibration_V},
          {"events", events}};
}

std::optional<DownstrokeProfile> downstroke_profile(std::span<const TickRecord> ticks, std::size_t bins,
                                                    double rest) {
  std::size_t start = 0;
  while (start < ticks.size() && ticks[start].filtered_disp_mm <= rest) ++start;
  if (start == ticks.size()) return std::nullopt;
  std::size_t peak = start;
  for (std::size_t i = start; i < ticks.size() && ticks[i].filtered_disp_mm > rest; ++i) {
    if (ticks[i].filtered_disp_mm > ticks[peak].filtered_disp_mm) peak = i;
  }
  std::vector<BinnedSample> samples;
  for (std::size_t i = start > 0 ? start - 1 : 0; i <= peak; ++i) {
    samples.push_back({ticks[i].filtered_disp_mm, ticks[i].plant_force_cN});
  }
  return DownstrokeProfile{grid_samples(samples, bins), bin_index(ticks[peak].filtered_disp_mm, bins)};
}

namespace {

const char* kind_name(PresetKind k) {
  switch (k) {
    case PresetKind::kFastTapping: return "fast_tapping";
    case PresetKind::kNonNewtonian: return "non_newtonian";
    case PresetKind::kMultiLevel: return "multi_level";
    case PresetKind::kVibrationTicks: return "vibration_ticks";
    case PresetKind::kCooldownReturn: return "cooldown_return";
  }
  return "unknown";
}

}  // namespace

Preset preset_from_json(const json& j) {
  Preset p;
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "fast_tapping") p.kind = PresetKind::kFastTapping;
    else if (kind == "non_newtonian") p.kind = PresetKind::kNonNewtonian;
    else if (kind == "multi_level") p.kind = PresetKind::kMultiLevel;
    else if (kind == "vibration_ticks") p.kind = PresetKind::kVibrationTicks;
    else if (kind == "cooldown_return") p.kind = PresetKind::kCooldownReturn;
    else throw ValidationError("unknown preset kind '" + kind + "'");
    p.name = j.value("name", kind);
    p.drop_ms = j.value("drop_ms", p.drop_ms);
    p.return_ms = j.value("return_ms", p.return_ms);
    p.return_fraction = j.value("return_fraction", p.return_fraction);
    p.stiffening = j.value("stiffening", p.stiffening);
    p.reference_velocity_mm_s = j.value("reference_velocity_mm_s", p.reference_velocity_mm_s);
    p.detent_depths_mm = j.value("detent_depths_mm", p.detent_depths_mm);
    p.detent_amplitude = j.value("detent_amplitude", p.detent_amplitude);
    p.detent_width_mm = j.value("detent_width_mm", p.detent_width_mm);
    p.tick_interval_ms = j.value("tick_interval_ms", p.tick_interval_ms);
    p.cooldown_ms = j.value("cooldown_ms", p.cooldown_ms);
    p.return_scale = j.value("return_scale", p.return_scale);
  } catch (const json::exception& e) {
    throw ParseError(std::string("preset: ") + e.what());
  }
  if (p.reference_velocity_mm_s <= 0.0 || p.detent_width_mm <= 0.0 || p.tick_interval_ms <= 0.0) {
    throw ValidationError("preset: reference velocity, detent width and tick interval must be positive");
  }
  return p;
}

json preset_to_json(const Preset& p) {
  return {{"kind", kind_name(p.kind)},
          {"name", p.name},
          {"drop_ms", p.drop_ms},
          {"return_ms", p.return_ms},
          {"return_fraction", p.return_fraction},
          {"stiffening", p.stiffening},
          {"reference_velocity_mm_s", p.reference_velocity_mm_s},
          {"detent_depths_mm", p.detent_depths_mm},
          {"detent_amplitude", p.detent_amplitude},
          {"detent_width_mm", p.detent_width_mm},
          {"tick_interval_ms", p.tick_interval_ms},
          {"cooldown_ms", p.cooldown_ms},
          {"return_scale", p.return_scale}};
}

RenderEngine::RenderEngine(ActuationTable table, SimConfig config, VirtualPlant plant, std::vector<Preset> presets)
    : table_(std::move(table)),
      config_(std::move(config)),
      plant_(std::move(plant)),
      presets_(std::move(presets)),
      bins_(0),
      u_limit_(plant_.actuation_limit()),
      filter_(config_.ma_window),
      velocity_(config_.velocity_window_lo_mm, config_.velocity_window_hi_mm, config_.min_velocity_samples,
                config_.rest_threshold_mm) {
  validate_sim_config(config_);
  validate_actuation(table_);
  if (std::abs(table_.travel_range_mm - config_.travel_range_mm) > 1e-9) {
    throw ValidationError("travel range of the actuation table does not match the simulation config");
  }
  bins_ = bin_count(config_.travel_range_mm);
}

double RenderEngine::apply_presets(double u, double t, double filtered, double sensed,
                                   std::vector<RenderEvent>& events) {
  for (const auto& p : presets_) {
    switch (p.kind) {
      case PresetKind::kFastTapping:
        if (last_activation_t_) {
          const double since = t - *last_activation_t_;
          if (since < p.drop_ms) {
            u = 0.0;
          } else if (since < p.drop_ms + p.return_ms) {
            u = p.return_fraction * u_limit_;
          }
        }
        break;
      case PresetKind::kNonNewtonian:
        if (const auto v = velocity_.estimate()) {
          u *= 1.0 + p.stiffening * std::max(0.0, *v - p.reference_velocity_mm_s) / p.reference_velocity_mm_s;
        }
        break;
      case PresetKind::kMultiLevel:
        for (double depth : p.detent_depths_mm) {
          const double z = (filtered - depth) / p.detent_width_mm;
          u += p.detent_amplitude * std::exp(-0.5 * z * z);
        }
        break;
      case PresetKind::kVibrationTicks:
        if (sensed >= config_.travel_range_mm - 1e-9) {
          if (!last_tick_t_ || t - *last_tick_t_ >= p.tick_interval_ms) {
            events.push_back(RenderEvent::kVibrationTick);
            last_tick_t_ = t;
          }
        } else {
          last_tick_t_.reset();
        }
        break;
      case PresetKind::kCooldownReturn:
        if (last_activation_t_ && t - *last_activation_t_ < p.cooldown_ms) u *= p.return_scale;
        break;
    }
  }
  return u;
}

TickRecord RenderEngine::step(const TrajectorySample& sample) {
  const double t = sample.t_ms;
  const double travel = config_.travel_range_mm;
  const double sensed = std::clamp(sample.displacement_mm, 0.0, travel);
  velocity_.observe(t, sensed);
  const double filtered = std::min(filter_.push(sensed), travel);

  TickRecord rec;
  rec.t_ms = t;
  rec.raw_disp_mm = sample.displacement_mm;
  rec.filtered_disp_mm = filtered;

  if (!in_press_ && filtered > config_.rest_threshold_mm) {
    in_press_ = true;
    activated_ = false;
    vibration_started_ = false;
  }
  if (in_press_) {
    const double ap = config_.activation_point_mm;
    if (!activated_ && prev_filtered_ < ap && filtered >= ap) {
      activated_ = true;
      bool suppressed = false;
      for (const auto& p : presets_) {
        if (p.kind == PresetKind::kCooldownReturn && last_activation_t_ && t - *last_activation_t_ < p.cooldown_ms) {
          suppressed = true;
        }
      }
      if (!suppressed) {
        rec.events.push_back(RenderEvent::kActivation);
        last_activation_t_ = t;
      }
    }
    if (config_.vibration_onset_mm && !vibration_started_ &&
        filtered >= *config_.vibration_onset_mm - config_.vibration_pretrigger_mm) {
      vibration_started_ = true;
      rec.events.push_back(RenderEvent::kVibrationStart);
      vibration_emit_t_ = t + config_.vibration_latency_ms;
    }
  }
  if (!bottomed_ && sensed >= travel - 1e-9) {
    bottomed_ = true;
    rec.events.push_back(RenderEvent::kBottomOut);
  }
  if (in_press_ && filtered <= config_.rest_threshold_mm) {
    in_press_ = false;
    bottomed_ = false;
    rec.events.push_back(RenderEvent::kRelease);
  }

  const auto estimate = velocity_.estimate();
  const ActuationCurve& curve = estimate ? select_actuation(table_.curves, *estimate) : table_.curves.front();
  rec.est_velocity_mm_s = estimate;
  rec.selected_curve_velocity_mm_s = curve.velocity_mm_s;

  double u = curve.u[bin_index(filtered, bins_)];
  u = apply_presets(u, t, filtered, sensed, rec.events);
  u = std::clamp(u, 0.0, u_limit_);
  rec.u = u;

  const double key_velocity = prev_sensed_ ? (sensed - *prev_sensed_) * 1000.0 / config_.tick_ms : 0.0;
  const auto out = plant_.respond(u, key_velocity, lag_state_, config_.tick_ms);
  lag_state_ = out.lagged;
  rec.plant_force_cN = out.measured;

  if (vibration_emit_t_ && config_.vibration_template && t >= *vibration_emit_t_) {
    rec.vibration_V = config_.vibration_template->envelope(t - *vibration_emit_t_);
  }

  prev_sensed_ = sensed;
  prev_filtered_ = filtered;
  return rec;
}

RenderTrace run_press(const ActuationTable& table, const PressTrajectory& trajectory, const SimConfig& config,
                      const VirtualPlant& plant, const FdvvModel* target, const std::vector<Preset>& presets) {
  validate_trajectory(trajectory);
  if (target && std::abs(target->travel_range_mm - config.travel_range_mm) > 1e-9) {
    throw ValidationError("travel range of the target model does not match the simulation config");
  }
  RenderEngine engine(table, config, plant, presets);
  RenderTrace trace;
  trace.ticks.reserve(trajectory.samples.size());
  for (const auto& s : trajectory.samples) trace.ticks.push_back(engine.step(s));

  if (target && !trace.ticks.empty()) {
    const auto bins = bin_count(config.travel_range_mm);
    if (const auto profile = downstroke_profile(trace.ticks, bins, config.rest_threshold_mm)) {
      std::optional<double> v;
      for (const auto& r : trace.ticks) {
        if (r.est_velocity_mm_s) {
          v = r.est_velocity_mm_s;
          break;
        }
      }
      PressSummary s;
      s.target_velocity_mm_s = v.value_or(target->min_velocity());
      std::vector<double> errors;
      for (std::size_t b = 0; b <= profile->last_bin; ++b) {
        const double d = std::min(bin_center(b), config.travel_range_mm);
        errors.push_back(std::abs(target->force_at(d, s.target_velocity_mm_s) - profile->force.values[b]));
      }
      double sum = 0.0, sq = 0.0;
      for (double e : errors) {
        sum += e;
        s.max_abs_error_cN = std::max(s.max_abs_error_cN, e);
      }
      s.bins_compared = errors.size();
      s.mean_abs_error_cN = sum / static_cast<double>(errors.size());
      for (double e : errors) sq += (e - s.mean_abs_error_cN) * (e - s.mean_abs_error_cN);
      s.sd_abs_error_cN = errors.size() > 1 ? std::sqrt(sq / static_cast<double>(errors.size() - 1)) : 0.0;
      trace.summary = s;
    }
  }
  return trace;
}

}  // namespace fdvv
