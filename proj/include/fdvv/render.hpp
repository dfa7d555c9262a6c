#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fdvv/actuation.hpp"
#include "fdvv/grid.hpp"
#include "fdvv/model.hpp"
#include "fdvv/plant.hpp"
#include "fdvv/vibration.hpp"
#include "json.hpp"

namespace fdvv {

inline constexpr double kMechanicalTravelLimitMm = 6.2;

struct TrajectorySample {
  double t_ms;
  double displacement_mm;
};

// Intended keycap depth of the (simulated) finger, one sample per 1 ms tick.
struct PressTrajectory {
  std::string profile = "recorded";  // constant-velocity | minimum-jerk | probe | recorded
  std::vector<TrajectorySample> samples;
};

void validate_trajectory(const PressTrajectory& trajectory);

// Rest, constant-velocity descent to `depth_mm`, hold, symmetric ascent, rest.
PressTrajectory constant_velocity_press(double depth_mm, double velocity_mm_s, std::size_t rest_ticks = 30,
                                        std::size_t hold_ticks = 60, bool with_release = true);
// Minimum-jerk descent over `duration_ms` (peak speed 1.875 * depth / duration), then hold.
PressTrajectory minimum_jerk_press(double depth_mm, double duration_ms, std::size_t rest_ticks = 30,
                                   std::size_t hold_ticks = 60);

nlohmann::json trajectory_to_json(const PressTrajectory& t);
PressTrajectory trajectory_from_json(const nlohmann::json& j);

struct SimConfig {
  double tick_ms = 1.0;
  std::size_t ma_window = 25;
  double velocity_window_lo_mm = 0.5;
  double velocity_window_hi_mm = 1.0;
  std::size_t min_velocity_samples = 3;
  double vibration_pretrigger_mm = 0.3;
  double vibration_latency_ms = 7.0;
  double rest_threshold_mm = 0.05;
  double travel_range_mm = 4.0;
  double activation_point_mm = 2.0;
  std::optional<double> vibration_onset_mm;
  std::optional<WaveTemplate> vibration_template;
};

void validate_sim_config(const SimConfig& config);
SimConfig sim_config_for(const ActuationTable& table);

class MovingAverage {
 public:
  explicit MovingAverage(std::size_t window);
  // Mean of the last min(window, seen) samples.
  double push(double x);
  void reset() { buffer_.clear(); }

 private:
  std::size_t window_;
  std::deque<double> buffer_;
};

std::vector<double> moving_average(std::span<const double> stream, std::size_t window);

double least_squares_slope(std::span<const std::pair<double, double>> samples);

// Collects sensed (t, d) samples inside the displacement window during the descent
// and resolves once the keycap leaves the window at the far end with enough samples.
// Resets whenever the keycap returns to rest.
class VelocityEstimator {
 public:
  VelocityEstimator(double lo_mm, double hi_mm, std::size_t min_samples, double rest_threshold_mm);

  void observe(double t_ms, double displacement_mm);
  std::optional<double> estimate() const { return estimate_; }  // mm/s
  const std::vector<std::pair<double, double>>& window_samples() const { return window_; }

 private:
  double lo_, hi_, rest_;
  std::size_t min_samples_;
  bool armed_ = true;
  std::vector<std::pair<double, double>> window_;
  std::optional<double> estimate_;
};

// Nearest velocity; ties go to the lower velocity. Throws on an empty set.
const ActuationCurve& select_actuation(std::span<const ActuationCurve> curves, double velocity_mm_s);

// Per-bin linear interpolation in velocity, clamped to the outermost curves.
ActuationCurve actuation_at_velocity(std::span<const ActuationCurve> curves, double velocity_mm_s);

enum class RenderEvent { kActivation, kVibrationStart, kBottomOut, kRelease, kVibrationTick };
const char* to_string(RenderEvent e);

struct TickRecord {
  double t_ms = 0.0;
  double raw_disp_mm = 0.0;
  double filtered_disp_mm = 0.0;
  std::optional<double> est_velocity_mm_s;
  double selected_curve_velocity_mm_s = 0.0;
  double u = 0.0;
  double plant_force_cN = 0.0;
  double vibration_V = 0.0;  // envelope of the vibration channel output
  std::vector<RenderEvent> events;

  friend bool operator==(const TickRecord&, const TickRecord&) = default;
};

nlohmann::json tick_to_json(const TickRecord& r);

struct PressSummary {
  double target_velocity_mm_s = 0.0;
  std::size_t bins_compared = 0;
  double mean_abs_error_cN = 0.0;
  double sd_abs_error_cN = 0.0;
  double max_abs_error_cN = 0.0;
};

struct RenderTrace {
  std::vector<TickRecord> ticks;
  std::optional<PressSummary> summary;
};

// Downstroke of the first press gridded by the sensed (filtered) displacement:
// per-bin mean of the plant force from press start until the filtered displacement
// first peaks. Bins beyond the deepest reached bin are absent from `last_bin`.
struct DownstrokeProfile {
  GridResult force;
  std::size_t last_bin = 0;
};
std::optional<DownstrokeProfile> downstroke_profile(std::span<const TickRecord> ticks, std::size_t bins,
                                                    double rest_threshold_mm);

enum class PresetKind { kFastTapping, kNonNewtonian, kMultiLevel, kVibrationTicks, kCooldownReturn };

// Behaviour that cannot be expressed as an FDVV model; applied as hooks around each
// tick. Presets are loaded from JSON config files.
struct Preset {
  PresetKind kind = PresetKind::kMultiLevel;
  std::string name;
  // fast tapping: actuation released for drop_ms after activation, then pushed back
  double drop_ms = 40.0;
  double return_ms = 60.0;
  double return_fraction = 0.5;  // of the actuation limit
  // non-Newtonian stiffening: u *= 1 + stiffening * max(0, v - reference) / reference
  double stiffening = 0.6;
  double reference_velocity_mm_s = 50.0;
  // multi-level detents
  std::vector<double> detent_depths_mm;
  double detent_amplitude = 30.0;
  double detent_width_mm = 0.08;
  // vibration ticks while bottomed out
  double tick_interval_ms = 100.0;
  // cooldown: activations suppressed and return force scaled after each activation
  double cooldown_ms = 500.0;
  double return_scale = 0.2;
};

Preset preset_from_json(const nlohmann::json& j);
nlohmann::json preset_to_json(const Preset& p);

class RenderEngine {
 public:
  RenderEngine(ActuationTable table, SimConfig config, VirtualPlant plant, std::vector<Preset> presets = {});

  TickRecord step(const TrajectorySample& sample);

  const VelocityEstimator& velocity_estimator() const { return velocity_; }
  const SimConfig& config() const { return config_; }

 private:
  double apply_presets(double u, double t, double filtered, double sensed, std::vector<RenderEvent>& events);

  ActuationTable table_;
  SimConfig config_;
  VirtualPlant plant_;
  std::vector<Preset> presets_;
  std::size_t bins_;
  double u_limit_;

  MovingAverage filter_;
  VelocityEstimator velocity_;
  double lag_state_ = 0.0;
  std::optional<double> prev_sensed_;
  double prev_filtered_ = 0.0;
  bool in_press_ = false;
  bool activated_ = false;
  bool vibration_started_ = false;
  bool bottomed_ = false;
  std::optional<double> vibration_emit_t_;
  std::optional<double> last_activation_t_;
  std::optional<double> last_tick_t_;
};

// Whole-press driver. When `target` is given the summary compares the rendered
// downstroke with the target curve at the estimated velocity.
RenderTrace run_press(const ActuationTable& table, const PressTrajectory& trajectory, const SimConfig& config,
                      const VirtualPlant& plant, const FdvvModel* target = nullptr,
                      const std::vector<Preset>& presets = {});

}  // namespace fdvv
