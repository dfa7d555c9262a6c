#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fdvv/actuation.hpp"
#include "fdvv/model.hpp"
#include "fdvv/plant.hpp"
#include "fdvv/render.hpp"

namespace fdvv {

inline constexpr double kDefaultErrorAlpha = 0.7;
inline constexpr double kFinalSmoothingSigmaMm = 1.2;

// alpha * mean|y_d - y_k| + (1 - alpha) * max|y_d - y_k|.
double error_metric(std::span<const double> y_d, std::span<const double> y_k, double alpha = kDefaultErrorAlpha);

// Step gain as a function of the current error.
struct GammaSchedule {
  double threshold_cN = 10.0;
  double high = 0.8;  // error above threshold
  double low = 0.4;

  double operator()(double error_cN) const { return error_cN > threshold_cN ? high : low; }

  // 0.8 / gain and 0.4 / gain for a calibrated static gain estimate.
  static GammaSchedule from_gain(double gain_estimate);
  static GammaSchedule constant(double gamma) { return {0.0, gamma, gamma}; }
};

struct CompensationState {
  std::size_t iteration = 0;
  ActuationCurve current;
  std::vector<double> measured;  // y_k per bin
  std::vector<double> target;    // y_d per bin
  double error = 0.0;
  double alpha = kDefaultErrorAlpha;
  GammaSchedule gamma;
};

// u_{k+1}(p) = u_k(p) + gamma(error_k) (y_d(p) - y_k(p)), clamped to [0, u_max].
ActuationCurve update_signals(const CompensationState& state, double u_max);

struct CompensationOptions {
  std::size_t max_iters = 12;
  double tol_cN = 0.5;
  double alpha = kDefaultErrorAlpha;
  std::optional<GammaSchedule> gamma;  // default: from the calibration slope
  std::size_t divergence_window = 5;
  bool noiseless = false;
  // Optional starting curve; default is the flat calibration inverse of the mean target.
  std::optional<std::vector<double>> initial_u;
};

struct CompensationResult {
  ActuationCurve curve;  // actuation that produced the lowest error
  std::vector<double> error_trace;
  std::size_t best_iteration = 0;
  bool converged = false;
};

// Target force per bin at the given velocity.
std::vector<double> target_forces(const FdvvModel& model, double velocity_mm_s);

// The press used to measure one iteration: rest, constant-velocity descent slightly
// past the travel range (limiter contact), hold.
PressTrajectory measurement_press(double travel_range_mm, double velocity_mm_s);

// One simulated press per iteration through the render engine and the plant. Throws
// DivergenceError when the error fails to decrease in `divergence_window` consecutive
// iterations.
struct DownstrokeMeasurement {
  std::vector<double> force;       // per bin
  std::vector<std::size_t> counts;  // ticks that landed in each bin
};

// One simulated press with a single actuation curve, gridded on the downstroke.
DownstrokeMeasurement measure_press(const ActuationCurve& curve, const FdvvModel& model, const VirtualPlant& plant,
                                    const PressTrajectory& press);

// y_k for the update. Fast presses skip bins (0.1 mm per tick at 100 mm/s); a
// skipped bin takes the tracking error interpolated from its visited neighbours,
// so its actuation moves with them instead of chasing an interpolated force.
std::vector<double> tracked_forces(std::span<const double> target, const DownstrokeMeasurement& m);

CompensationResult run_compensation(const FdvvModel& model, const VirtualPlant& plant, double velocity_mm_s,
                                    const CompensationOptions& options = {});

// Per-bin mean over runs followed by Gaussian smoothing over displacement.
ActuationCurve finalize_actuation(std::span<const ActuationCurve> runs, double sigma_mm = kFinalSmoothingSigmaMm);

// target_count curves evenly spaced over [min, max] input velocity.
std::vector<ActuationCurve> interpolate_velocities(std::span<const ActuationCurve> curves, std::size_t target_count);

struct CompensateRequest {
  std::vector<double> velocities;  // empty: the model's press velocities
  std::size_t runs = 4;
  std::size_t interpolate_to = 0;  // 0 or <= velocity count: no interpolation
  CompensationOptions options;
};

struct CompensationReport {
  ActuationTable table;
  // error traces indexed [velocity][run]
  std::vector<std::vector<std::vector<double>>> traces;
};

// Run `runs` compensations per velocity, finalize each velocity and assemble the
// table. Every run uses its own plant clone reseeded from (plant seed, velocity index, run).
namespace serial {
CompensationReport compensate_model(const FdvvModel& model, const VirtualPlant& plant, const CompensateRequest& req);
}
namespace parallel {
CompensationReport compensate_model(const FdvvModel& model, const VirtualPlant& plant, const CompensateRequest& req);
}
inline CompensationReport compensate_model(const FdvvModel& model, const VirtualPlant& plant,
                                           const CompensateRequest& req) {
  return parallel::compensate_model(model, plant, req);
}

std::uint64_t run_seed(std::uint64_t base, std::size_t velocity_index, std::size_t run);

}  // namespace fdvv
