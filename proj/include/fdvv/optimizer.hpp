#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fdvv/actuation.hpp"
#include "json.hpp"

namespace fdvv {

inline constexpr std::size_t kDesignDims = 8;
inline constexpr double kEasyDifficulty = 100.0;       // px/s
inline constexpr double kDifficultDifficulty = 150.0;  // px/s

// Three control points of the actuation curve plus activation and vibration points.
struct ButtonParams {
  double x1 = 0.5, x2 = 2.0, x3 = 4.6;       // mm
  double y1 = 100.0, y2 = 100.0, y3 = 100.0;  // actuation units
  double p_a = 3.0, p_v = 3.0;                // mm

  std::array<double, kDesignDims> to_array() const { return {x1, x2, x3, y1, y2, y3, p_a, p_v}; }
  static ButtonParams from_array(const std::array<double, kDesignDims>& a);
  friend bool operator==(const ButtonParams&, const ButtonParams&) = default;
};

struct ParamRange {
  double lo, hi;
  bool open_hi;  // half-open [lo, hi)
};
const std::array<ParamRange, kDesignDims>& param_ranges();

void validate_params(const ButtonParams& p);
// z in [0, 1]^8 -> params; z = 1 on a half-open range maps just below the bound.
ButtonParams params_from_unit(std::span<const double> z);
std::vector<double> params_to_unit(const ButtonParams& p);

nlohmann::json params_to_json(const ButtonParams& p);
ButtonParams params_from_json(const nlohmann::json& j);

inline constexpr double kDesignTravelMm = 6.2;

// Quadratic spline through the three control points, held flat outside [x1, x3],
// sampled on the 0.05 mm grid over a 6.2 mm travel. Single velocity.
ActuationTable params_to_actuation(const ButtonParams& p);

struct SimulatedUser {
  double base_asynchrony_ms = 100.0;
  double haptic_gain_ms = 40.0;
  double motor_noise_sigma_ms = 5.0;
  double difficulty_slope = 0.2;  // ms per px/s above the easy condition
  double w_slope = 0.6;
  double w_proximity = 0.4;
  double slope_scale = 150.0;      // actuation units per mm giving tanh(1)
  double slope_window_mm = 0.5;    // half-width around p_a
  double proximity_scale_mm = 0.5;
  std::uint64_t seed = 1;
};

// w_slope * tanh(max |du/dd| within p_a +- window / scale) + w_proximity * exp(-|p_v - p_a| / scale).
double salience(const ButtonParams& p, const SimulatedUser& user);

// Per-trial noise is drawn from a generator seeded by (user seed, trial index).
double trial_asynchrony(const ButtonParams& p, const SimulatedUser& user, double difficulty_px_s,
                        std::size_t trial);
double evaluate_design(const ButtonParams& p, const SimulatedUser& user, double difficulty_px_s,
                       std::size_t trials);

struct GpHyper {
  double lengthscale = 0.3;
  double signal_var = 1.0;
  double noise_var = 1e-4;
};

// Zero-mean GP with a squared-exponential kernel on standardised targets.
class GaussianProcess {
 public:
  // Throws FitError when the kernel matrix is not positive definite.
  void fit(std::vector<std::vector<double>> x, std::span<const double> y, const GpHyper& hyper);
  // Hyperparameters by maximum marginal likelihood over a fixed grid.
  void fit_auto(std::vector<std::vector<double>> x, std::span<const double> y);

  double log_marginal_likelihood() const { return lml_; }
  const GpHyper& hyper() const { return hyper_; }
  double output_scale() const { return scale_; }
  // Posterior mean and variance in the original units.
  std::pair<double, double> predict(std::span<const double> z) const;

 private:
  std::vector<std::vector<double>> x_;
  std::vector<double> alpha_;
  std::vector<double> chol_;  // lower triangular, row-major n x n
  std::size_t n_ = 0;
  double mean_ = 0.0, scale_ = 1.0;
  double lml_ = 0.0;
  GpHyper hyper_;
};

// Expected improvement for minimisation.
double expected_improvement(double mean, double variance, double best, double xi);

// Halton sequence (first `dims` primes) with a seed-derived Cranley-Patterson shift.
std::vector<std::vector<double>> quasi_random_candidates(std::size_t count, std::size_t dims, std::uint64_t seed);

struct BoOptions {
  std::size_t candidates = 4096;
  double xi = 0.01;
  std::string kernel = "squared_exponential";
  std::string acquisition = "expected_improvement";
};

struct BoProposal {
  std::vector<double> z;
  bool fallback = false;
  std::string warning;
};

namespace serial {
std::vector<double> acquisition(const GaussianProcess& gp, const std::vector<std::vector<double>>& candidates,
                                double best, double xi);
}
namespace parallel {
std::vector<double> acquisition(const GaussianProcess& gp, const std::vector<std::vector<double>>& candidates,
                                double best, double xi);
}

// Next point in [0, 1]^dims given observations (minimisation). No observations:
// the midpoint; one observation: the first quasi-random candidate.
BoProposal bo_step(const std::vector<std::vector<double>>& observed_z, std::span<const double> observed_y,
                   std::size_t dims, const BoOptions& options, std::uint64_t seed);

struct BoTrace {
  std::vector<std::vector<double>> z;
  std::vector<double> y;
  std::size_t best_index = 0;
};

// Generic loop over [0, 1]^dims.
BoTrace minimize_unit_box(const std::function<double(std::span<const double>)>& objective, std::size_t dims,
                          std::size_t budget, std::uint64_t seed, const BoOptions& options = {});

struct OptimizeConfig {
  std::size_t budget = 30;
  std::size_t trials_per_eval = 20;
  double difficulty_px_s = kEasyDifficulty;
  SimulatedUser user;
  BoOptions bo;
  std::uint64_t seed = 1;
};

struct HistoryEntry {
  std::size_t iteration = 0;
  ButtonParams params;
  double mean_asynchrony_ms = 0.0;
  double incumbent_ms = 0.0;
  std::uint64_t eval_seed = 0;
  bool fallback = false;
};

struct OptimizeResult {
  ButtonParams best;
  double best_mean_asynchrony_ms = 0.0;
  std::vector<HistoryEntry> history;
};

// Seed of the simulated user for one evaluation of a run.
std::uint64_t evaluation_seed(std::uint64_t run_seed, std::size_t iteration);

OptimizeResult optimize(const OptimizeConfig& config);

// Uniform random design (the baseline condition).
ButtonParams random_params(std::uint64_t seed);

nlohmann::json optimize_config_to_json(const OptimizeConfig& c);
OptimizeConfig optimize_config_from_json(const nlohmann::json& j);
nlohmann::json history_entry_to_json(const HistoryEntry& e);

}  // namespace fdvv
