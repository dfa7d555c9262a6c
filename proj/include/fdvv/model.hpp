#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fdvv/bspline.hpp"
#include "fdvv/capture.hpp"
#include "fdvv/vibration.hpp"
#include "json.hpp"

namespace fdvv {

inline constexpr double kDefaultComplexityPenalty = 2.5;

struct FitReport {
  std::size_t n = 0;             // observations (grid bins)
  std::size_t k = 0;             // control points
  double log_likelihood = 0.0;   // Gaussian residual model
  double rmse = 0.0;             // cN
  double penalty = kDefaultComplexityPenalty;
  double bic_star = 0.0;
};

// ln(n) k P - 2 ln L.
double bic_star(std::size_t n, std::size_t k, double log_likelihood, double penalty = kDefaultComplexityPenalty);

// Maximised Gaussian log-likelihood for a least-squares fit. The residual variance
// is floored at 1e-12 * mean(y^2) so exact fits compare on the penalty alone
// instead of on round-off.
double gaussian_log_likelihood(double rss, std::size_t n, double mean_square_signal);

// Parameter positions of the bin centres on [0, 1].
std::vector<double> grid_parameters(std::size_t bins, double travel_range_mm);

struct FitResult {
  BSplineCurve curve;
  FitReport report;
};

// Least-squares fit of the control forces on fixed clamped-uniform knots; control
// displacements sit on the Greville abscissae scaled to [0, travel_range].
// Degree is min(3, k - 1). Throws FitError on a rank-deficient system.
FitResult fit_curve(const PressSegment& segment, std::size_t k, double penalty = kDefaultComplexityPenalty);

struct OrderSelection {
  std::size_t best_k = 0;
  std::vector<FitReport> reports;  // one per feasible k, ascending
};

namespace serial {
OrderSelection select_order(const PressSegment& segment, std::size_t k_min, std::size_t k_max,
                            double penalty = kDefaultComplexityPenalty);
}
namespace parallel {
OrderSelection select_order(const PressSegment& segment, std::size_t k_min, std::size_t k_max,
                            double penalty = kDefaultComplexityPenalty);
}
inline OrderSelection select_order(const PressSegment& segment, std::size_t k_min, std::size_t k_max,
                                   double penalty = kDefaultComplexityPenalty) {
  return parallel::select_order(segment, k_min, k_max, penalty);
}

struct VelocityCurve {
  double velocity_mm_s;
  BSplineCurve curve;

  friend bool operator==(const VelocityCurve&, const VelocityCurve&) = default;
};

struct FdvvModel {
  std::string button_id;
  double travel_range_mm = 0.0;
  double activation_point_mm = 0.0;
  std::vector<VelocityCurve> press_curves;  // ascending velocity
  std::optional<std::vector<VelocityCurve>> release_curves;
  VibrationDescriptor vibration;

  friend bool operator==(const FdvvModel&, const FdvvModel&) = default;

  // Target force at (displacement, velocity): per-displacement linear interpolation
  // between the neighbouring velocity curves, clamped outside the measured range.
  double force_at(double displacement_mm, double velocity_mm_s) const;
  double min_velocity() const { return press_curves.front().velocity_mm_s; }
  double max_velocity() const { return press_curves.back().velocity_mm_s; }
};

// Throws ValidationError describing the first violated invariant.
void validate_model(const FdvvModel& model);

struct ModelAnnotations {
  std::string button_id;
  double activation_point_mm = 0.0;
  VibrationDescriptor vibration;
  std::size_t k_min = 4;
  std::size_t k_max = 30;
  double penalty = kDefaultComplexityPenalty;
};

struct BuiltModel {
  FdvvModel model;
  std::map<double, OrderSelection> selections;  // per velocity
};

BuiltModel build_model(const std::map<double, PressSegment>& per_velocity, const ModelAnnotations& annotations);

nlohmann::json model_to_json(const FdvvModel& model);
FdvvModel model_from_json(const nlohmann::json& j);  // validates
nlohmann::json fit_report_to_json(const FitReport& r);

// Single-curve model from explicit control points (editor / preset path).
FdvvModel single_curve_model(std::string button_id, double travel_range_mm, double activation_point_mm,
                             std::vector<ControlPoint> points, VibrationDescriptor vibration,
                             double velocity_mm_s = 100.0);

}  // namespace fdvv
