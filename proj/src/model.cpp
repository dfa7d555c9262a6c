#include "fdvv/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "fdvv/error.hpp"
#include "fdvv/grid.hpp"

namespace fdvv {

using nlohmann::json;

double bic_star(std::size_t n, std::size_t k, double log_likelihood, double penalty) {
  if (n < 1 || k < 1) throw ParameterError("bic_star requires n >= 1 and k >= 1");
  return std::log(static_cast<double>(n)) * static_cast<double>(k) * penalty - 2.0 * log_likelihood;
}

double gaussian_log_likelihood(double rss, std::size_t n, double mean_square_signal) {
  const double nn = static_cast<double>(n);
  const double variance = std::max({rss / nn, 1e-12 * mean_square_signal, 1e-300});
  return -0.5 * nn * (std::log(2.0 * std::numbers::pi) + std::log(variance) + 1.0);
}

std::vector<double> grid_parameters(std::size_t bins, double travel_range_mm) {
  std::vector<double> u(bins);
  for (std::size_t j = 0; j < bins; ++j) u[j] = std::clamp(bin_center(j) / travel_range_mm, 0.0, 1.0);
  return u;
}

FitResult fit_curve(const PressSegment& segment, std::size_t k, double penalty) {
  const std::size_t n = segment.bins();
  if (k < 2) throw ParameterError("fit_curve needs at least two control points");
  if (n < k) throw FitError("segment has fewer bins than control points");
  if (!(segment.travel_range_mm > 0.0)) throw ParameterError("segment travel range must be positive");
  const int degree = static_cast<int>(std::min<std::size_t>(3, k - 1));

  const auto knots = clamped_uniform_knots(k, degree);
  const auto params = grid_parameters(n, segment.travel_range_mm);
  Eigen::MatrixXd A(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  std::vector<double> row(k);
  double mean_sq = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    basis_row(knots, degree, params[j], row);
    for (std::size_t i = 0; i < k; ++i) A(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = row[i];
    y(static_cast<Eigen::Index>(j)) = segment.force_cN[j];
    mean_sq += segment.force_cN[j] * segment.force_cN[j];
  }
  mean_sq /= static_cast<double>(n);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(k)) {
    throw FitError("rank-deficient B-spline system for k = " + std::to_string(k));
  }
  const Eigen::VectorXd c = qr.solve(y);
  const double rss = (A * c - y).squaredNorm();

  const auto greville = greville_abscissae(knots, degree);
  std::vector<ControlPoint> points(k);
  for (std::size_t i = 0; i < k; ++i) {
    points[i] = {greville[i] * segment.travel_range_mm, c(static_cast<Eigen::Index>(i))};
  }
  points.front().displacement_mm = 0.0;
  points.back().displacement_mm = segment.travel_range_mm;

  FitReport report;
  report.n = n;
  report.k = k;
  report.penalty = penalty;
  report.log_likelihood = gaussian_log_likelihood(rss, n, mean_sq);
  report.rmse = std::sqrt(rss / static_cast<double>(n));
  report.bic_star = bic_star(n, k, report.log_likelihood, penalty);
  return {BSplineCurve(std::move(points), degree), report};
}

namespace {

std::optional<FitReport> try_fit(const PressSegment& segment, std::size_t k, double penalty) {
  try {
    return fit_curve(segment, k, penalty).report;
  } catch (const Error&) {
    return std::nullopt;
  }
}

OrderSelection reduce(std::vector<std::optional<FitReport>>& fits) {
  OrderSelection out;
  for (auto& f : fits) {
    if (f) out.reports.push_back(*f);
  }
  if (out.reports.empty()) throw FitError("no feasible control-point count in the requested range");
  // Ascending k with a strict comparison: ties stay on the smaller k.
  const FitReport* best = &out.reports.front();
  for (const auto& r : out.reports) {
    if (r.bic_star < best->bic_star) best = &r;
  }
  out.best_k = best->k;
  return out;
}

void check_range(std::size_t k_min, std::size_t k_max) {
  if (k_min < 2 || k_max < k_min) throw ParameterError("invalid control-point range");
}

}  // namespace

namespace serial {
OrderSelection select_order(const PressSegment& segment, std::size_t k_min, std::size_t k_max, double penalty) {
  check_range(k_min, k_max);
  std::vector<std::optional<FitReport>> fits(k_max - k_min + 1);
  for (std::size_t i = 0; i < fits.size(); ++i) fits[i] = try_fit(segment, k_min + i, penalty);
  return reduce(fits);
}
}  // namespace serial

namespace parallel {
OrderSelection select_order(const PressSegment& segment, std::size_t k_min, std::size_t k_max, double penalty) {
  check_range(k_min, k_max);
  std::vector<std::optional<FitReport>> fits(k_max - k_min + 1);
  const auto count = static_cast<std::ptrdiff_t>(fits.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    fits[static_cast<std::size_t>(i)] = try_fit(segment, k_min + static_cast<std::size_t>(i), penalty);
  }
  return reduce(fits);
}
}  // namespace parallel

double FdvvModel::force_at(double d, double v) const {
  if (press_curves.empty()) throw ValidationError("model has no press curves");
  if (press_curves.size() == 1 || v <= press_curves.front().velocity_mm_s) return press_curves.front().curve(d);
  if (v >= press_curves.back().velocity_mm_s) return press_curves.back().curve(d);
  std::size_t hi = 1;
  while (press_curves[hi].velocity_mm_s < v) ++hi;
  const auto& a = press_curves[hi - 1];
  const auto& b = press_curves[hi];
  const double w = (v - a.velocity_mm_s) / (b.velocity_mm_s - a.velocity_mm_s);
  return (1.0 - w) * a.curve(d) + w * b.curve(d);
}

namespace {

void validate_curves(const std::vector<VelocityCurve>& curves, double travel, const char* field) {
  const double tol = 1e-9 * std::max(1.0, travel);
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    const std::string where = std::string(field) + "[" + std::to_string(i) + "]";
    if (!(c.velocity_mm_s > 0.0)) throw ValidationError(where + ".velocity_mm_s must be positive");
    if (i > 0 && !(c.velocity_mm_s > curves[i - 1].velocity_mm_s)) {
      throw ValidationError(std::string(field) + ": velocities must be distinct");
    }
    if (std::abs(c.curve.domain_begin()) > tol || std::abs(c.curve.domain_end() - travel) > tol) {
      throw ValidationError(where + ": control points must span [0, travel_range_mm]");
    }
  }
}

}  // namespace

void validate_model(const FdvvModel& m) {
  if (m.button_id.empty()) throw ValidationError("button_id must not be empty");
  if (!(m.travel_range_mm > 0.0)) throw ValidationError("travel_range_mm must be positive");
  if (m.travel_range_mm > 6.2) throw ValidationError("travel_range_mm exceeds the 6.2 mm mechanical limit");
  if (!(m.activation_point_mm > 0.0 && m.activation_point_mm < m.travel_range_mm)) {
    throw ValidationError("activation_point_mm must lie strictly inside the travel range");
  }
  if (m.press_curves.empty()) throw ValidationError("press_curves must contain at least one curve");
  validate_curves(m.press_curves, m.travel_range_mm, "press_curves");
  if (m.release_curves) validate_curves(*m.release_curves, m.travel_range_mm, "release_curves");
  validate_vibration(m.vibration, m.travel_range_mm);
}

BuiltModel build_model(const std::map<double, PressSegment>& per_velocity, const ModelAnnotations& a) {
  if (per_velocity.empty()) throw ValidationError("build_model needs at least one velocity");
  const double travel = per_velocity.begin()->second.travel_range_mm;
  for (const auto& [v, seg] : per_velocity) {
    if (std::abs(seg.travel_range_mm - travel) > 1e-9) {
      throw ValidationError("inconsistent travel ranges across velocities");
    }
  }
  BuiltModel out;
  out.model.button_id = a.button_id;
  out.model.travel_range_mm = travel;
  out.model.activation_point_mm = a.activation_point_mm;
  out.model.vibration = a.vibration;
  for (const auto& [v, seg] : per_velocity) {
    auto sel = select_order(seg, a.k_min, a.k_max, a.penalty);
    auto fit = fit_curve(seg, sel.best_k, a.penalty);
    out.model.press_curves.push_back({v, std::move(fit.curve)});
    out.selections.emplace(v, std::move(sel));
  }
  validate_model(out.model);
  return out;
}

namespace {

json curves_to_json(const std::vector<VelocityCurve>& curves) {
  json arr = json::array();
  for (const auto& c : curves) {
    json pts = json::array();
    for (const auto& p : c.curve.control_points()) pts.push_back({p.displacement_mm, p.force_cN});
    arr.push_back({{"velocity_mm_s", c.velocity_mm_s}, {"degree", c.curve.degree()}, {"control_points", pts}});
  }
  return arr;
}

double number(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number()) throw ParseError(where + "." + key + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ParseError(where + "." + key + ": value is not finite");
  return d;
}

std::vector<VelocityCurve> curves_from_json(const json& arr, const char* field) {
  if (!arr.is_array()) throw ParseError(std::string(field) + ": expected an array");
  std::vector<VelocityCurve> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = std::string(field) + "[" + std::to_string(i) + "]";
    const auto& c = arr[i];
    const double v = number(c, "velocity_mm_s", where);
    const int degree = c.contains("degree") ? c.at("degree").get<int>() : 3;
    if (!c.contains("control_points") || !c.at("control_points").is_array()) {
      throw ParseError(where + ": missing control_points");
    }
    std::vector<ControlPoint> pts;
    for (const auto& p : c.at("control_points")) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
        throw ParseError(where + ": control points must be [d_mm, f_cN] pairs");
      }
      pts.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    out.push_back({v, BSplineCurve(std::move(pts), degree)});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.velocity_mm_s < b.velocity_mm_s; });
  return out;
}

}  // namespace

json model_to_json(const FdvvModel& m) {
  json j;
  j["button_id"] = m.button_id;
  j["travel_range_mm"] = m.travel_range_mm;
  j["activation_point_mm"] = m.activation_point_mm;
  j["press_curves"] = curves_to_json(m.press_curves);
  if (m.release_curves) j["release_curves"] = curves_to_json(*m.release_curves);
  j["vibration"] = {{"onset_mm", m.vibration.onset_mm},
                    {"duration_ms", m.vibration.duration_ms},
                    {"frequency_hz", m.vibration.frequency_hz},
                    {"template_id", m.vibration.template_id}};
  return j;
}

FdvvModel model_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("model: top level must be an object");
  FdvvModel m;
  if (!j.contains("button_id") || !j.at("button_id").is_string()) throw ParseError("model: missing button_id");
  m.button_id = j.at("button_id").get<std::string>();
  m.travel_range_mm = number(j, "travel_range_mm", "model");
  m.activation_point_mm = number(j, "activation_point_mm", "model");
  if (!j.contains("press_curves")) throw ParseError("model: missing press_curves");
  m.press_curves = curves_from_json(j.at("press_curves"), "press_curves");
  if (j.contains("release_curves") && !j.at("release_curves").is_null()) {
    m.release_curves = curves_from_json(j.at("release_curves"), "release_curves");
  }
  if (!j.contains("vibration")) throw ParseError("model: missing vibration");
  const auto& v = j.at("vibration");
  m.vibration.onset_mm = number(v, "onset_mm", "vibration");
  m.vibration.duration_ms = number(v, "duration_ms", "vibration");
  m.vibration.frequency_hz = number(v, "frequency_hz", "vibration");
  m.vibration.template_id = v.value("template_id", std::string("default"));
  validate_model(m);
  return m;
}

json fit_report_to_json(const FitReport& r) {
  return {{"n", r.n},       {"k", r.k},           {"log_likelihood", r.log_likelihood},
          {"rmse_cN", r.rmse}, {"penalty", r.penalty}, {"bic_star", r.bic_star}};
}

FdvvModel single_curve_model(std::string button_id, double travel, double activation,
                             std::vector<ControlPoint> points, VibrationDescriptor vibration, double velocity) {
  FdvvModel m;
  m.button_id = std::move(button_id);
  m.travel_range_mm = travel;
  m.activation_point_mm = activation;
  const int degree = static_cast<int>(std::min<std::size_t>(3, points.size() - 1));
  m.press_curves.push_back({velocity, BSplineCurve(std::move(points), degree)});
  m.vibration = std::move(vibration);
  validate_model(m);
  return m;
}

}  // namespace fdvv
