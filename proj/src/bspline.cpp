#include "fdvv/bspline.hpp"

#include <algorithm>
#include <cmath>

#include "fdvv/error.hpp"

namespace fdvv {

std::vector<double> clamped_uniform_knots(std::size_t control_points, int degree) {
  if (degree < 1) throw ParameterError("spline degree must be at least 1");
  const auto p = static_cast<std::size_t>(degree);
  if (control_points < p + 1) throw ParameterError("need at least degree+1 control points");
  const std::size_t interior = control_points - p - 1;
  std::vector<double> knots;
  knots.reserve(control_points + p + 1);
  knots.insert(knots.end(), p + 1, 0.0);
  for (std::size_t i = 1; i <= interior; ++i) {
    knots.push_back(static_cast<double>(i) / static_cast<double>(interior + 1));
  }
  knots.insert(knots.end(), p + 1, 1.0);
  return knots;
}

std::vector<double> greville_abscissae(std::span<const double> knots, int degree) {
  const auto p = static_cast<std::size_t>(degree);
  const std::size_t count = knots.size() - p - 1;
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i) {
    double s = 0.0;
    for (std::size_t j = 1; j <= p; ++j) s += knots[i + j];
    g[i] = s / static_cast<double>(p);
  }
  return g;
}

namespace {

// Index s of the knot span with knots[s] <= u < knots[s+1]; the right end maps to
// the last non-empty span.
std::size_t find_span(std::span<const double> knots, int degree, double u) {
  const auto p = static_cast<std::size_t>(degree);
  const std::size_t n = knots.size() - p - 1;  // control points
  if (u >= knots[n]) return n - 1;
  if (u <= knots[p]) return p;
  const auto it = std::upper_bound(knots.begin() + static_cast<std::ptrdiff_t>(p),
                                   knots.begin() + static_cast<std::ptrdiff_t>(n) + 1, u);
  return static_cast<std::size_t>(it - knots.begin()) - 1;
}

// de Boor's algorithm on one scalar coordinate.
double de_boor(std::span<const double> knots, int degree, std::span<const double> coeffs, double u) {
  const auto p = static_cast<std::size_t>(degree);
  const std::size_t s = find_span(knots, degree, u);
  double d[16];
  std::vector<double> heap;
  double* work = d;
  if (p + 1 > 16) {
    heap.resize(p + 1);
    work = heap.data();
  }
  for (std::size_t j = 0; j <= p; ++j) work[j] = coeffs[s - p + j];
  for (std::size_t r = 1; r <= p; ++r) {
    for (std::size_t j = p; j >= r; --j) {
      const std::size_t i = s - p + j;
      const double denom = knots[i + p + 1 - r] - knots[i];
      const double a = denom > 0.0 ? (u - knots[i]) / denom : 0.0;
      work[j] = (1.0 - a) * work[j - 1] + a * work[j];
    }
  }
  return work[p];
}

}  // namespace

void basis_row(std::span<const double> knots, int degree, double u, std::span<double> row) {
  const auto p = static_cast<std::size_t>(degree);
  const std::size_t n = knots.size() - p - 1;
  if (row.size() != n) throw ParameterError("basis row has the wrong length");
  std::fill(row.begin(), row.end(), 0.0);
  const std::size_t s = find_span(knots, degree, u);
  // Cox-de Boor triangle for the p+1 non-zero functions (NURBS Book A2.2).
  std::vector<double> N(p + 1, 0.0), left(p + 1), right(p + 1);
  N[0] = 1.0;
  for (std::size_t j = 1; j <= p; ++j) {
    left[j] = u - knots[s + 1 - j];
    right[j] = knots[s + j] - u;
    double saved = 0.0;
    for (std::size_t r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom != 0.0 ? N[r] / denom : 0.0;
      N[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    N[j] = saved;
  }
  for (std::size_t j = 0; j <= p; ++j) row[s - p + j] = N[j];
}

BSplineCurve::BSplineCurve(std::vector<ControlPoint> points, int degree)
    : points_(std::move(points)), degree_(degree) {
  if (degree_ < 1) throw ValidationError("spline degree must be at least 1");
  if (points_.size() < static_cast<std::size_t>(degree_) + 1) {
    throw ValidationError("spline needs at least degree+1 control points");
  }
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!std::isfinite(points_[i].displacement_mm) || !std::isfinite(points_[i].force_cN)) {
      throw ValidationError("control point " + std::to_string(i) + " is not finite");
    }
    if (i > 0 && points_[i].displacement_mm < points_[i - 1].displacement_mm) {
      throw ValidationError("control point displacements must be non-decreasing (index " + std::to_string(i) + ")");
    }
  }
  if (!(domain_end() > domain_begin())) throw ValidationError("spline domain is empty");
  knots_ = clamped_uniform_knots(points_.size(), degree_);
  for (const auto& cp : points_) {
    xs_.push_back(cp.displacement_mm);
    ys_.push_back(cp.force_cN);
  }

  const auto g = greville_abscissae(knots_, degree_);
  const double span = domain_end() - domain_begin();
  affine_ = true;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double expect = domain_begin() + g[i] * span;
    if (std::abs(points_[i].displacement_mm - expect) > 1e-12 * std::max(1.0, span)) {
      affine_ = false;
      break;
    }
  }
}

ControlPoint BSplineCurve::point_at_parameter(double u) const {
  return {de_boor(knots_, degree_, xs_, u), de_boor(knots_, degree_, ys_, u)};
}

double BSplineCurve::parameter_at(double d) const {
  if (!(d >= domain_begin() - 1e-12 && d <= domain_end() + 1e-12)) {
    throw DomainError("displacement " + std::to_string(d) + " mm is outside the curve domain [" +
                      std::to_string(domain_begin()) + ", " + std::to_string(domain_end()) + "]");
  }
  const double span = domain_end() - domain_begin();
  if (affine_) return std::clamp((d - domain_begin()) / span, 0.0, 1.0);

  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (de_boor(knots_, degree_, xs_, mid) < d) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double BSplineCurve::operator()(double d) const {
  return de_boor(knots_, degree_, ys_, parameter_at(d));
}

}  // namespace fdvv
