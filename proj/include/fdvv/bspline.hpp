#pragma once

#include <span>
#include <vector>

namespace fdvv {

struct ControlPoint {
  double displacement_mm;
  double force_cN;

  friend bool operator==(const ControlPoint&, const ControlPoint&) = default;
};

// Clamped knot vector on [0, 1] with uniformly spaced interior knots.
std::vector<double> clamped_uniform_knots(std::size_t control_points, int degree);

// Control-point parameter locations (mean of `degree` consecutive interior knots).
std::vector<double> greville_abscissae(std::span<const double> knots, int degree);

// Values of all `count` basis functions at parameter u (dense row).
void basis_row(std::span<const double> knots, int degree, double u, std::span<double> row);

// Planar B-spline (displacement, force) with a clamped uniform knot vector.
//
// The curve is evaluated as a function of displacement: the parameter u with
// x(u) = d is solved first. When the control displacements sit on the Greville
// abscissae x(u) is affine (linear precision) and the inversion is closed form;
// otherwise x(u) is monotone because the control displacements are non-decreasing,
// and a bisection is used.
class BSplineCurve {
 public:
  BSplineCurve(std::vector<ControlPoint> points, int degree = 3);

  // Throws DomainError outside [first, last] control displacement.
  double operator()(double displacement_mm) const;
  double eval(double displacement_mm) const { return (*this)(displacement_mm); }

  int degree() const { return degree_; }
  const std::vector<ControlPoint>& control_points() const { return points_; }
  const std::vector<double>& knots() const { return knots_; }
  double domain_begin() const { return points_.front().displacement_mm; }
  double domain_end() const { return points_.back().displacement_mm; }

  double parameter_at(double displacement_mm) const;
  ControlPoint point_at_parameter(double u) const;

  friend bool operator==(const BSplineCurve& a, const BSplineCurve& b) {
    return a.degree_ == b.degree_ && a.points_ == b.points_;
  }

 private:
  std::vector<ControlPoint> points_;
  std::vector<double> knots_;
  std::vector<double> xs_, ys_;
  int degree_;
  bool affine_ = false;
};

}  // namespace fdvv
