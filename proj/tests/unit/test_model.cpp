#include <cmath>

#include "doctest.h"
#include "fdvv/bspline.hpp"
#include "fdvv/error.hpp"
#include "fdvv/grid.hpp"
#include "fdvv/model.hpp"
#include "fdvv/synthetic.hpp"
#include "oracles.hpp"

using namespace fdvv;

namespace {

// Control points at the Greville abscissae, so x(u) = u * travel.
BSplineCurve greville_curve(const std::vector<double>& forces, double travel, int degree = 3) {
  const auto knots = clamped_uniform_knots(forces.size(), degree);
  const auto g = greville_abscissae(knots, degree);
  std::vector<ControlPoint> pts;
  for (std::size_t i = 0; i < forces.size(); ++i) pts.push_back({g[i] * travel, forces[i]});
  return BSplineCurve(pts, degree);
}

PressSegment constant_segment(double force, double travel = 4.0) {
  PressSegment s;
  s.velocity_nominal_mm_s = 100.0;
  s.travel_range_mm = travel;
  s.complete = true;
  s.force_cN.assign(bin_count(travel), force);
  s.sound.assign(bin_count(travel), 0.0);
  return s;
}

}  // namespace

TEST_CASE("constant spline evaluates to the constant") {
  const auto c = greville_curve(std::vector<double>(15, 50.0), 4.0);
  for (double d = 0.0; d <= 4.0; d += 0.013) CHECK(c(d) == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("clamped ends interpolate the end control points") {
  oracle::Gen g(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto forces = g.vec(g.index(4, 30), 0.0, 120.0);
    const auto c = greville_curve(forces, 4.0);
    CHECK(c(0.0) == doctest::Approx(forces.front()).epsilon(1e-12));
    CHECK(c(4.0) == doctest::Approx(forces.back()).epsilon(1e-12));
  }
}

TEST_CASE("evaluation matches an independent Cox-de Boor evaluator") {
  oracle::Gen g(8);
  for (int trial = 0; trial < 5; ++trial) {
    const double travel = g.uniform(2.0, 6.2);
    const auto xs = g.sorted_positions(15, travel);
    const auto ys = g.vec(15, 0.0, 150.0);
    std::vector<ControlPoint> pts;
    for (std::size_t i = 0; i < 15; ++i) pts.push_back({xs[i], ys[i]});
    const BSplineCurve c(pts, 3);
    for (std::size_t b = 0; b < bin_count(travel); ++b) {
      const double d = std::min(bin_center(b), travel);
      CHECK(std::abs(c(d) - oracle::spline_at(xs, ys, 3, d)) <= 1e-9);
    }
  }
}

TEST_CASE("evaluation is continuous and domain checked") {
  oracle::Gen g(12);
  const auto c = greville_curve(g.vec(15, 0.0, 100.0), 4.0);
  for (int i = 0; i < 500; ++i) {
    const double d = g.uniform(0.0, 4.0 - 1e-6);
    CHECK(std::abs(c(d + 1e-6) - c(d)) <= 1e-3);
  }
  CHECK_THROWS_AS(c(-0.01), DomainError);
  CHECK_THROWS_AS(c(4.01), DomainError);
}

TEST_CASE("exact spline data is recovered") {
  oracle::Gen g(31);
  for (std::size_t k : {4u, 8u, 15u, 22u}) {
    const auto truth = greville_curve(g.vec(k, 10.0, 120.0), 4.0);
    const auto seg = curve_segment(truth, 4.0, 100.0, 0.0, 0);
    const auto fit = fit_curve(seg, k);
    CHECK(fit.report.rmse < 1e-6);
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(fit.curve.control_points()[i].force_cN ==
            doctest::Approx(truth.control_points()[i].force_cN).epsilon(1e-6));
    }
  }
}

TEST_CASE("constant data fits constant control forces") {
  for (std::size_t k = 4; k <= 30; k += 5) {
    const auto fit = fit_curve(constant_segment(30.0), k);
    for (const auto& p : fit.curve.control_points()) CHECK(p.force_cN == doctest::Approx(30.0).epsilon(1e-9));
  }
}

TEST_CASE("fit report is consistent with the BIC* formula") {
  oracle::Gen g(40);
  const auto seg = curve_segment(greville_curve(g.vec(10, 20, 90), 4.0), 4.0, 100.0, 0.5, 3);
  for (std::size_t k = 4; k <= 30; ++k) {
    const auto r = fit_curve(seg, k).report;
    CHECK(r.n == 80);
    CHECK(r.k == k);
    const double rss = r.rmse * r.rmse * 80.0;
    const double ll = -0.5 * (80.0 * std::log(rss / 80.0) + 80.0 * (1.0 + std::log(2.0 * M_PI)));
    CHECK(r.log_likelihood == doctest::Approx(ll).epsilon(1e-9));
    CHECK(std::abs(r.bic_star - (std::log(80.0) * static_cast<double>(k) * r.penalty - 2.0 * r.log_likelihood)) <=
          1e-9);
  }
}

TEST_CASE("fit residuals are orthogonal to every basis column") {
  oracle::Gen g(41);
  const auto seg = curve_segment(greville_curve(g.vec(12, 20, 90), 4.0), 4.0, 100.0, 1.0, 5);
  for (std::size_t k : {5u, 15u, 25u}) {
    const auto fit = fit_curve(seg, k);
    const auto knots = oracle::clamped_knots(k, 3);
    for (std::size_t i = 0; i < k; ++i) {
      double dot = 0.0;
      for (std::size_t b = 0; b < seg.bins(); ++b) {
        const double u = bin_center(b) / 4.0;
        dot += oracle::cox_de_boor(knots, i, 3, u) * (seg.force_cN[b] - fit.curve(bin_center(b)));
      }
      CHECK(std::abs(dot) <= 1e-6);
    }
  }
}

TEST_CASE("fit rejects infeasible control-point counts") {
  auto seg = constant_segment(30.0, 0.5);  // 10 bins
  CHECK_THROWS_AS(fit_curve(seg, 11), FitError);
  CHECK_THROWS_AS(fit_curve(seg, 1), ParameterError);
}

TEST_CASE("six-button-style segments fit within 0.2 cN at k = 15") {
  std::uint64_t seed = 100;
  for (const auto& profile : six_button_profiles()) {
    const auto design = random_design(profile, seed, 15);
    const auto seg = curve_segment(design, profile.travel_range_mm, 100.0, 0.1, seed++);
    CHECK(fit_curve(seg, 15).report.rmse <= 0.2);
  }
}

TEST_CASE("bic_star arithmetic") {
  CHECK(bic_star(1, 7, 0.0) == 0.0);
  CHECK(bic_star(1, 30, 0.0, 9.0) == 0.0);
  CHECK(kDefaultComplexityPenalty == 2.5);
  CHECK(std::round(bic_star(100, 15, -50.0, 2.5) * 100.0) / 100.0 == doctest::Approx(272.69).epsilon(1e-12));
  CHECK(std::round(bic_star(100, 15, -50.0, 2.5) * 1000.0) / 1000.0 == doctest::Approx(272.694).epsilon(1e-12));
  CHECK(std::abs(bic_star(100, 15, -50.0, 2.5) - (std::log(100.0) * 37.5 + 100.0)) <= 1e-9);
  CHECK_THROWS_AS(bic_star(0, 1, 0.0), ParameterError);
  oracle::Gen g(6);
  for (int i = 0; i < 100; ++i) {
    const auto n = g.index(2, 1000);
    const auto k = g.index(1, 40);
    const double ll = g.uniform(-500.0, 500.0);
    CHECK(bic_star(n, k + 1, ll) > bic_star(n, k, ll));
  }
}

TEST_CASE("order selection on noiseless constant data picks k_min") {
  const auto sel = select_order(constant_segment(42.0), 4, 30);
  CHECK(sel.best_k == 4);
  CHECK(sel.reports.size() == 27);
}

TEST_CASE("order selection recovers an 8-point generator") {
  int inside = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    oracle::Gen g(seed);
    const auto truth = greville_curve(g.vec(8, 20.0, 110.0), 4.0);
    const auto seg = curve_segment(truth, 4.0, 100.0, 0.3, seed + 1000);
    const auto k = select_order(seg, 4, 30).best_k;
    if (k >= 6 && k <= 10) ++inside;
  }
  CHECK(inside >= 16);
}

TEST_CASE("order selection is deterministic and serial equals parallel") {
  const auto seg = curve_segment(random_design(clear_like_profile(), 3, 15), 4.0, 100.0, 0.1, 3);
  const auto a = serial::select_order(seg, 4, 30);
  const auto b = parallel::select_order(seg, 4, 30);
  const auto c = parallel::select_order(seg, 4, 30);
  CHECK(a.best_k == b.best_k);
  CHECK(b.best_k == c.best_k);
  REQUIRE(a.reports.size() == b.reports.size());
  for (std::size_t i = 0; i < a.reports.size(); ++i) CHECK(a.reports[i].bic_star == b.reports[i].bic_star);
  CHECK_THROWS_AS(select_order(constant_segment(1.0, 0.2), 10, 12), FitError);
}

TEST_CASE("build_model with one velocity is a single FD model") {
  const auto profile = clear_like_profile();
  ModelAnnotations a;
  a.button_id = "one";
  a.activation_point_mm = 2.0;
  a.vibration = {1.1, 16.0, 239.0, "default"};
  const auto built = build_model({{100.0, synthetic_segment(profile, 100.0, 0.1, 1)}}, a);
  REQUIRE(built.model.press_curves.size() == 1);
  CHECK(built.model.force_at(2.0, 50.0) == built.model.force_at(2.0, 200.0));
}

TEST_CASE("build_model over four velocities round-trips through JSON") {
  const auto profile = clear_like_profile();
  std::map<double, PressSegment> per;
  for (double v : kCaptureVelocities) per[v] = synthetic_segment(profile, v, 0.1, static_cast<std::uint64_t>(v));
  ModelAnnotations a;
  a.button_id = "clear";
  a.activation_point_mm = 2.0;
  a.vibration = {1.1, 16.0, 239.0, "default"};
  const auto built = build_model(per, a);
  CHECK(built.model.press_curves.size() == 4);
  CHECK(built.selections.size() == 4);
  const auto back = model_from_json(nlohmann::json::parse(model_to_json(built.model).dump()));
  CHECK(back == built.model);

  per[100.0].travel_range_mm = 3.6;
  CHECK_THROWS_AS(build_model(per, a), ValidationError);
}

TEST_CASE("model validation") {
  auto m = reference_model(clear_like_profile());
  CHECK_NOTHROW(validate_model(m));
  m.activation_point_mm = m.travel_range_mm;
  CHECK_THROWS_AS(validate_model(m), ValidationError);
  CHECK_THROWS_AS(model_from_json(nlohmann::json::object()), ParseError);
}
