#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fdvv/compensation.hpp"
#include "fdvv/error.hpp"
#include "fdvv/grid.hpp"
#include "fdvv/synthetic.hpp"
#include "oracles.hpp"

using namespace fdvv;

TEST_CASE("plant with zero input and no bias produces zero force") {
  auto p = default_plant_params();
  p.bias = 0.0;
  p.damping = 0.0;
  p.noise_sigma = 0.0;
  VirtualPlant plant(p);
  CHECK(plant_respond(plant, 0.0, 100.0, 0.0).measured == 0.0);
}

TEST_CASE("identity plant passes the actuation through") {
  VirtualPlant plant(identity_plant_params());
  CHECK(plant_respond(plant, 120.0, 0.0, 0.0).measured == 120.0);
  CHECK(plant_respond(plant, 37.5, 150.0, 99.0).measured == 37.5);
}

TEST_CASE("default plant settles to the closed-form first-order response") {
  auto p = default_plant_params();
  p.noise_sigma = 0.0;
  VirtualPlant plant(p);
  const double steady = p.bias + p.static_gain * 100.0;  // shape(100) = 100
  double state = 0.0;
  for (int t = 1; t <= 100; ++t) {
    state = plant.respond(100.0, 0.0, state).lagged;
    const double closed = steady * (1.0 - std::exp(-t / p.lag_ms));
    CHECK(std::abs(state - closed) <= 1e-9);
  }
  CHECK(std::abs(state - steady) <= 0.5);
}

TEST_CASE("plant response is monotone in actuation and bounded") {
  oracle::Gen g(13);
  for (int trial = 0; trial < 200; ++trial) {
    PlantParams p;
    p.static_gain = g.uniform(0.1, 3.0);
    p.bias = g.uniform(-5.0, 20.0);
    p.nonlinearity = g.uniform(0.6, 1.6);
    p.damping = g.uniform(0.0, 0.05);
    p.noise_sigma = 0.0;
    VirtualPlant plant(p);
    const double v = g.uniform(0.0, 300.0);
    const double prev = g.uniform(0.0, 440.0);
    double last = -1.0;
    for (double u = 0.0; u <= 600.0; u += 7.0) {
      const double f = plant.respond(u, v, prev).measured;
      CHECK(f >= last - 1e-12);
      CHECK(f >= 0.0);
      CHECK(f <= p.saturation);
      last = f;
    }
  }
}

TEST_CASE("error metric examples") {
  const std::vector<double> y(80, 33.0);
  CHECK(error_metric(y, y) == 0.0);
  const std::vector<double> a{0, 0, 0, 0}, b{2, -2, 2, 10};
  CHECK(error_metric(a, b, 0.7) == doctest::Approx(5.8).epsilon(1e-12));
  CHECK_THROWS_AS(error_metric(a, y), ValidationError);
  CHECK_THROWS_AS(error_metric(a, b, 1.5), ParameterError);
}

TEST_CASE("error metric agrees with brute force and is a symmetric non-negative distance") {
  oracle::Gen g(99);
  for (int trial = 0; trial < 500; ++trial) {
    const auto x = g.vec(80, -100.0, 300.0);
    const auto y = g.vec(80, -100.0, 300.0);
    const double alpha = g.uniform(0.0, 1.0);
    const double e = error_metric(x, y, alpha);
    CHECK(std::abs(e - oracle::error_metric(x, y, alpha)) <= 1e-12 * std::max(1.0, e));
    CHECK(e == error_metric(y, x, alpha));
    CHECK(e >= 0.0);
    CHECK(error_metric(x, x, alpha) == 0.0);
  }
}

TEST_CASE("update_signals arithmetic") {
  CompensationState s;
  s.current = {100.0, {100.0, 50.0, 0.0}};
  s.target = {40.0, 40.0, 40.0};
  s.measured = s.target;
  s.gamma = GammaSchedule::constant(0.5);
  CHECK(update_signals(s, 500.0).u == s.current.u);

  s.measured = {30.0, 50.0, 45.0};
  const auto next = update_signals(s, 500.0);
  CHECK(next.u[0] == 105.0);
  CHECK(next.u[1] == 45.0);
  CHECK(next.u[2] == 0.0);  // clamped
  CHECK(update_signals(s, 101.0).u[0] == 101.0);
}

TEST_CASE("gamma schedule switches at 10 cN") {
  const auto g = GammaSchedule::from_gain(0.5);
  CHECK(g(10.5) == doctest::Approx(1.6));
  CHECK(g(10.0) == doctest::Approx(0.8));
  CHECK(g(0.1) == doctest::Approx(0.8));
}

TEST_CASE("identity plant reaches the target in one update") {
  const auto model = reference_model(clear_like_profile(), {100.0});
  CompensationOptions o;
  o.gamma = GammaSchedule::constant(1.0);
  o.tol_cN = 1e-6;
  const auto r = run_compensation(model, VirtualPlant(identity_plant_params()), 100.0, o);
  CHECK(r.converged);
  CHECK(r.error_trace.size() <= 2);
  CHECK(r.error_trace.back() < 1e-6);

  CompensationOptions loose;
  loose.gamma = GammaSchedule::constant(1.0);
  loose.tol_cN = 3.0;
  const auto r2 = run_compensation(model, VirtualPlant(identity_plant_params()), 100.0, loose);
  CHECK(r2.converged);
  CHECK(r2.error_trace.size() <= 2);
}

TEST_CASE("default plant compensates a Clear-like target within 12 iterations") {
  const auto model = reference_model(clear_like_profile());
  for (double v : kCaptureVelocities) {
    CompensationOptions o;
    o.tol_cN = 3.0;
    const auto r = run_compensation(model, VirtualPlant(default_plant_params()), v, o);
    CHECK(r.converged);
    CHECK(r.error_trace.size() <= 12);
    CHECK(r.error_trace.back() <= 3.0);
    CHECK(r.error_trace.front() > 3.0);
  }
}

TEST_CASE("a plant without gain cannot follow and is reported as divergent") {
  auto p = default_plant_params();
  p.static_gain = 0.0;
  p.noise_sigma = 0.0;
  p.calibration = PlantCalibration{1.0, 0.0};
  CompensationOptions o;
  o.max_iters = 30;
  try {
    run_compensation(reference_model(clear_like_profile()), VirtualPlant(p), 100.0, o);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.trace().size() == 6);
  }
}

TEST_CASE("per-bin error never grows on monotone noiseless plants") {
  const auto model = reference_model(clear_like_profile(), {100.0});
  const auto target = target_forces(model, 100.0);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    oracle::Gen g(seed);
    PlantParams p;
    p.static_gain = g.uniform(0.4, 2.0);
    p.bias = g.uniform(0.0, 10.0);
    p.nonlinearity = g.uniform(0.85, 1.2);
    p.damping = g.uniform(0.0, 0.05);
    p.lag_ms = 0.0;
    p.noise_sigma = 0.0;
    VirtualPlant plant(p);
    const double u_max = plant.actuation_limit();

    CompensationState s;
    s.target = target;
    s.gamma = GammaSchedule::constant(1.0 / p.static_gain * g.uniform(0.3, 1.0));
    s.current = {100.0, std::vector<double>(target.size(), g.uniform(0.0, 80.0))};
    const auto press = measurement_press(model.travel_range_mm, 100.0);
    std::vector<double> prev;
    for (int k = 0; k < 8; ++k) {
      const auto m = measure_press(s.current, model, plant, press);
      s.measured = tracked_forces(s.target, m);
      std::vector<double> err(target.size());
      for (std::size_t b = 0; b < err.size(); ++b) err[b] = std::abs(target[b] - s.measured[b]);
      if (!prev.empty()) {
        for (std::size_t b = 0; b < err.size(); ++b) {
          if (m.counts[b] > 0) CHECK(err[b] <= prev[b] + 1e-9);
        }
      }
      prev = err;
      s.error = error_metric(s.target, s.measured);
      s.current = update_signals(s, u_max);
    }
  }
}

TEST_CASE("finalize_actuation examples") {
  std::vector<ActuationCurve> same(4, ActuationCurve{100.0, std::vector<double>(80, 70.0)});
  for (double u : finalize_actuation(same).u) CHECK(u == doctest::Approx(70.0).epsilon(1e-12));

  oracle::Gen g(3);
  ActuationCurve a{100.0, g.vec(80, 0.0, 200.0)};
  ActuationCurve b{100.0, a.u};
  for (auto& x : b.u) x = -x + 2.0 * 90.0;
  for (double u : finalize_actuation(std::vector{a, b}).u) CHECK(u == doctest::Approx(90.0).epsilon(1e-9));

  CHECK_THROWS_AS(finalize_actuation(std::vector<ActuationCurve>{}), ValidationError);
  CHECK_THROWS_AS(finalize_actuation(std::vector{a, ActuationCurve{100.0, {1.0}}}), ValidationError);
}

TEST_CASE("finalize_actuation averages noisy runs back to the truth") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    oracle::Gen g(seed);
    std::vector<double> truth(80);
    for (std::size_t b = 0; b < 80; ++b) truth[b] = 60.0 + 8.0 * bin_center(b);
    std::vector<ActuationCurve> runs;
    for (int r = 0; r < 4; ++r) {
      ActuationCurve c{100.0, truth};
      for (auto& x : c.u) x += g.normal(2.0);
      runs.push_back(c);
    }
    const auto out = finalize_actuation(runs);
    double ss = 0.0;
    for (std::size_t b = 0; b < 80; ++b) ss += std::pow(out.u[b] - truth[b], 2);
    CHECK(std::sqrt(ss / 80.0) <= 1.0);

    auto shuffled = runs;
    std::shuffle(shuffled.begin(), shuffled.end(), g.rng);
    const auto again = finalize_actuation(shuffled);
    for (std::size_t b = 0; b < 80; ++b) CHECK(again.u[b] == doctest::Approx(out.u[b]).epsilon(1e-12));
  }
}

TEST_CASE("velocity interpolation examples") {
  oracle::Gen g(7);
  const ActuationCurve c50{50.0, g.vec(80, 0, 200)}, c150{150.0, g.vec(80, 0, 200)};
  const auto mid = actuation_at_velocity(std::vector{c50, c150}, 100.0);
  for (std::size_t b = 0; b < 80; ++b) CHECK(std::abs(mid.u[b] - 0.5 * (c50.u[b] + c150.u[b])) <= 1e-12);
  CHECK(actuation_at_velocity(std::vector{c50, c150}, 50.0).u == c50.u);
  CHECK(actuation_at_velocity(std::vector{c50, c150}, 150.0).u == c150.u);
  CHECK(actuation_at_velocity(std::vector{c50, c150}, 10.0).u == c50.u);
  CHECK(actuation_at_velocity(std::vector{c50, c150}, 900.0).u == c150.u);
  CHECK_THROWS_AS(interpolate_velocities(std::vector{c50}, 16), ValidationError);
}

TEST_CASE("16 interpolated curves follow the per-bin linear formula") {
  oracle::Gen g(8);
  std::vector<ActuationCurve> in;
  for (double v : {50.0, 100.0, 150.0, 200.0}) in.push_back({v, g.vec(80, 0, 200)});
  const auto out = interpolate_velocities(in, 16);
  REQUIRE(out.size() == 16);
  CHECK(out.front().u == in.front().u);
  CHECK(out.back().u == in.back().u);
  for (std::size_t i = 0; i < 16; ++i) {
    const double v = 50.0 + 150.0 * static_cast<double>(i) / 15.0;
    CHECK(out[i].velocity_mm_s == doctest::Approx(v));
    const auto seg = std::min<std::size_t>(2, static_cast<std::size_t>((v - 50.0) / 50.0));
    const double w = (v - in[seg].velocity_mm_s) / 50.0;
    for (std::size_t b = 0; b < 80; ++b) {
      CHECK(std::abs(out[i].u[b] - ((1.0 - w) * in[seg].u[b] + w * in[seg + 1].u[b])) <= 1e-9);
    }
  }
}

TEST_CASE("interpolation keeps per-bin monotonicity in velocity") {
  oracle::Gen g(9);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ActuationCurve> in;
    std::vector<double> level = g.vec(80, 0, 50);
    for (double v : {50.0, 100.0, 150.0, 200.0}) {
      for (auto& x : level) x += g.uniform(0.0, 30.0);
      in.push_back({v, level});
    }
    const auto out = interpolate_velocities(in, g.index(5, 40));
    for (std::size_t i = 1; i < out.size(); ++i) {
      for (std::size_t b = 0; b < 80; ++b) CHECK(out[i].u[b] >= out[i - 1].u[b] - 1e-12);
    }
  }
}

TEST_CASE("compensate_model builds a validated table and serial equals parallel") {
  const auto model = reference_model(clear_like_profile());
  CompensateRequest req;
  req.runs = 2;
  req.interpolate_to = 7;
  const VirtualPlant plant(default_plant_params());
  const auto a = serial::compensate_model(model, plant, req);
  const auto b = parallel::compensate_model(model, plant, req);
  CHECK(a.table == b.table);
  CHECK(a.traces == b.traces);
  CHECK(a.table.curves.size() == 7);
  CHECK(a.table.interpolated);
  CHECK(a.traces.size() == 4);
  CHECK_NOTHROW(validate_actuation(a.table));
  const auto back = actuation_from_json(nlohmann::json::parse(actuation_to_json(a.table).dump()));
  CHECK(back == a.table);
}
