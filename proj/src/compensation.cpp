#include "fdvv/compensation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include "fdvv/error.hpp"
#include "fdvv/grid.hpp"
#include "fdvv/smoothing.hpp"

namespace fdvv {

double error_metric(std::span<const double> y_d, std::span<const double> y_k, double alpha) {
  if (y_d.size() != y_k.size()) throw ValidationError("error_metric: length mismatch");
  if (y_d.empty()) throw ValidationError("error_metric: empty curves");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("error_metric: alpha must lie in [0, 1]");
  double sum = 0.0;
  double worst = 0.0;
  for (std::size_t i = 0; i < y_d.size(); ++i) {
    const double e = std::abs(y_d[i] - y_k[i]);
    sum += e;
    worst = std::max(worst, e);
  }
  return alpha * (sum / static_cast<double>(y_d.size())) + (1.0 - alpha) * worst;
}

GammaSchedule GammaSchedule::from_gain(double gain_estimate) {
  const double g = std::max(std::abs(gain_estimate), 1e-6);
  return {10.0, 0.8 / g, 0.4 / g};
}

ActuationCurve update_signals(const CompensationState& s, double u_max) {
  const auto& u = s.current.u;
  if (s.measured.size() != u.size() || s.target.size() != u.size()) {
    throw ValidationError("update_signals: actuation, measured and target grids differ");
  }
  const double gamma = s.gamma(s.error);
  ActuationCurve next{s.current.velocity_mm_s, std::vector<double>(u.size())};
  for (std::size_t p = 0; p < u.size(); ++p) {
    next.u[p] = std::clamp(u[p] + gamma * (s.target[p] - s.measured[p]), 0.0, u_max);
  }
  return next;
}

std::vector<double> target_forces(const FdvvModel& model, double v) {
  const auto bins = bin_count(model.travel_range_mm);
  std::vector<double> y(bins);
  for (std::size_t p = 0; p < bins; ++p) {
    y[p] = model.force_at(std::min(bin_center(p), model.travel_range_mm), v);
  }
  return y;
}

PressTrajectory measurement_press(double travel, double v) {
  return constant_velocity_press(travel + 0.3, v, 30, 60, false);
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

DownstrokeMeasurement measure_press(const ActuationCurve& curve, const FdvvModel& model, const VirtualPlant& plant,
                                    const PressTrajectory& press) {
  ActuationTable table;
  table.button_id = model.button_id;
  table.plant_id = plant.params().plant_id;
  table.travel_range_mm = model.travel_range_mm;
  table.activation_point_mm = model.activation_point_mm;
  table.curves = {curve};
  SimConfig config;
  config.travel_range_mm = model.travel_range_mm;
  config.activation_point_mm = model.activation_point_mm;
  RenderEngine engine(std::move(table), config, plant);
  std::vector<TickRecord> ticks;
  ticks.reserve(press.samples.size());
  for (const auto& s : press.samples) ticks.push_back(engine.step(s));
  auto profile = downstroke_profile(ticks, curve.u.size(), config.rest_threshold_mm);
  if (!profile) throw ValidationError("measurement press never left the rest position");
  return {std::move(profile->force.values), std::move(profile->force.counts)};
}

std::vector<double> tracked_forces(std::span<const double> target, const DownstrokeMeasurement& m) {
  const auto n = target.size();
  if (m.force.size() != n || m.counts.size() != n) throw ValidationError("measurement and target grids differ");
  std::vector<std::size_t> visited;
  for (std::size_t p = 0; p < n; ++p) {
    if (m.counts[p] > 0) visited.push_back(p);
  }
  if (visited.empty()) throw ValidationError("measurement press visited no bin");
  std::vector<double> y(n);
  std::size_t next = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (m.counts[p] > 0) {
      y[p] = m.force[p];
      continue;
    }
    while (next < visited.size() && visited[next] < p) ++next;
    auto error_at = [&](std::size_t q) { return target[q] - m.force[q]; };
    double e = 0.0;
    if (next == 0) {
      e = error_at(visited.front());
    } else if (next == visited.size()) {
      e = error_at(visited.back());
    } else {
      const auto a = visited[next - 1], b = visited[next];
      const double w = static_cast<double>(p - a) / static_cast<double>(b - a);
      e = (1.0 - w) * error_at(a) + w * error_at(b);
    }
    y[p] = target[p] - e;
  }
  return y;
}

std::uint64_t run_seed(std::uint64_t base, std::size_t velocity_index, std::size_t run) {
  return splitmix(splitmix(base ^ (static_cast<std::uint64_t>(velocity_index) << 32)) + run);
}

CompensationResult run_compensation(const FdvvModel& model, const VirtualPlant& plant, double v,
                                    const CompensationOptions& opt) {
  validate_model(model);
  if (!(v > 0.0)) throw ParameterError("compensation velocity must be positive");
  if (opt.max_iters < 1) throw ParameterError("max_iters must be at least 1");

  VirtualPlant local = plant;
  if (opt.noiseless) local.params().noise_sigma = 0.0;
  const PlantCalibration calib = local.params().calibration.value_or(calibrate(local));
  const double u_max = local.actuation_limit();

  CompensationState state;
  state.alpha = opt.alpha;
  state.gamma = opt.gamma.value_or(GammaSchedule::from_gain(calib.slope));
  state.target = target_forces(model, v);
  const auto bins = state.target.size();

  state.current.velocity_mm_s = v;
  if (opt.initial_u) {
    if (opt.initial_u->size() != bins) throw ValidationError("initial actuation has the wrong number of bins");
    state.current.u = *opt.initial_u;
  } else {
    double mean = 0.0;
    for (double y : state.target) mean += y;
    mean /= static_cast<double>(bins);
    const double u0 = std::abs(calib.slope) > 1e-9 ? calib.actuation_for(mean) : 0.0;
    state.current.u.assign(bins, std::clamp(u0, 0.0, u_max));
  }

  const auto press = measurement_press(model.travel_range_mm, v);
  CompensationResult result;
  double best = std::numeric_limits<double>::infinity();
  std::size_t rising = 0;
  for (std::size_t k = 0; k < opt.max_iters; ++k) {
    VirtualPlant iteration_plant = local;
    iteration_plant.reseed(splitmix(local.params().seed + k));
    state.iteration = k;
    state.measured = tracked_forces(state.target, measure_press(state.current, model, iteration_plant, press));
    state.error = error_metric(state.target, state.measured, state.alpha);
    if (k > 0) rising = state.error >= result.error_trace.back() ? rising + 1 : 0;
    result.error_trace.push_back(state.error);

    if (state.error < best) {
      best = state.error;
      result.curve = state.current;
      result.best_iteration = k;
    }
    if (state.error <= opt.tol_cN) {
      result.converged = true;
      break;
    }
    if (rising >= opt.divergence_window) {
      throw DivergenceError("compensation diverged at " + std::to_string(v) + " mm/s: error did not decrease for " +
                                std::to_string(rising) + " consecutive iterations",
                            result.error_trace);
    }
    if (k + 1 < opt.max_iters) state.current = update_signals(state, u_max);
  }
  return result;
}

ActuationCurve finalize_actuation(std::span<const ActuationCurve> runs, double sigma_mm) {
  if (runs.empty()) throw ValidationError("finalize_actuation needs at least one run");
  const auto bins = runs.front().u.size();
  for (const auto& r : runs) {
    if (r.u.size() != bins) throw ValidationError("finalize_actuation: runs are on different grids");
  }
  std::vector<double> mean(bins);
  std::vector<double> column(runs.size());
  for (std::size_t p = 0; p < bins; ++p) {
    for (std::size_t r = 0; r < runs.size(); ++r) column[r] = runs[r].u[p];
    mean[p] = stable_mean(column);
  }
  return {runs.front().velocity_mm_s, smooth_over_grid(mean, sigma_mm)};
}

std::vector<ActuationCurve> interpolate_velocities(std::span<const ActuationCurve> curves, std::size_t target_count) {
  if (curves.size() < 2) throw ValidationError("interpolate_velocities needs at least two curves");
  if (target_count < 2) throw ParameterError("interpolate_velocities needs a target count of at least two");
  std::vector<ActuationCurve> sorted(curves.begin(), curves.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.velocity_mm_s < b.velocity_mm_s; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].velocity_mm_s == sorted[i - 1].velocity_mm_s) {
      throw ValidationError("interpolate_velocities: duplicate velocity");
    }
    if (sorted[i].u.size() != sorted[0].u.size()) throw ValidationError("interpolate_velocities: grid mismatch");
  }
  const double lo = sorted.front().velocity_mm_s;
  const double hi = sorted.back().velocity_mm_s;
  std::vector<ActuationCurve> out;
  out.reserve(target_count);
  for (std::size_t i = 0; i < target_count; ++i) {
    const double v = i + 1 == target_count
                         ? hi
                         : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(target_count - 1);
    out.push_back(actuation_at_velocity(sorted, v));
  }
  return out;
}

namespace {

std::vector<double> request_velocities(const FdvvModel& model, const CompensateRequest& req) {
  std::vector<double> vs = req.velocities;
  if (vs.empty()) {
    for (const auto& c : model.press_curves) vs.push_back(c.velocity_mm_s);
  }
  std::sort(vs.begin(), vs.end());
  if (std::adjacent_find(vs.begin(), vs.end()) != vs.end()) throw ValidationError("duplicate compensation velocity");
  for (double v : vs) {
    if (!(v > 0.0)) throw ValidationError("compensation velocities must be positive");
  }
  if (req.runs < 1) throw ParameterError("at least one compensation run per velocity is required");
  return vs;
}

CompensationResult one_run(const FdvvModel& model, const VirtualPlant& plant, const CompensateRequest& req,
                           double v, std::size_t vi, std::size_t r) {
  VirtualPlant clone = plant;
  clone.reseed(run_seed(plant.params().seed, vi, r));
  return run_compensation(model, clone, v, req.options);
}

CompensationReport assemble(const FdvvModel& model, const VirtualPlant& plant, const CompensateRequest& req,
                            const std::vector<double>& vs, std::vector<CompensationResult>& results) {
  CompensationReport report;
  auto& t = report.table;
  t.button_id = model.button_id;
  t.plant_id = plant.params().plant_id;
  t.travel_range_mm = model.travel_range_mm;
  t.activation_point_mm = model.activation_point_mm;
  t.vibration = model.vibration;
  const double u_max = plant.actuation_limit();
  for (std::size_t vi = 0; vi < vs.size(); ++vi) {
    std::vector<ActuationCurve> runs;
    std::vector<std::vector<double>> traces;
    for (std::size_t r = 0; r < req.runs; ++r) {
      auto& res = results[vi * req.runs + r];
      runs.push_back(std::move(res.curve));
      traces.push_back(std::move(res.error_trace));
    }
    auto curve = finalize_actuation(runs);
    curve.velocity_mm_s = vs[vi];
    for (double& u : curve.u) u = std::clamp(u, 0.0, u_max);
    t.curves.push_back(std::move(curve));
    report.traces.push_back(std::move(traces));
  }
  if (req.interpolate_to > t.curves.size() && t.curves.size() >= 2) {
    t.curves = interpolate_velocities(t.curves, req.interpolate_to);
    t.interpolated = true;
  }
  validate_actuation(t);
  return report;
}

}  // namespace

namespace serial {

CompensationReport compensate_model(const FdvvModel& model, const VirtualPlant& plant, const CompensateRequest& req) {
  validate_model(model);
  const auto vs = request_velocities(model, req);
  std::vector<CompensationResult> results(vs.size() * req.runs);
  for (std::size_t i = 0; i < results.size(); ++i) {
    results[i] = one_run(model, plant, req, vs[i / req.runs], i / req.runs, i % req.runs);
  }
  return assemble(model, plant, req, vs, results);
}

}  // namespace serial

namespace parallel {

CompensationReport compensate_model(const FdvvModel& model, const VirtualPlant& plant, const CompensateRequest& req) {
  validate_model(model);
  const auto vs = request_velocities(model, req);
  const auto total = static_cast<long>(vs.size() * req.runs);
  std::vector<CompensationResult> results(static_cast<std::size_t>(total));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(total));
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < total; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      results[idx] = one_run(model, plant, req, vs[idx / req.runs], idx / req.runs, idx % req.runs);
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return assemble(model, plant, req, vs, results);
}

}  // namespace parallel

}  // namespace fdvv
