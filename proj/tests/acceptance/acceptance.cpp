// Acceptance suite: one line per criterion, non-zero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fdvv/compensation.hpp"
#include "fdvv/optimizer.hpp"
#include "fdvv/pipeline.hpp"
#include "fdvv/render.hpp"
#include "fdvv/synthetic.hpp"
#include "fdvv/vibration.hpp"
#include "oracles.hpp"

using namespace fdvv;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

int failures = 0;

void criterion(const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("threw: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs >= limit_s) o.require(false, fmt("runtime %.2f s over limit", secs));
  if (!o.pass) ++failures;
  std::printf("[%s] %s (%.2f s, limit %.0f s)%s%s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, limit_s,
              o.detail.empty() ? "" : ": ", o.detail.c_str());
  std::fflush(stdout);
}

std::vector<CaptureSession> bundled_captures() {
  std::vector<CaptureSession> out;
  for (int v : {50, 100, 150, 200}) {
    std::ifstream in(std::string(FDVV_DATA_DIR) + "/clear_" + std::to_string(v) + ".json");
    std::ostringstream ss;
    ss << in.rdbuf();
    out.push_back(parse_capture(ss.str()));
  }
  return out;
}

PressTrajectory probe_press(double travel) {
  auto p = constant_velocity_press(travel + 0.3, 0.5, 30, 30, false);
  p.profile = "probe";
  return p;
}

// Clear-like target from the bundled captures and its finalized actuation.
struct Fixture {
  FdvvModel model;
  ActuationTable table;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    const auto captures = bundled_captures();
    Fixture x;
    x.model = fit_ingested(ingest_captures(captures)).model;
    x.table = compensate_model(x.model, VirtualPlant(default_plant_params()), CompensateRequest{}).table;
    return x;
  }();
  return f;
}

double mean_probe_error(const ActuationTable& table, const FdvvModel& model) {
  const auto trace = run_press(table, probe_press(table.travel_range_mm), sim_config_for(table),
                               VirtualPlant(default_plant_params()), &model);
  if (!trace.summary) throw std::runtime_error("probe produced no summary");
  return trace.summary->mean_abs_error_cN;
}

std::size_t count_event(const RenderTrace& t, RenderEvent e) {
  std::size_t n = 0;
  for (const auto& r : t.ticks) n += static_cast<std::size_t>(std::count(r.events.begin(), r.events.end(), e));
  return n;
}

}  // namespace

int main() {
  criterion("error metric equals brute-force recomputation on 1000 random pairs", 1.0, [] {
    Outcome o;
    oracle::Gen g(2024);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const auto a = g.vec(80, -200.0, 200.0);
      const auto b = g.vec(80, -200.0, 200.0);
      const double lib = error_metric(a, b, 0.7);
      const double ref = oracle::error_metric(a, b, 0.7);
      worst = std::max(worst, std::abs(lib - ref) / std::max(std::abs(ref), 1e-300));
    }
    o.require(worst <= 1e-12, fmt("worst relative difference %.3g", worst));
    o.detail = o.pass ? fmt("worst relative difference %.3g", worst) : o.detail;
    return o;
  });

  criterion("bic_star reproduces hand-computed values, default penalty 2.5", 1.0, [] {
    Outcome o;
    // ln(100) * 15 * 2.5 + 100 and ln(50) * 10 * 2.5 + 41, worked by hand
    o.require(std::abs(bic_star(100, 15, -50.0) - 272.69388197455345) <= 1e-9, "n=100 k=15");
    o.require(std::abs(bic_star(50, 10, -20.5) - 138.80057513570365) <= 1e-9, "n=50 k=10");
    o.require(std::abs(bic_star(80, 4, 12.0, 1.0) - (4.382026634673881 * 4.0 - 24.0)) <= 1e-9, "n=80 P=1");
    o.require(bic_star(1, 7, 0.0) == 0.0, "n=1 zero case");
    o.require(kDefaultComplexityPenalty == 2.5, "default penalty");
    return o;
  });

  criterion("order selection picks k in [13, 17] on 20 six-button-style datasets", 30.0, [] {
    Outcome o;
    const auto profiles = six_button_profiles();
    int inside = 0;
    double worst_rmse = 0.0;
    std::string ks;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto& profile = profiles[seed % profiles.size()];
      const auto design = random_design(profile, seed, 15);
      const auto seg = curve_segment(design, profile.travel_range_mm, 100.0, 0.1, seed + 500);
      const auto sel = select_order(seg, 4, 30);
      if (sel.best_k >= 13 && sel.best_k <= 17) ++inside;
      for (const auto& r : sel.reports) {
        if (r.k == sel.best_k) worst_rmse = std::max(worst_rmse, r.rmse);
      }
      ks += (ks.empty() ? "" : ",") + std::to_string(sel.best_k);
    }
    o.require(inside >= 16, std::to_string(inside) + "/20 inside");
    o.require(worst_rmse <= 0.2, fmt("worst rmse %.3f cN", worst_rmse));
    if (o.pass) o.detail = std::to_string(inside) + "/20 inside, k = " + ks + fmt(", worst rmse %.3f cN", worst_rmse);
    return o;
  });

  const auto& fx = fixture();

  criterion("compensation reaches 3 cN within 12 iterations at 4 velocities", 10.0, [&] {
    Outcome o;
    std::string finals;
    for (const auto& c : fx.model.press_curves) {
      const double v = c.velocity_mm_s;
      CompensationOptions opt;
      opt.tol_cN = 3.0;
      const auto r = run_compensation(fx.model, VirtualPlant(default_plant_params()), v, opt);
      o.require(r.converged && r.error_trace.size() <= 12 && r.error_trace.back() <= 3.0,
                fmt("%.0f mm/s did not reach 3 cN", v));
      finals += fmt(" %.2f", r.error_trace.back()) + "@" + std::to_string(r.error_trace.size());

      CompensationOptions quiet;
      quiet.noiseless = true;
      quiet.tol_cN = 0.0;
      quiet.divergence_window = 100;
      const auto q = run_compensation(fx.model, VirtualPlant(default_plant_params()), v, quiet);
      for (std::size_t k = 3; k < q.error_trace.size(); ++k) {
        if (q.error_trace[k] > q.error_trace[k - 1]) {
          o.require(false, fmt("noiseless trace rises at %.0f mm/s", v) + " iteration " + std::to_string(k + 1));
          break;
        }
      }
    }
    if (o.pass) o.detail = "final cN@iterations:" + finals;
    return o;
  });

  criterion("0.5 mm/s probe over finalized actuation within 2 cN mean error", 5.0, [&] {
    Outcome o;
    const double err = mean_probe_error(fx.table, fx.model);
    o.require(err <= 2.0, fmt("mean error %.3f cN", err));
    if (o.pass) o.detail = fmt("mean error %.3f cN", err);
    return o;
  });

  criterion("render loop invariants", 5.0, [&] {
    Outcome o;
    auto quiet_params = default_plant_params();
    quiet_params.noise_sigma = 0.0;
    const VirtualPlant quiet(quiet_params);

    // event uniqueness per press, over repeated presses of mixed speed
    PressTrajectory many;
    double t = 0.0;
    for (double v : {50.0, 120.0, 200.0}) {
      for (const auto& s : constant_velocity_press(fx.table.travel_range_mm + 0.3, v).samples) {
        many.samples.push_back({t++, s.displacement_mm});
      }
    }
    const auto trace = run_press(fx.table, many, sim_config_for(fx.table), quiet);
    for (auto e : {RenderEvent::kActivation, RenderEvent::kVibrationStart, RenderEvent::kBottomOut,
                   RenderEvent::kRelease}) {
      o.require(count_event(trace, e) == 3, std::string(to_string(e)) + " not once per press");
    }

    // vibration start at onset - 0.3 within one bin
    auto table = fx.table;
    table.vibration = VibrationDescriptor{2.0, 16.0, 239.0, "default"};
    const auto vib = run_press(table, constant_velocity_press(4.3, 50.0), sim_config_for(table), quiet);
    std::optional<double> at;
    for (const auto& r : vib.ticks) {
      if (std::count(r.events.begin(), r.events.end(), RenderEvent::kVibrationStart)) at = r.filtered_disp_mm;
    }
    o.require(at && *at >= 1.7 && *at < 1.7 + kGridStepMm + 1e-9,
              at ? fmt("vibration_start at %.3f mm", *at) : "no vibration_start");

    // limiter
    const auto deep = run_press(fx.table, constant_velocity_press(7.0, 100.0), sim_config_for(fx.table), quiet);
    double peak = 0.0;
    for (const auto& r : deep.ticks) peak = std::max(peak, r.filtered_disp_mm);
    o.require(std::abs(peak - fx.table.travel_range_mm) <= 1e-12, fmt("limiter peak %.4f mm", peak));

    // window-25 step response
    std::vector<double> step(60, 0.0);
    std::fill(step.begin() + 10, step.end(), 1.0);
    const auto ma = moving_average(step, 25);
    o.require(ma[10 + 23] < 1.0 && ma[10 + 24] == 1.0, "step response not at target on tick 24");

    // deterministic replay
    const auto again = run_press(fx.table, many, sim_config_for(fx.table), VirtualPlant(default_plant_params()));
    const auto third = run_press(fx.table, many, sim_config_for(fx.table), VirtualPlant(default_plant_params()));
    o.require(again.ticks == third.ticks, "replay differs");
    return o;
  });

  criterion("velocity interpolation reproduces measured curves, midpoint is the per-bin mean", 1.0, [&] {
    Outcome o;
    const auto& curves = fx.table.curves;
    double worst = 0.0;
    for (std::size_t i = 0; i < curves.size(); ++i) {
      o.require(actuation_at_velocity(curves, curves[i].velocity_mm_s).u == curves[i].u,
                fmt("curve at %.0f mm/s not exact", curves[i].velocity_mm_s));
      if (i + 1 == curves.size()) continue;
      const double mid_v = 0.5 * (curves[i].velocity_mm_s + curves[i + 1].velocity_mm_s);
      const auto mid = actuation_at_velocity(curves, mid_v);
      for (std::size_t b = 0; b < mid.u.size(); ++b) {
        worst = std::max(worst, std::abs(mid.u[b] - 0.5 * (curves[i].u[b] + curves[i + 1].u[b])));
      }
    }
    o.require(worst <= 1e-12, fmt("midpoint off by %.3g", worst));
    return o;
  });

  criterion("BO beats the random design on held-out users in >= 8 of 10 seeds", 120.0, [] {
    Outcome o;
    int wins = 0;
    std::string margins;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      OptimizeConfig c;
      c.budget = 30;
      c.seed = seed;
      const auto r = optimize(c);
      for (std::size_t i = 1; i < r.history.size(); ++i) {
        if (r.history[i].incumbent_ms > r.history[i - 1].incumbent_ms) {
          o.require(false, "incumbent rises at seed " + std::to_string(seed));
          break;
        }
      }
      SimulatedUser held_out = c.user;
      held_out.seed = 1000003 + seed;
      const double bo = evaluate_design(r.best, held_out, c.difficulty_px_s, 200);
      const double rnd = evaluate_design(random_params(seed), held_out, c.difficulty_px_s, 200);
      if (bo < rnd) ++wins;
      margins += fmt(" %.1f", rnd - bo);
    }
    o.require(wins >= 8, std::to_string(wins) + "/10 wins");
    if (o.pass) o.detail = std::to_string(wins) + "/10 wins, random - bo ms:" + margins;
    return o;
  });

  criterion("239 Hz / 16 ms burst recovered; bank holds three envelopes within 2.43 V", 1.0, [] {
    Outcome o;
    const double rate = 44100.0;
    std::vector<double> x(441, 0.0);
    for (int i = 0; i < static_cast<int>(0.016 * rate); ++i) {
      x.push_back(std::sin(2.0 * std::numbers::pi * 239.0 * i / rate));
    }
    x.insert(x.end(), 441, 0.0);
    const auto f = extract_features(x, rate);
    o.require(std::abs(f.frequency_hz - 239.0) <= 10.0, fmt("frequency %.2f Hz", f.frequency_hz));
    o.require(std::abs(f.duration_ms - 16.0) <= 2.0, fmt("duration %.2f ms", f.duration_ms));

    const auto bank = generate_templates(f);
    for (double end : {0.0, 0.3, 0.6}) {
      const bool found = std::any_of(bank.begin(), bank.end(), [&](const WaveTemplate& t) {
        return t.frequency_hz == f.frequency_hz && t.amplitude_start == 2.43 && t.amplitude_end == end &&
               t.envelope(0.0) == 2.43 && std::abs(t.envelope(t.duration_ms) - end) <= 1e-12;
      });
      o.require(found, fmt("no 2.43 -> %.1f V envelope", end));
    }
    for (const auto& t : bank) {
      for (double s : synthesize(t, rate)) {
        if (std::abs(s) > kMaxDriveVolts) {
          o.require(false, t.id + " exceeds 2.43 V");
          break;
        }
      }
    }
    if (o.pass) o.detail = fmt("%.2f Hz", f.frequency_hz) + fmt(", %.2f ms", f.duration_ms);
    return o;
  });

  criterion("golden run: captures through ingest, fit, compensate, simulate", 60.0, [] {
    Outcome o;
    const auto captures = bundled_captures();
    for (const auto& c : captures) {
      o.require(parse_capture(serialize_capture(c)).mcu.size() == c.mcu.size(), "capture round trip");
    }
    const auto ingested = ingest_captures(captures);
    const auto ij = ingest_to_json(ingested);
    o.require(ingest_to_json(ingest_from_json(ij)) == ij, "ingest round trip");

    const auto model = fit_ingested(ingest_from_json(ij)).model;
    o.require(model_from_json(model_to_json(model)) == model, "model round trip");

    const auto table = compensate_model(model, VirtualPlant(default_plant_params()), CompensateRequest{}).table;
    o.require(actuation_from_json(actuation_to_json(table)) == table, "actuation round trip");

    const auto traj = probe_press(table.travel_range_mm);
    o.require(trajectory_from_json(trajectory_to_json(traj)).samples.size() == traj.samples.size(),
              "trajectory round trip");
    const double err = mean_probe_error(table, model);
    o.require(err <= 2.0, fmt("final mean error %.3f cN", err));
    if (o.pass) o.detail = fmt("final mean error %.3f cN", err);
    return o;
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
