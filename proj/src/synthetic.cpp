#include "fdvv/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fdvv/error.hpp"
#include "fdvv/grid.hpp"

namespace fdvv {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

double ButtonProfile::force(double d, double v) const {
  if (d <= 0.0) return 0.0;
  double f = preload_cN * (1.0 - std::exp(-d / preload_width_mm)) + spring_cN_per_mm * d;
  if (bump_position_mm > 0.0) {
    const double z = (d - bump_position_mm) / bump_width_mm;
    // faster presses snap slightly harder
    const double scale = 1.0 + 0.001 * (v - 100.0);
    f += scale * bump_height_cN * std::exp(-0.5 * z * z);
    f -= collapse_cN * logistic((d - bump_position_mm - bump_width_mm) / (0.4 * bump_width_mm));
  }
  f += bottom_stiffness_cN_per_mm * bottom_softness_mm * softplus((d - bottom_start_mm) / bottom_softness_mm);
  f += damping_cN_per_mm_s * v;
  return std::max(0.0, f);
}

std::vector<ButtonProfile> six_button_profiles() {
  std::vector<ButtonProfile> out;

  ButtonProfile clear = clear_like_profile();
  out.push_back(clear);

  ButtonProfile brown;
  brown.id = "brown";
  brown.preload_cN = 30.0;
  brown.spring_cN_per_mm = 8.0;
  brown.bump_position_mm = 0.9;
  brown.bump_height_cN = 12.0;
  brown.bump_width_mm = 0.25;
  brown.collapse_cN = 6.0;
  brown.bottom_start_mm = 3.5;
  brown.bottom_stiffness_cN_per_mm = 120.0;
  brown.vibration_onset_mm = 1.0;
  out.push_back(brown);

  ButtonProfile black;
  black.id = "black";
  black.preload_cN = 35.0;
  black.spring_cN_per_mm = 12.5;
  black.bottom_start_mm = 3.6;
  black.bottom_stiffness_cN_per_mm = 150.0;
  black.vibration_onset_mm = 3.5;
  out.push_back(black);

  ButtonProfile red;
  red.id = "red";
  red.preload_cN = 25.0;
  red.spring_cN_per_mm = 7.5;
  red.bottom_start_mm = 3.6;
  red.bottom_stiffness_cN_per_mm = 130.0;
  red.vibration_onset_mm = 3.5;
  out.push_back(red);

  ButtonProfile dome;
  dome.id = "laptop_dome";
  dome.travel_range_mm = 3.6;
  dome.activation_point_mm = 1.6;
  dome.preload_cN = 15.0;
  dome.spring_cN_per_mm = 20.0;
  dome.bump_position_mm = 1.1;
  dome.bump_height_cN = 25.0;
  dome.bump_width_mm = 0.35;
  dome.collapse_cN = 35.0;
  dome.bottom_start_mm = 2.9;
  dome.bottom_stiffness_cN_per_mm = 200.0;
  dome.vibration_onset_mm = 1.4;
  out.push_back(dome);

  ButtonProfile scissor;
  scissor.id = "scissor";
  scissor.travel_range_mm = 2.2;
  scissor.activation_point_mm = 0.9;
  scissor.preload_cN = 20.0;
  scissor.spring_cN_per_mm = 30.0;
  scissor.bump_position_mm = 0.55;
  scissor.bump_height_cN = 15.0;
  scissor.bump_width_mm = 0.15;
  scissor.collapse_cN = 25.0;
  scissor.bottom_start_mm = 1.6;
  scissor.bottom_stiffness_cN_per_mm = 250.0;
  scissor.bottom_softness_mm = 0.06;
  scissor.vibration_onset_mm = 0.7;
  out.push_back(scissor);

  return out;
}

ButtonProfile clear_like_profile() {
  ButtonProfile p;
  p.id = "clear";
  p.preload_cN = 40.0;
  p.spring_cN_per_mm = 8.0;
  p.bump_position_mm = 1.0;
  p.bump_height_cN = 30.0;
  p.bump_width_mm = 0.25;
  p.collapse_cN = 15.0;
  p.bottom_start_mm = 3.5;
  p.bottom_stiffness_cN_per_mm = 150.0;
  p.vibration_onset_mm = 1.1;
  return p;
}

namespace {

PressSegment empty_segment(double travel, double v) {
  PressSegment seg;
  seg.velocity_nominal_mm_s = v;
  seg.travel_range_mm = travel;
  const auto bins = bin_count(travel);
  seg.force_cN.resize(bins);
  seg.sound.assign(bins, 0.0);
  seg.time_ms.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) seg.time_ms[b] = bin_center(b) / v * 1000.0;
  seg.max_displacement_mm = travel;
  seg.complete = true;
  return seg;
}

}  // namespace

PressSegment synthetic_segment(const ButtonProfile& profile, double v, double noise, std::uint64_t seed) {
  auto seg = empty_segment(profile.travel_range_mm, v);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t b = 0; b < seg.bins(); ++b) {
    seg.force_cN[b] = profile.force(bin_center(b), v) + (noise > 0.0 ? noise * n01(rng) : 0.0);
  }
  return seg;
}

BSplineCurve random_design(const ButtonProfile& base, std::uint64_t seed, std::size_t k, double jitter) {
  const auto fit = fit_curve(synthetic_segment(base, 100.0, 0.0, 0), k);
  auto points = fit.curve.control_points();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t i = 1; i + 1 < points.size(); ++i) {
    points[i].force_cN = std::max(0.0, points[i].force_cN + jitter * n01(rng));
  }
  return BSplineCurve(std::move(points), fit.curve.degree());
}

PressSegment curve_segment(const BSplineCurve& curve, double travel, double v, double noise, std::uint64_t seed) {
  auto seg = empty_segment(travel, v);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t b = 0; b < seg.bins(); ++b) {
    seg.force_cN[b] = curve(std::min(bin_center(b), travel)) + (noise > 0.0 ? noise * n01(rng) : 0.0);
  }
  return seg;
}

FdvvModel reference_model(const ButtonProfile& profile, const std::vector<double>& velocities, std::size_t k) {
  FdvvModel m;
  m.button_id = profile.id;
  m.travel_range_mm = profile.travel_range_mm;
  m.activation_point_mm = profile.activation_point_mm;
  m.vibration = {profile.vibration_onset_mm, profile.vibration_duration_ms, profile.vibration_frequency_hz, "default"};
  auto vs = velocities;
  std::sort(vs.begin(), vs.end());
  for (double v : vs) {
    m.press_curves.push_back({v, fit_curve(synthetic_segment(profile, v, 0.0, 0), k).curve});
  }
  validate_model(m);
  return m;
}

CaptureSession synthetic_capture(const ButtonProfile& profile, double v, const CaptureSynthOptions& o) {
  if (!(v > 0.0)) throw ParameterError("capture velocity must be positive");
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> n01(0.0, 1.0);

  // displacement, velocity, phase (1 press, -1 release, 0 rest/hold) per 1 ms tick
  struct Tick {
    double d, v;
    int phase;
  };
  std::vector<Tick> ticks;
  auto rest = [&](std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) ticks.push_back({0.0, 0.0, 0});
  };
  rest(300);
  for (std::size_t p = 0; p < o.presses; ++p) {
    const double vp = v * std::clamp(1.0 + o.velocity_jitter * n01(rng), 0.8, 1.2);
    const double depth = p < o.incomplete_presses ? 0.6 * profile.travel_range_mm : profile.travel_range_mm;
    const double step = vp / 1000.0;
    double d = 0.0;
    while (d < depth) {
      d = std::min(depth, d + step);
      ticks.push_back({d, vp, 1});
    }
    for (int i = 0; i < 120; ++i) ticks.push_back({depth, 0.0, 0});
    while (d > 0.0) {
      d = std::max(0.0, d - step);
      ticks.push_back({d, -vp, -1});
    }
    rest(150);
  }
  rest(150);

  CaptureSession s;
  s.meta = {profile.id, v, profile.travel_range_mm};
  std::vector<double> burst_start;
  for (std::size_t i = 1; i < ticks.size(); ++i) {
    if (ticks[i].phase == 1 && ticks[i - 1].d < profile.vibration_onset_mm &&
        ticks[i].d >= profile.vibration_onset_mm) {
      burst_start.push_back(static_cast<double>(i));
    }
  }
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < ticks.size(); ++i) {
    const auto& tk = ticks[i];
    double f = 0.0;
    if (tk.phase >= 0) {
      f = profile.force(tk.d, tk.v);
    } else {
      f = std::max(0.0, profile.release_ratio * profile.force(tk.d, 0.0) + profile.damping_cN_per_mm_s * tk.v);
    }
    if (tk.d > 0.0) f += o.force_noise_cN * n01(rng);
    f = std::max(0.0, f);

    double sound = o.sound_baseline + o.sound_noise * n01(rng);
    const double t = static_cast<double>(i);
    for (double b : burst_start) {
      const double dt = t - b;
      if (dt >= 0.0 && dt <= profile.vibration_duration_ms) {
        const double env = 1.0 - dt / profile.vibration_duration_ms;
        sound += o.sound_amplitude * env * std::sin(two_pi * profile.vibration_frequency_hz * dt / 1000.0);
      }
    }
    s.mcu.push_back({t, f, sound});
  }

  const double period = 1000.0 / o.mocap_rate_hz;
  const double end = static_cast<double>(ticks.size() - 1);
  for (std::size_t j = 0;; ++j) {
    const double t_mcu = static_cast<double>(j) * period;
    if (t_mcu > end) break;
    const auto i0 = static_cast<std::size_t>(std::floor(t_mcu));
    const auto i1 = std::min(i0 + 1, ticks.size() - 1);
    const double w = t_mcu - static_cast<double>(i0);
    const double d = (1.0 - w) * ticks[i0].d + w * ticks[i1].d;
    const double z = o.rest_depth_mm - d;
    MocapSample m;
    m.t_ms = t_mcu + o.clock_offset_ms;
    m.marker1 = {10.0 + o.mocap_noise_mm * n01(rng), 5.0 + o.mocap_noise_mm * n01(rng),
                 z + o.mocap_noise_mm * n01(rng)};
    m.marker2 = {14.0 + o.mocap_noise_mm * n01(rng), 5.0 + o.mocap_noise_mm * n01(rng),
                 z + o.mocap_noise_mm * n01(rng)};
    s.mocap.push_back(m);
  }
  s.sync = {100.0, 100.0 + o.clock_offset_ms};
  validate_capture(s);
  return s;
}

}  // namespace fdvv
