#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fdvv/capture.hpp"
#include "fdvv/model.hpp"

namespace fdvv {

// Closed-form stand-in for a physical button: preload ramp, spring, optional tactile
// bump and collapse, soft bottom-out and a velocity-proportional damping term.
struct ButtonProfile {
  std::string id;
  double travel_range_mm = 4.0;
  double activation_point_mm = 2.0;
  double preload_cN = 30.0;
  double preload_width_mm = 0.08;
  double spring_cN_per_mm = 10.0;
  double bump_position_mm = 0.0;  // 0: linear switch
  double bump_height_cN = 0.0;
  double bump_width_mm = 0.2;
  double collapse_cN = 0.0;  // force drop after the bump
  double bottom_start_mm = 3.6;
  double bottom_stiffness_cN_per_mm = 80.0;
  double bottom_softness_mm = 0.08;
  double damping_cN_per_mm_s = 0.02;
  double release_ratio = 0.85;  // release force relative to press force
  double vibration_onset_mm = 2.0;
  double vibration_frequency_hz = 239.0;
  double vibration_duration_ms = 16.0;

  double force(double displacement_mm, double velocity_mm_s) const;
};

// Clear-, Brown-, Black-, Red-like mechanical switches, a laptop rubber dome and a
// low-travel scissor key.
std::vector<ButtonProfile> six_button_profiles();
ButtonProfile clear_like_profile();

inline const std::vector<double> kCaptureVelocities{50.0, 100.0, 150.0, 200.0};

// Noisy gridded downstroke of one press, as produced by the sensor chain without
// averaging. Deterministic in `seed`.
PressSegment synthetic_segment(const ButtonProfile& profile, double velocity_mm_s, double noise_sigma_cN,
                               std::uint64_t seed);

// Random 15-point design around a catalogue profile: the profile fitted with
// `control_points` points and the interior control forces perturbed by N(0, jitter).
BSplineCurve random_design(const ButtonProfile& base, std::uint64_t seed, std::size_t control_points = 15,
                           double jitter_cN = 4.0);
PressSegment curve_segment(const BSplineCurve& curve, double travel_range_mm, double velocity_mm_s,
                           double noise_sigma_cN, std::uint64_t seed);

// Exact target model: per velocity, the profile sampled on the grid and fitted with
// `control_points` points.
FdvvModel reference_model(const ButtonProfile& profile, const std::vector<double>& velocities = kCaptureVelocities,
                          std::size_t control_points = 15);

struct CaptureSynthOptions {
  std::size_t presses = 15;
  std::size_t incomplete_presses = 2;  // the first ones stop short of the travel range
  double velocity_jitter = 0.05;       // relative, per press
  double force_noise_cN = 0.3;
  double mocap_noise_mm = 0.01;
  double mocap_rate_hz = 256.0;
  double clock_offset_ms = 137.25;  // mocap clock ahead of the microcontroller clock
  double rest_depth_mm = 25.0;       // marker midpoint height at rest
  double sound_baseline = 512.0;
  double sound_noise = 2.0;
  double sound_amplitude = 180.0;
  std::uint64_t seed = 7;
};

CaptureSession synthetic_capture(const ButtonProfile& profile, double velocity_mm_s,
                                 const CaptureSynthOptions& options = {});

}  // namespace fdvv
