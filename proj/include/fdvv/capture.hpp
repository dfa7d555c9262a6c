#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fdvv {

struct McuSample {
  double t_ms;
  double force_cN;
  double sound;  // raw ADC level
};

struct MocapSample {
  double t_ms;
  std::array<double, 3> marker1;  // mm
  std::array<double, 3> marker2;  // mm
};

struct SyncPair {
  double mcu_t_ms;
  double mocap_t_ms;
};

struct CaptureMeta {
  std::string button_id;
  double nominal_velocity_mm_s = 0.0;
  double travel_range_mm = 0.0;
};

// Raw dual-stream recording of one capture run (one nominal velocity).
struct CaptureSession {
  CaptureMeta meta;
  std::vector<McuSample> mcu;      // nominal 1 kHz
  std::vector<MocapSample> mocap;  // nominal 256 Hz
  SyncPair sync{};
};

// Throws ParseError (naming the offending record) or ValidationError.
CaptureSession parse_capture(std::string_view text);
std::string serialize_capture(const CaptureSession& session);
void validate_capture(const CaptureSession& session);

struct TraceSample {
  double t_ms;
  double force_cN;
  double sound;
  double displacement_mm;
};

// Both streams on a uniform 1 ms timeline.
struct SyncedTrace {
  std::vector<TraceSample> samples;
  double origin_depth_mm = 0.0;  // marker-midpoint depth of the keycap at rest
};

struct SyncOptions {
  // Rest depth of the marker midpoint; estimated from the stream when absent.
  std::optional<double> rest_depth_mm;
  // Index of the depth coordinate in the marker triples (z).
  int depth_axis = 2;
};

// Linear interpolation of (times, values) at t; times strictly increasing, t inside the span.
double interpolate_linear(std::span<const double> times, std::span<const double> values, double t);

SyncedTrace synchronize(const CaptureSession& session, const SyncOptions& options = {});

// Kernel width in samples for a sigma given in displacement units.
double sigma_mm_to_samples(const SyncedTrace& trace, double sigma_mm);
double mean_press_speed_mm_per_ms(const SyncedTrace& trace);

SyncedTrace filter_trace(const SyncedTrace& trace, double sigma_force_mm, double sigma_disp_mm);

// One press reduced to the 0.05 mm displacement grid.
struct PressSegment {
  double velocity_nominal_mm_s = 0.0;
  double travel_range_mm = 0.0;
  std::vector<double> force_cN;  // per bin
  std::vector<double> sound;     // per bin
  std::vector<double> time_ms;   // per bin; when the downstroke passed the bin
  std::optional<std::vector<double>> release_force_cN;
  double max_displacement_mm = 0.0;
  bool complete = false;

  std::size_t bins() const { return force_cN.size(); }
};

struct SegmentOptions {
  double rest_threshold_mm = 0.05;
  double incomplete_margin_mm = 0.1;
  bool grid_release = false;
};

std::vector<PressSegment> segment_and_grid(const SyncedTrace& trace, double travel_range_mm,
                                           double nominal_velocity_mm_s,
                                           const SegmentOptions& options = {});

// Per-bin mean over the complete segments followed by Gaussian smoothing over displacement.
PressSegment average_presses(std::span<const PressSegment> segments, double sigma_smooth_mm);

}  // namespace fdvv
