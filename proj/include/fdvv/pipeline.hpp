#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>

#include "fdvv/capture.hpp"
#include "fdvv/model.hpp"
#include "fdvv/vibration.hpp"
#include "json.hpp"

namespace fdvv {

struct IngestOptions {
  double sigma_filter_mm = 1.2;
  double sigma_average_mm = 0.8;
  SegmentOptions segments;
  OnsetOptions onset;
  double vibration_window_before_ms = 5.0;
  double vibration_window_after_ms = 40.0;
};

struct VelocityPresses {
  PressSegment averaged;
  std::size_t presses = 0;
  std::size_t complete = 0;
};

// Captures of one button reduced to one averaged downstroke per nominal velocity,
// plus the vibration descriptor measured from the sound channel when a burst is found.
struct IngestResult {
  std::string button_id;
  double travel_range_mm = 0.0;
  std::map<double, VelocityPresses> velocities;
  std::optional<double> onset_mm;
  std::optional<VibrationFeatures> features;
};

IngestResult ingest_captures(std::span<const CaptureSession> captures, const IngestOptions& options = {});

nlohmann::json ingest_to_json(const IngestResult& r);
IngestResult ingest_from_json(const nlohmann::json& j);

// Annotations default to the measured vibration and an activation point at half travel.
BuiltModel fit_ingested(const IngestResult& r, std::optional<double> activation_point_mm = std::nullopt,
                        std::size_t k_min = 4, std::size_t k_max = 30,
                        double penalty = kDefaultComplexityPenalty);

}  // namespace fdvv
