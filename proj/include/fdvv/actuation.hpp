#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fdvv/vibration.hpp"
#include "json.hpp"

namespace fdvv {

// u(p) per 0.05 mm bin for one press velocity.
struct ActuationCurve {
  double velocity_mm_s = 0.0;
  std::vector<double> u;

  friend bool operator==(const ActuationCurve&, const ActuationCurve&) = default;
};

struct ActuationTable {
  std::string button_id;
  std::string plant_id = "default";
  double travel_range_mm = 0.0;
  double activation_point_mm = 0.0;
  std::optional<VibrationDescriptor> vibration;
  std::vector<ActuationCurve> curves;  // ascending velocity
  bool interpolated = false;

  friend bool operator==(const ActuationTable&, const ActuationTable&) = default;
};

void validate_actuation(const ActuationTable& table);

nlohmann::json actuation_to_json(const ActuationTable& table);
ActuationTable actuation_from_json(const nlohmann::json& j);

}  // namespace fdvv
