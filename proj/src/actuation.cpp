#include "fdvv/actuation.hpp"

#include <algorithm>
#include <cmath>

#include "fdvv/error.hpp"
#include "fdvv/grid.hpp"

namespace fdvv {

using nlohmann::json;

void validate_actuation(const ActuationTable& t) {
  if (!(t.travel_range_mm > 0.0)) throw ValidationError("actuation: travel_range_mm must be positive");
  if (t.curves.empty()) throw ValidationError("actuation: no curves");
  const auto bins = bin_count(t.travel_range_mm);
  for (std::size_t i = 0; i < t.curves.size(); ++i) {
    const auto& c = t.curves[i];
    const std::string where = "actuation.curves[" + std::to_string(i) + "]";
    if (c.u.size() != bins) throw ValidationError(where + ": expected " + std::to_string(bins) + " bins");
    if (!(c.velocity_mm_s > 0.0)) throw ValidationError(where + ": velocity must be positive");
    if (i > 0 && !(c.velocity_mm_s > t.curves[i - 1].velocity_mm_s)) {
      throw ValidationError("actuation: curve velocities must be distinct");
    }
    for (double u : c.u) {
      if (!std::isfinite(u)) throw ValidationError(where + ": non-finite actuation value");
    }
  }
  if (t.activation_point_mm != 0.0 &&
      !(t.activation_point_mm > 0.0 && t.activation_point_mm < t.travel_range_mm)) {
    throw ValidationError("actuation: activation point outside the travel range");
  }
  if (t.vibration) validate_vibration(*t.vibration, t.travel_range_mm);
}

json actuation_to_json(const ActuationTable& t) {
  json curves = json::array();
  for (const auto& c : t.curves) {
    curves.push_back({{"velocity_mm_s", c.velocity_mm_s}, {"grid_mm", kGridStepMm}, {"u", c.u}});
  }
  json j = {{"button_id", t.button_id},
            {"plant_id", t.plant_id},
            {"travel_range_mm", t.travel_range_mm},
            {"activation_point_mm", t.activation_point_mm},
            {"curves", curves},
            {"interpolated", t.interpolated}};
  if (t.vibration) {
    j["vibration"] = {{"onset_mm", t.vibration->onset_mm},
                      {"duration_ms", t.vibration->duration_ms},
                      {"frequency_hz", t.vibration->frequency_hz},
                      {"template_id", t.vibration->template_id}};
  }
  return j;
}

ActuationTable actuation_from_json(const json& j) {
  ActuationTable t;
  try {
    t.button_id = j.at("button_id").get<std::string>();
    t.plant_id = j.value("plant_id", std::string("default"));
    t.interpolated = j.value("interpolated", false);
    t.activation_point_mm = j.value("activation_point_mm", 0.0);
    std::size_t bins = 0;
    for (const auto& c : j.at("curves")) {
      if (c.contains("grid_mm") && std::abs(c.at("grid_mm").get<double>() - kGridStepMm) > 1e-12) {
        throw ParseError("actuation: only the 0.05 mm grid is supported");
      }
      t.curves.push_back({c.at("velocity_mm_s").get<double>(), c.at("u").get<std::vector<double>>()});
      bins = t.curves.back().u.size();
    }
    t.travel_range_mm = j.contains("travel_range_mm") ? j.at("travel_range_mm").get<double>()
                                                      : static_cast<double>(bins) * kGridStepMm;
    if (j.contains("vibration") && !j.at("vibration").is_null()) {
      const auto& v = j.at("vibration");
      t.vibration = VibrationDescriptor{v.at("onset_mm").get<double>(), v.at("duration_ms").get<double>(),
                                        v.at("frequency_hz").get<double>(),
                                        v.value("template_id", std::string("default"))};
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("actuation: ") + e.what());
  }
  std::sort(t.curves.begin(), t.curves.end(),
            [](const auto& a, const auto& b) { return a.velocity_mm_s < b.velocity_mm_s; });
  validate_actuation(t);
  return t;
}

}  // namespace fdvv
