#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "json.hpp"

namespace fdvv {

// Linear map actuation -> steady force measured with two static calibration pulses.
struct PlantCalibration {
  double slope = 1.0;   // cN per actuation unit
  double offset = 0.0;  // cN

  double force_for(double u) const { return offset + slope * u; }
  double actuation_for(double force_cN) const { return (force_cN - offset) / slope; }
};

struct PlantParams {
  std::string plant_id = "default";
  double static_gain = 0.85;     // cN per actuation unit (at the 100-unit reference)
  double bias = 4.0;             // cN
  double saturation = 440.0;     // cN
  double nonlinearity = 1.15;    // exponent of the monotone input shaping
  double lag_ms = 1.0;           // first-order time constant; 0 disables the lag
  double damping = 0.01;         // cN per (mm/s)
  double noise_sigma = 0.3;      // cN, additive on the measured force
  std::uint64_t seed = 1;
  std::optional<PlantCalibration> calibration;
};

struct PlantOutput {
  double lagged;    // noise-free lag state, feed back as prev_force
  double measured;  // lagged + noise, clamped to [0, saturation]
};

// Software stand-in for the force actuator. Copying clones the noise generator state.
class VirtualPlant {
 public:
  VirtualPlant() : VirtualPlant(PlantParams{}) {}
  explicit VirtualPlant(PlantParams params);

  const PlantParams& params() const { return params_; }
  PlantParams& params() { return params_; }
  void reseed(std::uint64_t seed);

  // Input shaping: 100 * (u / 100)^nonlinearity.
  double shape(double u) const;
  // clamp(bias + gain * shape(u) + damping * v, 0, saturation).
  double static_force(double u, double velocity_mm_s) const;
  // Smallest actuation reaching saturation at rest; 1000 when the gain cannot get there.
  double actuation_limit() const;

  PlantOutput respond(double u, double velocity_mm_s, double prev_force, double tick_ms = 1.0);

 private:
  PlantParams params_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> noise_{0.0, 1.0};
};

inline PlantOutput plant_respond(VirtualPlant& plant, double u, double velocity_mm_s, double prev_force) {
  return plant.respond(u, velocity_mm_s, prev_force);
}

PlantParams default_plant_params();
// Gain 1, linear shaping, no bias, lag, damping or noise.
PlantParams identity_plant_params();

// Two static pulses at 10 % and 40 % of the actuation limit, each held 60 ticks at
// rest; the last 20 measured ticks of each are averaged. Runs on a clone.
PlantCalibration calibrate(const VirtualPlant& plant);

nlohmann::json plant_to_json(const PlantParams& p);
PlantParams plant_from_json(const nlohmann::json& j);

}  // namespace fdvv
