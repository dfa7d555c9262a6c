#include "fdvv/plant.hpp"

#include <algorithm>
#include <cmath>

#include "fdvv/error.hpp"

namespace fdvv {

VirtualPlant::VirtualPlant(PlantParams params) : params_(std::move(params)), rng_(params_.seed) {}

void VirtualPlant::reseed(std::uint64_t seed) {
  params_.seed = seed;
  rng_.seed(seed);
  noise_.reset();
}

double VirtualPlant::shape(double u) const {
  if (u <= 0.0) return 0.0;
  if (params_.nonlinearity == 1.0) return u;
  return 100.0 * std::pow(u / 100.0, params_.nonlinearity);
}

double VirtualPlant::static_force(double u, double v) const {
  const double raw = params_.bias + params_.static_gain * shape(u) + params_.damping * v;
  return std::clamp(raw, 0.0, params_.saturation);
}

double VirtualPlant::actuation_limit() const {
  const double headroom = params_.saturation - params_.bias;
  if (!(params_.static_gain > 0.0) || !(headroom > 0.0)) return 1000.0;
  const double shaped = headroom / params_.static_gain;
  if (params_.nonlinearity == 1.0) return shaped;
  return 100.0 * std::pow(shaped / 100.0, 1.0 / params_.nonlinearity);
}

PlantOutput VirtualPlant::respond(double u, double v, double prev_force, double tick_ms) {
  const double target = static_force(std::max(0.0, u), v);
  double lagged = target;
  if (params_.lag_ms > 0.0) {
    const double a = std::exp(-tick_ms / params_.lag_ms);
    lagged = a * prev_force + (1.0 - a) * target;
  }
  double measured = lagged;
  if (params_.noise_sigma > 0.0) measured += params_.noise_sigma * noise_(rng_);
  return {lagged, std::clamp(measured, 0.0, params_.saturation)};
}

PlantParams default_plant_params() { return PlantParams{}; }

PlantParams identity_plant_params() {
  PlantParams p;
  p.plant_id = "identity";
  p.static_gain = 1.0;
  p.bias = 0.0;
  p.nonlinearity = 1.0;
  p.lag_ms = 0.0;
  p.damping = 0.0;
  p.noise_sigma = 0.0;
  return p;
}

PlantCalibration calibrate(const VirtualPlant& plant) {
  VirtualPlant probe = plant;
  const double limit = probe.actuation_limit();
  auto pulse = [&](double u) {
    double state = 0.0;
    double sum = 0.0;
    for (int t = 0; t < 60; ++t) {
      const auto out = probe.respond(u, 0.0, state);
      state = out.lagged;
      if (t >= 40) sum += out.measured;
    }
    return sum / 20.0;
  };
  const double u_lo = 0.1 * limit;
  const double u_hi = 0.4 * limit;
  const double f_lo = pulse(u_lo);
  const double f_hi = pulse(u_hi);
  PlantCalibration c;
  c.slope = (f_hi - f_lo) / (u_hi - u_lo);
  c.offset = f_lo - c.slope * u_lo;
  return c;
}

nlohmann::json plant_to_json(const PlantParams& p) {
  nlohmann::json j = {{"plant_id", p.plant_id},       {"static_gain", p.static_gain}, {"bias", p.bias},
                      {"saturation", p.saturation},   {"nonlinearity", p.nonlinearity}, {"lag_ms", p.lag_ms},
                      {"damping", p.damping},         {"noise_sigma", p.noise_sigma}, {"seed", p.seed}};
  if (p.calibration) j["calibration"] = {{"slope", p.calibration->slope}, {"offset", p.calibration->offset}};
  return j;
}

PlantParams plant_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("plant: top level must be an object");
  PlantParams p;
  try {
    p.plant_id = j.value("plant_id", p.plant_id);
    p.static_gain = j.value("static_gain", p.static_gain);
    p.bias = j.value("bias", p.bias);
    p.saturation = j.value("saturation", p.saturation);
    p.nonlinearity = j.value("nonlinearity", p.nonlinearity);
    p.lag_ms = j.value("lag_ms", p.lag_ms);
    p.damping = j.value("damping", p.damping);
    p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
    p.seed = j.value("seed", p.seed);
    if (j.contains("calibration")) {
      p.calibration = PlantCalibration{j.at("calibration").at("slope").get<double>(),
                                       j.at("calibration").at("offset").get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("plant: ") + e.what());
  }
  if (!(p.saturation > 0.0)) throw ValidationError("plant.saturation must be positive");
  if (!(p.nonlinearity > 0.0)) throw ValidationError("plant.nonlinearity must be positive");
  if (p.lag_ms < 0.0 || p.noise_sigma < 0.0) throw ValidationError("plant lag and noise must be non-negative");
  if (p.static_gain < 0.0) throw ValidationError("plant.static_gain must be non-negative");
  return p;
}

}  // namespace fdvv
