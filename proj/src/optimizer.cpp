#include "fdvv/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>

#include "fdvv/bspline.hpp"
#include "fdvv/error.hpp"
#include "fdvv/grid.hpp"

namespace fdvv {

using nlohmann::json;

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr const char* kNames[kDesignDims] = {"x1", "x2", "x3", "y1", "y2", "y3", "p_a", "p_v"};

}  // namespace

ButtonParams ButtonParams::from_array(const std::array<double, kDesignDims>& a) {
  return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]};
}

const std::array<ParamRange, kDesignDims>& param_ranges() {
  static const std::array<ParamRange, kDesignDims> r{{{0.0, 1.0, true},
                                                      {1.0, 3.0, true},
                                                      {3.0, 6.2, true},
                                                      {20.0, 180.0, false},
                                                      {20.0, 180.0, false},
                                                      {20.0, 180.0, false},
                                                      {0.5, 5.5, false},
                                                      {0.5, 5.5, false}}};
  return r;
}

void validate_params(const ButtonParams& p) {
  const auto a = p.to_array();
  const auto& r = param_ranges();
  for (std::size_t i = 0; i < kDesignDims; ++i) {
    const bool ok = std::isfinite(a[i]) && a[i] >= r[i].lo && (r[i].open_hi ? a[i] < r[i].hi : a[i] <= r[i].hi);
    if (!ok) {
      throw ValidationError(std::string(kNames[i]) + " = " + std::to_string(a[i]) + " is outside [" +
                            std::to_string(r[i].lo) + ", " + std::to_string(r[i].hi) + (r[i].open_hi ? ")" : "]"));
    }
  }
}

ButtonParams params_from_unit(std::span<const double> z) {
  if (z.size() != kDesignDims) throw ParameterError("design vector must have 8 entries");
  std::array<double, kDesignDims> a{};
  const auto& r = param_ranges();
  for (std::size_t i = 0; i < kDesignDims; ++i) {
    const double t = std::clamp(z[i], 0.0, 1.0);
    a[i] = r[i].lo + t * (r[i].hi - r[i].lo);
    if (r[i].open_hi) a[i] = std::min(a[i], std::nextafter(r[i].hi, r[i].lo));
  }
  return ButtonParams::from_array(a);
}

std::vector<double> params_to_unit(const ButtonParams& p) {
  const auto a = p.to_array();
  const auto& r = param_ranges();
  std::vector<double> z(kDesignDims);
  for (std::size_t i = 0; i < kDesignDims; ++i) z[i] = (a[i] - r[i].lo) / (r[i].hi - r[i].lo);
  return z;
}

json params_to_json(const ButtonParams& p) {
  json j;
  const auto a = p.to_array();
  for (std::size_t i = 0; i < kDesignDims; ++i) j[kNames[i]] = a[i];
  return j;
}

ButtonParams params_from_json(const json& j) {
  std::array<double, kDesignDims> a{};
  try {
    for (std::size_t i = 0; i < kDesignDims; ++i) a[i] = j.at(kNames[i]).get<double>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("button params: ") + e.what());
  }
  auto p = ButtonParams::from_array(a);
  validate_params(p);
  return p;
}

ActuationTable params_to_actuation(const ButtonParams& p) {
  validate_params(p);
  const BSplineCurve curve({{p.x1, p.y1}, {p.x2, p.y2}, {p.x3, p.y3}}, 2);
  ActuationTable t;
  t.button_id = "design";
  t.plant_id = "default";
  t.travel_range_mm = kDesignTravelMm;
  t.activation_point_mm = p.p_a;
  t.vibration = VibrationDescriptor{p.p_v, 16.0, 239.0, "default"};
  const auto bins = bin_count(kDesignTravelMm);
  ActuationCurve c{100.0, std::vector<double>(bins)};
  for (std::size_t b = 0; b < bins; ++b) c.u[b] = curve(std::clamp(bin_center(b), p.x1, p.x3));
  t.curves.push_back(std::move(c));
  return t;
}

double salience(const ButtonParams& p, const SimulatedUser& user) {
  const auto table = params_to_actuation(p);
  const auto& u = table.curves.front().u;
  double steepest = 0.0;
  for (std::size_t b = 0; b + 1 < u.size(); ++b) {
    const double mid = 0.5 * (bin_center(b) + bin_center(b + 1));
    if (std::abs(mid - p.p_a) > user.slope_window_mm) continue;
    steepest = std::max(steepest, std::abs(u[b + 1] - u[b]) / kGridStepMm);
  }
  return user.w_slope * std::tanh(steepest / user.slope_scale) +
         user.w_proximity * std::exp(-std::abs(p.p_v - p.p_a) / user.proximity_scale_mm);
}

double trial_asynchrony(const ButtonParams& p, const SimulatedUser& user, double difficulty, std::size_t trial) {
  double a = user.base_asynchrony_ms + user.difficulty_slope * (difficulty - kEasyDifficulty);
  if (user.haptic_gain_ms != 0.0) a -= user.haptic_gain_ms * salience(p, user);
  if (user.motor_noise_sigma_ms > 0.0) {
    std::mt19937_64 rng(mix(mix(user.seed) + trial));
    std::normal_distribution<double> n01(0.0, 1.0);
    a += user.motor_noise_sigma_ms * n01(rng);
  }
  return a;
}

double evaluate_design(const ButtonParams& p, const SimulatedUser& user, double difficulty, std::size_t trials) {
  if (trials < 1) throw ParameterError("evaluate_design needs at least one trial");
  validate_params(p);
  std::vector<double> values(trials);
  for (std::size_t i = 0; i < trials; ++i) values[i] = trial_asynchrony(p, user, difficulty, i);
  return stable_mean(std::move(values));
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double kernel(std::span<const double> a, std::span<const double> b, const GpHyper& h) {
  return h.signal_var * std::exp(-0.5 * sq_dist(a, b) / (h.lengthscale * h.lengthscale));
}

}  // namespace

void GaussianProcess::fit(std::vector<std::vector<double>> x, std::span<const double> y, const GpHyper& h) {
  const auto n = x.size();
  if (n == 0 || y.size() != n) throw ParameterError("GP needs matching, non-empty inputs");
  for (double v : y) {
    if (!std::isfinite(v)) throw FitError("GP targets must be finite");
  }
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  const double sd = n > 1 ? std::sqrt(var / static_cast<double>(n)) : 0.0;
  const double scale = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0;

  std::vector<double> L(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = kernel(x[i], x[j], h) + (i == j ? h.noise_var : 0.0);
      for (std::size_t k = 0; k < j; ++k) s -= L[i * n + k] * L[j * n + k];
      if (i == j) {
        if (!(s > 0.0)) throw FitError("GP kernel matrix is not positive definite");
        L[i * n + i] = std::sqrt(s);
      } else {
        L[i * n + j] = s / L[j * n + j];
      }
    }
  }
  std::vector<double> a(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = (y[i] - mean) / scale;
    for (std::size_t k = 0; k < i; ++k) s -= L[i * n + k] * a[k];
    a[i] = s / L[i * n + i];
  }
  double quad = 0.0;
  for (double v : a) quad += v * v;
  for (std::size_t ii = n; ii-- > 0;) {
    double s = a[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= L[k * n + ii] * a[k];
    a[ii] = s / L[ii * n + ii];
  }
  double logdet = 0.0;
  for (std::size_t i = 0; i < n; ++i) logdet += std::log(L[i * n + i]);

  x_ = std::move(x);
  alpha_ = std::move(a);
  chol_ = std::move(L);
  n_ = n;
  mean_ = mean;
  scale_ = scale;
  hyper_ = h;
  lml_ = -0.5 * quad - logdet - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

void GaussianProcess::fit_auto(std::vector<std::vector<double>> x, std::span<const double> y) {
  std::optional<GaussianProcess> best;
  for (double ell : {0.1, 0.2, 0.3, 0.5, 0.8, 1.2}) {
    for (double noise : {1e-6, 1e-4, 1e-2, 1e-1}) {
      GaussianProcess gp;
      try {
        gp.fit(x, y, {ell, 1.0, noise});
      } catch (const FitError&) {
        continue;
      }
      if (!best || gp.lml_ > best->lml_) best = std::move(gp);
    }
  }
  if (!best) throw FitError("GP fit failed for every hyperparameter setting");
  *this = std::move(*best);
}

std::pair<double, double> GaussianProcess::predict(std::span<const double> z) const {
  if (n_ == 0) throw FitError("GP has not been fitted");
  std::vector<double> k(n_);
  double mean = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    k[i] = kernel(x_[i], z, hyper_);
    mean += k[i] * alpha_[i];
  }
  // v = L^-1 k
  for (std::size_t i = 0; i < n_; ++i) {
    double s = k[i];
    for (std::size_t j = 0; j < i; ++j) s -= chol_[i * n_ + j] * k[j];
    k[i] = s / chol_[i * n_ + i];
  }
  double var = hyper_.signal_var;
  for (double v : k) var -= v * v;
  var = std::max(var, 0.0);
  return {mean_ + scale_ * mean, scale_ * scale_ * var};
}

double expected_improvement(double mean, double variance, double best, double xi) {
  const double imp = best - mean - xi;
  const double sd = std::sqrt(std::max(variance, 0.0));
  if (sd < 1e-12) return std::max(imp, 0.0);
  const double z = imp / sd;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return imp * cdf + sd * pdf;
}

std::vector<std::vector<double>> quasi_random_candidates(std::size_t count, std::size_t dims, std::uint64_t seed) {
  static constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
  if (dims > std::size(kPrimes)) throw ParameterError("quasi-random candidates support at most 12 dimensions");
  std::mt19937_64 rng(mix(seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> shift(dims);
  for (auto& s : shift) s = unit(rng);
  std::vector<std::vector<double>> out(count, std::vector<double>(dims));
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t d = 0; d < dims; ++d) {
      const int base = kPrimes[d];
      double f = 1.0, r = 0.0;
      for (std::size_t k = i + 1; k > 0; k /= static_cast<std::size_t>(base)) {
        f /= base;
        r += f * static_cast<double>(k % static_cast<std::size_t>(base));
      }
      const double v = r + shift[d];
      out[i][d] = v - std::floor(v);
    }
  }
  return out;
}

namespace serial {
std::vector<double> acquisition(const GaussianProcess& gp, const std::vector<std::vector<double>>& c, double best,
                                double xi) {
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto [m, v] = gp.predict(c[i]);
    out[i] = expected_improvement(m, v, best, xi);
  }
  return out;
}
}  // namespace serial

namespace parallel {
std::vector<double> acquisition(const GaussianProcess& gp, const std::vector<std::vector<double>>& c, double best,
                                double xi) {
  std::vector<double> out(c.size());
  const auto n = static_cast<long>(c.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const auto [m, v] = gp.predict(c[idx]);
    out[idx] = expected_improvement(m, v, best, xi);
  }
  return out;
}
}  // namespace parallel

BoProposal bo_step(const std::vector<std::vector<double>>& zs, std::span<const double> ys, std::size_t dims,
                   const BoOptions& options, std::uint64_t seed) {
  if (zs.size() != ys.size()) throw ParameterError("bo_step: observation count mismatch");
  BoProposal p;
  if (zs.empty()) {
    p.z.assign(dims, 0.5);
    return p;
  }
  const auto candidates = quasi_random_candidates(std::max<std::size_t>(options.candidates, 1), dims, seed);
  if (zs.size() == 1) {
    p.z = candidates.front();
    return p;
  }
  GaussianProcess gp;
  try {
    gp.fit_auto(zs, ys);
  } catch (const FitError& e) {
    std::mt19937_64 rng(mix(seed) ^ 0x5bd1e995ULL);
    p.z = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
    p.fallback = true;
    p.warning = std::string("surrogate fit failed, using a random candidate: ") + e.what();
    std::cerr << "warning: " << p.warning << '\n';
    return p;
  }
  // xi is given on the standardised scale
  const double best = *std::min_element(ys.begin(), ys.end());
  const auto ei = parallel::acquisition(gp, candidates, best, options.xi * gp.output_scale());
  const auto it = std::max_element(ei.begin(), ei.end());
  p.z = candidates[static_cast<std::size_t>(it - ei.begin())];
  return p;
}

BoTrace minimize_unit_box(const std::function<double(std::span<const double>)>& f, std::size_t dims,
                          std::size_t budget, std::uint64_t seed, const BoOptions& options) {
  if (budget < 1) throw ParameterError("budget must be at least 1");
  BoTrace t;
  for (std::size_t i = 0; i < budget; ++i) {
    auto next = bo_step(t.z, t.y, dims, options, mix(seed + i));
    t.y.push_back(f(next.z));
    t.z.push_back(std::move(next.z));
    if (t.y.back() < t.y[t.best_index]) t.best_index = t.y.size() - 1;
  }
  return t;
}

std::uint64_t evaluation_seed(std::uint64_t run_seed, std::size_t iteration) {
  return mix(mix(run_seed) ^ (0xa5a5a5a5ULL + iteration));
}

OptimizeResult optimize(const OptimizeConfig& c) {
  if (c.budget < 1) throw ParameterError("budget must be at least 1");
  if (c.trials_per_eval < 1) throw ParameterError("trials_per_eval must be at least 1");
  OptimizeResult r;
  std::vector<std::vector<double>> zs;
  std::vector<double> ys;
  for (std::size_t i = 0; i < c.budget; ++i) {
    auto proposal = bo_step(zs, ys, kDesignDims, c.bo, mix(c.seed + 7919 * i));
    const auto params = params_from_unit(proposal.z);
    SimulatedUser user = c.user;
    user.seed = evaluation_seed(c.seed, i);
    const double value = evaluate_design(params, user, c.difficulty_px_s, c.trials_per_eval);
    zs.push_back(params_to_unit(params));
    ys.push_back(value);
    if (i == 0 || value < r.best_mean_asynchrony_ms) {
      r.best = params;
      r.best_mean_asynchrony_ms = value;
    }
    r.history.push_back({i, params, value, r.best_mean_asynchrony_ms, user.seed, proposal.fallback});
  }
  return r;
}

ButtonParams random_params(std::uint64_t seed) {
  std::mt19937_64 rng(mix(seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> z(kDesignDims);
  for (auto& v : z) v = unit(rng);
  return params_from_unit(z);
}

json optimize_config_to_json(const OptimizeConfig& c) {
  const auto& u = c.user;
  return {{"budget", c.budget},
          {"trials_per_eval", c.trials_per_eval},
          {"difficulty", c.difficulty_px_s},
          {"seed", c.seed},
          {"user",
           {{"base_asynchrony_ms", u.base_asynchrony_ms},
            {"haptic_gain_ms", u.haptic_gain_ms},
            {"motor_noise_sigma_ms", u.motor_noise_sigma_ms},
            {"difficulty_slope", u.difficulty_slope},
            {"w_slope", u.w_slope},
            {"w_proximity", u.w_proximity},
            {"slope_scale", u.slope_scale},
            {"slope_window_mm", u.slope_window_mm},
            {"proximity_scale_mm", u.proximity_scale_mm},
            {"seed", u.seed}}},
          {"bo",
           {{"kernel", c.bo.kernel},
            {"acquisition", c.bo.acquisition},
            {"candidates", c.bo.candidates},
            {"xi", c.bo.xi}}}};
}

OptimizeConfig optimize_config_from_json(const json& j) {
  OptimizeConfig c;
  try {
    c.budget = j.value("budget", c.budget);
    c.trials_per_eval = j.value("trials_per_eval", c.trials_per_eval);
    if (j.contains("difficulty")) {
      const auto& d = j.at("difficulty");
      if (d.is_string()) {
        const auto s = d.get<std::string>();
        if (s == "easy") c.difficulty_px_s = kEasyDifficulty;
        else if (s == "difficult") c.difficulty_px_s = kDifficultDifficulty;
        else throw ValidationError("difficulty must be 'easy', 'difficult' or a speed in px/s");
      } else {
        c.difficulty_px_s = d.get<double>();
      }
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("user")) {
      const auto& u = j.at("user");
      auto& o = c.user;
      o.base_asynchrony_ms = u.value("base_asynchrony_ms", o.base_asynchrony_ms);
      o.haptic_gain_ms = u.value("haptic_gain_ms", o.haptic_gain_ms);
      o.motor_noise_sigma_ms = u.value("motor_noise_sigma_ms", o.motor_noise_sigma_ms);
      o.difficulty_slope = u.value("difficulty_slope", o.difficulty_slope);
      o.w_slope = u.value("w_slope", o.w_slope);
      o.w_proximity = u.value("w_proximity", o.w_proximity);
      o.slope_scale = u.value("slope_scale", o.slope_scale);
      o.slope_window_mm = u.value("slope_window_mm", o.slope_window_mm);
      o.proximity_scale_mm = u.value("proximity_scale_mm", o.proximity_scale_mm);
      o.seed = u.value("seed", o.seed);
    }
    if (j.contains("bo")) {
      const auto& b = j.at("bo");
      c.bo.kernel = b.value("kernel", c.bo.kernel);
      c.bo.acquisition = b.value("acquisition", c.bo.acquisition);
      c.bo.candidates = b.value("candidates", c.bo.candidates);
      c.bo.xi = b.value("xi", c.bo.xi);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("optimize config: ") + e.what());
  }
  if (c.budget < 1 || c.trials_per_eval < 1) throw ValidationError("budget and trials_per_eval must be at least 1");
  if (c.bo.kernel != "squared_exponential") throw ValidationError("unsupported kernel '" + c.bo.kernel + "'");
  if (c.bo.acquisition != "expected_improvement") {
    throw ValidationError("unsupported acquisition '" + c.bo.acquisition + "'");
  }
  if (c.bo.candidates < 1) throw ValidationError("bo.candidates must be at least 1");
  if (!(c.user.slope_scale > 0.0 && c.user.proximity_scale_mm > 0.0)) {
    throw ValidationError("user scales must be positive");
  }
  return c;
}

json history_entry_to_json(const HistoryEntry& e) {
  return {{"iteration", e.iteration},
          {"params", params_to_json(e.params)},
          {"mean_asynchrony_ms", e.mean_asynchrony_ms},
          {"incumbent_ms", e.incumbent_ms},
          {"eval_seed", e.eval_seed},
          {"fallback", e.fallback}};
}

}  // namespace fdvv
