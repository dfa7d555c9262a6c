#include "fdvv/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "fdvv/error.hpp"
#include "fdvv/grid.hpp"

namespace fdvv {
namespace {

void check_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("gaussian sigma must be positive");
}

// Output sample i for every edge mode. Pure in (signal, kernel, i).
double smooth_at(std::span<const double> x, std::span<const double> k, std::ptrdiff_t i, EdgeMode mode) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);

  if (mode == EdgeMode::kPeriodic) {
    double acc = 0.0;
    for (std::ptrdiff_t o = -r; o <= r; ++o) {
      const auto j = ((i + o) % n + n) % n;
      acc += k[o + r] * x[j];
    }
    return acc;
  }

  const auto lo = std::max<std::ptrdiff_t>(0, i - r);
  const auto hi = std::min<std::ptrdiff_t>(n - 1, i + r);
  if (lo == i - r && hi == i + r) {
    double acc = 0.0;
    for (std::ptrdiff_t o = -r; o <= r; ++o) acc += k[o + r] * x[i + o];
    return acc;
  }

  double s0 = 0.0, s1 = 0.0, s2 = 0.0, t0 = 0.0, t1 = 0.0;
  for (auto j = lo; j <= hi; ++j) {
    const double w = k[j - i + r];
    const double dx = static_cast<double>(j - i);
    s0 += w;
    s1 += w * dx;
    s2 += w * dx * dx;
    t0 += w * x[j];
    t1 += w * dx * x[j];
  }
  if (mode == EdgeMode::kRenormalize) return t0 / s0;
  const double det = s0 * s2 - s1 * s1;
  if (std::abs(det) <= 1e-14 * s0 * s2) return t0 / s0;
  return (s2 * t0 - s1 * t1) / det;
}

}  // namespace

std::vector<double> gaussian_kernel(double sigma_samples) {
  check_sigma(sigma_samples);
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma_samples));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (std::ptrdiff_t o = -r; o <= r; ++o) {
    const double z = static_cast<double>(o) / sigma_samples;
    k[o + r] = std::exp(-0.5 * z * z);
    sum += k[o + r];
  }
  for (auto& w : k) w /= sum;
  return k;
}

namespace serial {

std::vector<double> gaussian_smooth(std::span<const double> signal, double sigma_samples, EdgeMode mode) {
  const auto k = gaussian_kernel(sigma_samples);
  const auto n = static_cast<std::ptrdiff_t>(signal.size());
  std::vector<double> out(signal.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = smooth_at(signal, k, i, mode);
  return out;
}

}  // namespace serial

namespace parallel {

std::vector<double> gaussian_smooth(std::span<const double> signal, double sigma_samples, EdgeMode mode) {
  const auto k = gaussian_kernel(sigma_samples);
  const auto n = static_cast<std::ptrdiff_t>(signal.size());
  std::vector<double> out(signal.size());
#pragma omp parallel for schedule(static) if (n > 2048)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = smooth_at(signal, k, i, mode);
  return out;
}

}  // namespace parallel

std::vector<double> smooth_over_grid(std::span<const double> per_bin, double sigma_mm) {
  check_sigma(sigma_mm);
  return gaussian_smooth(per_bin, sigma_mm / kGridStepMm);
}

}  // namespace fdvv
