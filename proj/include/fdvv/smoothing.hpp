#pragma once

#include <span>
#include <vector>

namespace fdvv {

enum class EdgeMode {
  // Gaussian-weighted local linear fit. Identical to plain convolution wherever the
  // kernel fits inside the signal; near the ends it keeps linear trends instead of
  // bending them towards the interior.
  kLocalLinear,
  // Truncated kernel renormalised to unit mass.
  kRenormalize,
  // Circular convolution; preserves the signal mean exactly.
  kPeriodic,
};

// Normalised Gaussian taps for offsets -r..r, r = ceil(4 sigma).
std::vector<double> gaussian_kernel(double sigma_samples);

namespace serial {
std::vector<double> gaussian_smooth(std::span<const double> signal, double sigma_samples,
                                    EdgeMode mode = EdgeMode::kLocalLinear);
}  // namespace serial

namespace parallel {
std::vector<double> gaussian_smooth(std::span<const double> signal, double sigma_samples,
                                    EdgeMode mode = EdgeMode::kLocalLinear);
}  // namespace parallel

// Dispatches to the OpenMP kernel; sigma <= 0 throws ParameterError.
inline std::vector<double> gaussian_smooth(std::span<const double> signal, double sigma_samples,
                                           EdgeMode mode = EdgeMode::kLocalLinear) {
  return parallel::gaussian_smooth(signal, sigma_samples, mode);
}

// Smoothing over the 0.05 mm displacement grid with sigma given in millimetres.
std::vector<double> smooth_over_grid(std::span<const double> per_bin, double sigma_mm);

}  // namespace fdvv
