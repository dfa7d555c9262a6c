#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fdvv {

// Displacement resolution shared by capture binning, actuation tables and the renderer.
inline constexpr double kGridStepMm = 0.05;

std::size_t bin_count(double travel_range_mm);

// Bin i covers [i*step, (i+1)*step). Values below 0 land in bin 0, values past the
// end land in the last bin.
std::size_t bin_index(double displacement_mm, std::size_t bins);

inline double bin_center(std::size_t i) { return (static_cast<double>(i) + 0.5) * kGridStepMm; }

struct BinnedSample {
  double displacement_mm;
  double value;
};

struct GridResult {
  std::vector<double> values;
  std::vector<std::size_t> counts;  // raw samples per bin; 0 means the value was interpolated
};

// Per-bin mean of the samples. Empty bins are filled by linear interpolation over
// displacement between the neighbouring filled bins (their mean displacement), and
// held flat past the outermost filled bin. Throws ValidationError if no sample is given.
GridResult grid_samples(std::span<const BinnedSample> samples, std::size_t bins);

// Order-independent mean: the values are sorted before summation so any permutation
// of the input yields a bit-identical result.
double stable_mean(std::vector<double> values);

}  // namespace fdvv
