#include "fdvv/grid.hpp"

#include <algorithm>
#include <cmath>

#include "fdvv/error.hpp"

namespace fdvv {

std::size_t bin_count(double travel_range_mm) {
  if (!(travel_range_mm > 0.0)) throw ParameterError("travel range must be positive");
  return static_cast<std::size_t>(std::ceil(travel_range_mm / kGridStepMm - 1e-9));
}

std::size_t bin_index(double displacement_mm, std::size_t bins) {
  if (bins == 0) return 0;
  if (!(displacement_mm > 0.0)) return 0;
  const double pos = std::floor(displacement_mm / kGridStepMm + 1e-9);
  if (pos >= static_cast<double>(bins - 1)) return bins - 1;
  return static_cast<std::size_t>(pos);
}

GridResult grid_samples(std::span<const BinnedSample> samples, std::size_t bins) {
  if (samples.empty()) throw ValidationError("cannot grid an empty sample set");
  GridResult out;
  out.values.assign(bins, 0.0);
  out.counts.assign(bins, 0);
  std::vector<double> disp_sum(bins, 0.0);
  for (const auto& s : samples) {
    const auto i = bin_index(s.displacement_mm, bins);
    out.values[i] += s.value;
    disp_sum[i] += s.displacement_mm;
    ++out.counts[i];
  }

  std::vector<std::size_t> filled;
  for (std::size_t i = 0; i < bins; ++i) {
    if (out.counts[i] == 0) continue;
    const auto c = static_cast<double>(out.counts[i]);
    out.values[i] /= c;
    disp_sum[i] /= c;
    filled.push_back(i);
  }

  std::size_t next = 0;  // index into `filled` of the first filled bin at or after i
  for (std::size_t i = 0; i < bins; ++i) {
    while (next < filled.size() && filled[next] < i) ++next;
    if (out.counts[i] != 0) continue;
    if (next == 0) {
      out.values[i] = out.values[filled.front()];
    } else if (next == filled.size()) {
      out.values[i] = out.values[filled.back()];
    } else {
      const auto lo = filled[next - 1];
      const auto hi = filled[next];
      const double x0 = disp_sum[lo];
      const double x1 = disp_sum[hi];
      const double x = bin_center(i);
      double w = (x1 > x0) ? (x - x0) / (x1 - x0) : 0.5;
      w = std::clamp(w, 0.0, 1.0);
      out.values[i] = (1.0 - w) * out.values[lo] + w * out.values[hi];
    }
  }
  return out;
}

double stable_mean(std::vector<double> values) {
  if (values.empty()) throw ValidationError("mean of an empty set");
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace fdvv
