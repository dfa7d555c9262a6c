#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace fdvv {

inline constexpr double kMaxDriveVolts = 2.43;

struct VibrationDescriptor {
  double onset_mm = 0.0;
  double duration_ms = 16.0;
  double frequency_hz = 239.0;
  std::string template_id = "default";

  friend bool operator==(const VibrationDescriptor&, const VibrationDescriptor&) = default;
};

// Throws ValidationError when the descriptor breaks its invariants for the given travel.
void validate_vibration(const VibrationDescriptor& v, double travel_range_mm);

struct OnsetOptions {
  double threshold_sigmas = 5.0;
  double excluded_fraction = 0.15;  // ignored at each end of the travel
};

// Onset displacement (bin centre) of the first sample in the central part of the
// press whose deviation from the baseline exceeds threshold * sigma. Baseline and
// sigma are the median and scaled MAD of the masked region.
std::optional<double> detect_onset(std::span<const double> sound_per_bin, const OnsetOptions& options = {});

struct VibrationFeatures {
  double duration_ms;
  double frequency_hz;
};

// Duration is the span where the rectified signal exceeds 10 % of its peak;
// frequency is the mean zero-crossing rate over that span, with crossing instants
// located by linear interpolation. Throws FeatureError with fewer than two crossings.
VibrationFeatures extract_features(std::span<const double> window, double sample_rate_hz);

struct WaveTemplate {
  std::string id;
  double frequency_hz;
  double duration_ms;
  double amplitude_start;  // volts
  double amplitude_end;    // volts

  // Linear-decay envelope A(t) for t in [0, duration].
  double envelope(double t_ms) const;
  double sample(double t_ms) const;
};

std::vector<WaveTemplate> generate_templates(const VibrationFeatures& features);

// floor(duration * rate) + 1 samples at t = i / rate, i.e. every sample instant in
// [0, duration]. Throws ParameterError when rate < 2 * frequency.
std::vector<double> synthesize(const WaveTemplate& tpl, double sample_rate_hz);

// 16-bit PCM mono RIFF/WAVE; `full_scale_volts` maps to 32767.
std::vector<std::uint8_t> encode_wav(std::span<const double> samples, std::uint32_t sample_rate_hz,
                                     double full_scale_volts = kMaxDriveVolts);

// Ratings in 1..7 per (button, velocity, template).
class RatingStore {
 public:
  void rate(const std::string& button_id, double velocity_mm_s, const std::string& template_id, int score);

  // Argmax-rated template for the button (all velocities pooled when velocity is
  // absent). Ties go to the template closest to the measured features.
  std::optional<std::string> best_template(const std::string& button_id, std::optional<double> velocity_mm_s,
                                           std::span<const WaveTemplate> bank,
                                           const VibrationFeatures& measured) const;

  struct Entry {
    std::string button_id;
    double velocity_mm_s;
    std::string template_id;
    int score;
  };
  std::vector<Entry> entries() const;
  void load(std::span<const Entry> entries);

 private:
  mutable std::mutex mutex_;
  std::map<std::tuple<std::string, double, std::string>, int> ratings_;
};

}  // namespace fdvv
