#include "fdvv/vibration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "fdvv/error.hpp"
#include "fdvv/grid.hpp"

namespace fdvv {

void validate_vibration(const VibrationDescriptor& v, double travel_range_mm) {
  if (!(v.onset_mm > 0.0 && v.onset_mm < travel_range_mm)) {
    throw ValidationError("vibration.onset_mm must lie strictly inside the travel range");
  }
  if (!(v.duration_ms > 0.0)) throw ValidationError("vibration.duration_ms must be positive");
  if (!(v.frequency_hz >= 50.0 && v.frequency_hz <= 20000.0)) {
    throw ValidationError("vibration.frequency_hz must lie in [50, 20000]");
  }
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::optional<double> detect_onset(std::span<const double> sound, const OnsetOptions& options) {
  const auto n = sound.size();
  if (n == 0) return std::nullopt;
  const auto skip = static_cast<std::size_t>(std::floor(options.excluded_fraction * static_cast<double>(n)));
  if (2 * skip >= n) return std::nullopt;
  const std::vector<double> masked(sound.begin() + static_cast<std::ptrdiff_t>(skip),
                                   sound.end() - static_cast<std::ptrdiff_t>(skip));
  const double base = median(masked);
  std::vector<double> dev(masked.size());
  for (std::size_t i = 0; i < masked.size(); ++i) dev[i] = std::abs(masked[i] - base);
  const double sigma = 1.4826 * median(dev);
  const double limit = options.threshold_sigmas * sigma;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (dev[i] > limit) return bin_center(skip + i);
  }
  return std::nullopt;
}

VibrationFeatures extract_features(std::span<const double> window, double sample_rate_hz) {
  if (!(sample_rate_hz > 0.0)) throw ParameterError("sample rate must be positive");
  if (window.size() < 3) throw FeatureError("vibration window is too short");
  const double base = median(std::vector<double>(window.begin(), window.end()));
  std::vector<double> x(window.size());
  double peak = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = window[i] - base;
    peak = std::max(peak, std::abs(x[i]));
  }
  if (!(peak > 0.0)) throw FeatureError("vibration window carries no oscillation");

  const double level = 0.1 * peak;
  std::size_t first = x.size(), last = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(x[i]) > level) {
      first = std::min(first, i);
      last = i;
    }
  }

  std::vector<double> crossings;
  for (std::size_t i = first; i < last; ++i) {
    const double a = x[i];
    const double b = x[i + 1];
    if ((a < 0.0 && b >= 0.0) || (a >= 0.0 && b < 0.0)) {
      crossings.push_back(static_cast<double>(i) + a / (a - b));
    }
  }
  if (crossings.size() < 2) throw FeatureError("vibration window is shorter than one period");

  const double span_s = (crossings.back() - crossings.front()) / sample_rate_hz;
  VibrationFeatures f{};
  f.frequency_hz = static_cast<double>(crossings.size() - 1) / (2.0 * span_s);
  f.duration_ms = 1000.0 * static_cast<double>(last - first + 1) / sample_rate_hz;
  return f;
}

double WaveTemplate::envelope(double t_ms) const {
  if (t_ms < 0.0 || t_ms > duration_ms) return 0.0;
  return amplitude_start + (amplitude_end - amplitude_start) * (t_ms / duration_ms);
}

double WaveTemplate::sample(double t_ms) const {
  return envelope(t_ms) * std::sin(2.0 * std::numbers::pi * frequency_hz * t_ms / 1000.0);
}

std::vector<WaveTemplate> generate_templates(const VibrationFeatures& features) {
  if (!(features.duration_ms > 0.0) || !(features.frequency_hz > 0.0)) {
    throw ParameterError("template generation needs positive duration and frequency");
  }
  std::vector<WaveTemplate> bank;
  for (double scale : {1.0, 0.8, 1.2}) {
    const double f = std::clamp(features.frequency_hz * scale, 50.0, 20000.0);
    for (double end : {0.0, 0.3, 0.6}) {
      char id[64];
      std::snprintf(id, sizeof id, "f%.1f_e%.1f", f, end);
      bank.push_back({id, f, features.duration_ms, kMaxDriveVolts, end});
    }
  }
  return bank;
}

std::vector<double> synthesize(const WaveTemplate& tpl, double sample_rate_hz) {
  if (!(sample_rate_hz >= 2.0 * tpl.frequency_hz)) {
    throw ParameterError("sample rate violates Nyquist for the template frequency");
  }
  const auto count = static_cast<std::size_t>(std::floor(tpl.duration_ms * sample_rate_hz / 1000.0 + 1e-9)) + 1;
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = tpl.sample(1000.0 * static_cast<double>(i) / sample_rate_hz);
  }
  return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_tag(std::vector<std::uint8_t>& b, const char* tag) { b.insert(b.end(), tag, tag + 4); }

}  // namespace

std::vector<std::uint8_t> encode_wav(std::span<const double> samples, std::uint32_t rate, double full_scale) {
  if (!(full_scale > 0.0)) throw ParameterError("full-scale voltage must be positive");
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<std::uint8_t> b;
  b.reserve(44 + data_bytes);
  put_tag(b, "RIFF");
  put_u32(b, 36 + data_bytes);
  put_tag(b, "WAVE");
  put_tag(b, "fmt ");
  put_u32(b, 16);
  put_u16(b, 1);  // PCM
  put_u16(b, 1);  // mono
  put_u32(b, rate);
  put_u32(b, rate * 2);
  put_u16(b, 2);
  put_u16(b, 16);
  put_tag(b, "data");
  put_u32(b, data_bytes);
  for (double s : samples) {
    const double q = std::round(std::clamp(s / full_scale, -1.0, 1.0) * 32767.0);
    put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return b;
}

void RatingStore::rate(const std::string& button_id, double velocity, const std::string& template_id, int score) {
  if (score < 1 || score > 7) throw ValidationError("rating score must be an integer in 1..7");
  if (template_id.empty()) throw ValidationError("template_id must not be empty");
  std::lock_guard lock(mutex_);
  ratings_[{button_id, velocity, template_id}] = score;
}

std::optional<std::string> RatingStore::best_template(const std::string& button_id,
                                                      std::optional<double> velocity,
                                                      std::span<const WaveTemplate> bank,
                                                      const VibrationFeatures& measured) const {
  std::map<std::string, std::pair<double, int>> pooled;  // template -> (sum, count)
  {
    std::lock_guard lock(mutex_);
    for (const auto& [key, score] : ratings_) {
      const auto& [button, v, tpl] = key;
      if (button != button_id) continue;
      if (velocity && v != *velocity) continue;
      auto& acc = pooled[tpl];
      acc.first += score;
      acc.second += 1;
    }
  }
  std::optional<std::string> best;
  double best_score = -1.0;
  double best_distance = 0.0;
  for (const auto& tpl : bank) {
    const auto it = pooled.find(tpl.id);
    if (it == pooled.end()) continue;
    const double score = it->second.first / it->second.second;
    const double distance = std::abs(tpl.frequency_hz - measured.frequency_hz) / measured.frequency_hz +
                            std::abs(tpl.duration_ms - measured.duration_ms) / measured.duration_ms;
    if (!best || score > best_score || (score == best_score && distance < best_distance)) {
      best = tpl.id;
      best_score = score;
      best_distance = distance;
    }
  }
  return best;
}

std::vector<RatingStore::Entry> RatingStore::entries() const {
  std::lock_guard lock(mutex_);
  std::vector<Entry> out;
  for (const auto& [key, score] : ratings_) {
    const auto& [button, v, tpl] = key;
    out.push_back({button, v, tpl, score});
  }
  return out;
}

void RatingStore::load(std::span<const Entry> entries) {
  for (const auto& e : entries) rate(e.button_id, e.velocity_mm_s, e.template_id, e.score);
}

}  // namespace fdvv
