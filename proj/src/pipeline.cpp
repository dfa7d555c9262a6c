#include "fdvv/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "fdvv/error.hpp"
#include "fdvv/grid.hpp"

namespace fdvv {

using nlohmann::json;

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> sound_window(const SyncedTrace& trace, double t_on, const IngestOptions& o) {
  std::vector<double> w;
  for (const auto& s : trace.samples) {
    if (s.t_ms >= t_on - o.vibration_window_before_ms && s.t_ms <= t_on + o.vibration_window_after_ms) {
      w.push_back(s.sound);
    }
  }
  return w;
}

}  // namespace

IngestResult ingest_captures(std::span<const CaptureSession> captures, const IngestOptions& o) {
  if (captures.empty()) throw ValidationError("no captures given");
  IngestResult r;
  r.button_id = captures.front().meta.button_id;
  r.travel_range_mm = captures.front().meta.travel_range_mm;
  if (!(r.travel_range_mm > 0.0)) throw ValidationError("capture meta.travel_range_mm must be positive");

  std::vector<double> onsets;
  std::vector<std::pair<double, const SyncedTrace*>> onset_times;
  std::vector<SyncedTrace> filtered;
  filtered.reserve(captures.size());
  std::vector<std::vector<PressSegment>> all_segments;

  for (const auto& c : captures) {
    validate_capture(c);
    if (c.meta.button_id != r.button_id) throw ValidationError("captures belong to different buttons");
    if (std::abs(c.meta.travel_range_mm - r.travel_range_mm) > 1e-9) {
      throw ValidationError("captures disagree on the travel range");
    }
    const double v = c.meta.nominal_velocity_mm_s;
    if (!(v > 0.0)) throw ValidationError("capture meta.nominal_velocity_mm_s must be positive");
    if (r.velocities.count(v)) throw ValidationError("two captures share nominal velocity " + std::to_string(v));
    filtered.push_back(filter_trace(synchronize(c), o.sigma_filter_mm, o.sigma_filter_mm));
    all_segments.push_back(segment_and_grid(filtered.back(), r.travel_range_mm, v, o.segments));

    const auto& segs = all_segments.back();
    VelocityPresses vp;
    vp.presses = segs.size();
    vp.complete = static_cast<std::size_t>(std::count_if(segs.begin(), segs.end(), [](auto& s) { return s.complete; }));
    vp.averaged = average_presses(segs, o.sigma_average_mm);
    r.velocities.emplace(v, std::move(vp));
  }

  const auto bins = bin_count(r.travel_range_mm);
  for (std::size_t ci = 0; ci < all_segments.size(); ++ci) {
    for (const auto& seg : all_segments[ci]) {
      if (!seg.complete) continue;
      if (const auto on = detect_onset(seg.sound, o.onset)) {
        onsets.push_back(*on);
        onset_times.emplace_back(seg.time_ms[bin_index(*on, bins)], &filtered[ci]);
      }
    }
  }
  if (!onsets.empty()) {
    r.onset_mm = median_of(onsets);
    std::vector<double> freqs, durations;
    for (const auto& [t_on, trace] : onset_times) {
      try {
        const auto f = extract_features(sound_window(*trace, t_on, o), 1000.0);
        freqs.push_back(f.frequency_hz);
        durations.push_back(f.duration_ms);
      } catch (const FeatureError&) {
      }
    }
    if (!freqs.empty()) r.features = VibrationFeatures{median_of(durations), median_of(freqs)};
  }
  return r;
}

json ingest_to_json(const IngestResult& r) {
  json velocities = json::array();
  for (const auto& [v, vp] : r.velocities) {
    velocities.push_back({{"velocity_mm_s", v},
                          {"presses", vp.presses},
                          {"complete", vp.complete},
                          {"max_displacement_mm", vp.averaged.max_displacement_mm},
                          {"force_cN", vp.averaged.force_cN},
                          {"sound", vp.averaged.sound}});
  }
  json j = {{"button_id", r.button_id},
            {"travel_range_mm", r.travel_range_mm},
            {"grid_mm", kGridStepMm},
            {"velocities", velocities},
            {"vibration", nullptr}};
  if (r.onset_mm) {
    j["vibration"] = {{"onset_mm", *r.onset_mm}};
    if (r.features) {
      j["vibration"]["frequency_hz"] = r.features->frequency_hz;
      j["vibration"]["duration_ms"] = r.features->duration_ms;
    }
  }
  return j;
}

IngestResult ingest_from_json(const json& j) {
  IngestResult r;
  try {
    r.button_id = j.at("button_id").get<std::string>();
    r.travel_range_mm = j.at("travel_range_mm").get<double>();
    const auto bins = bin_count(r.travel_range_mm);
    for (const auto& e : j.at("velocities")) {
      VelocityPresses vp;
      const double v = e.at("velocity_mm_s").get<double>();
      vp.presses = e.at("presses").get<std::size_t>();
      vp.complete = e.at("complete").get<std::size_t>();
      auto& seg = vp.averaged;
      seg.velocity_nominal_mm_s = v;
      seg.travel_range_mm = r.travel_range_mm;
      seg.complete = true;
      seg.max_displacement_mm = e.value("max_displacement_mm", r.travel_range_mm);
      seg.force_cN = e.at("force_cN").get<std::vector<double>>();
      seg.sound = e.value("sound", std::vector<double>(seg.force_cN.size(), 0.0));
      if (seg.force_cN.size() != bins || seg.sound.size() != bins) {
        throw ValidationError("presses file: velocity " + std::to_string(v) + " does not match the 0.05 mm grid");
      }
      r.velocities.emplace(v, std::move(vp));
    }
    const auto& vib = j.at("vibration");
    if (!vib.is_null()) {
      r.onset_mm = vib.at("onset_mm").get<double>();
      if (vib.contains("frequency_hz")) {
        r.features = VibrationFeatures{vib.at("duration_ms").get<double>(), vib.at("frequency_hz").get<double>()};
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("presses file: ") + e.what());
  }
  if (r.velocities.empty()) throw ValidationError("presses file has no velocities");
  return r;
}

BuiltModel fit_ingested(const IngestResult& r, std::optional<double> activation, std::size_t k_min,
                        std::size_t k_max, double penalty) {
  ModelAnnotations a;
  a.button_id = r.button_id;
  a.activation_point_mm = activation.value_or(0.5 * r.travel_range_mm);
  a.vibration.onset_mm = r.onset_mm.value_or(a.activation_point_mm);
  if (r.features) {
    a.vibration.frequency_hz = r.features->frequency_hz;
    a.vibration.duration_ms = r.features->duration_ms;
  }
  a.k_min = k_min;
  a.k_max = k_max;
  a.penalty = penalty;
  std::map<double, PressSegment> per_velocity;
  for (const auto& [v, vp] : r.velocities) per_velocity.emplace(v, vp.averaged);
  return build_model(per_velocity, a);
}

}  // namespace fdvv
