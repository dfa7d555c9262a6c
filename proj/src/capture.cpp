#include "fdvv/capture.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "fdvv/error.hpp"
#include "fdvv/grid.hpp"
#include "fdvv/smoothing.hpp"
#include "json.hpp"

namespace fdvv {

using nlohmann::json;

namespace {

double finite_number(const json& j, const std::string& where) {
  if (!j.is_number()) throw ParseError(where + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ParseError(where + ": value is not finite");
  return v;
}

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  return obj.at(key);
}

std::string record(const char* stream, std::size_t i) {
  return std::string(stream) + "[" + std::to_string(i) + "]";
}

}  // namespace

CaptureSession parse_capture(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("capture file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("capture file: top level must be an object");

  CaptureSession s;
  const auto& meta = require(doc, "meta", "capture");
  const auto& id = require(meta, "button_id", "meta");
  if (!id.is_string()) throw ParseError("meta.button_id: expected a string");
  s.meta.button_id = id.get<std::string>();
  s.meta.nominal_velocity_mm_s =
      finite_number(require(meta, "nominal_velocity_mm_s", "meta"), "meta.nominal_velocity_mm_s");
  s.meta.travel_range_mm = finite_number(require(meta, "travel_range_mm", "meta"), "meta.travel_range_mm");

  const auto& mcu = require(doc, "mcu", "capture");
  if (!mcu.is_array()) throw ParseError("mcu: expected an array");
  s.mcu.reserve(mcu.size());
  for (std::size_t i = 0; i < mcu.size(); ++i) {
    const auto& row = mcu[i];
    const auto where = record("mcu", i);
    if (!row.is_array() || row.size() != 3) throw ParseError(where + ": expected [t_ms, force_cN, sound]");
    s.mcu.push_back({finite_number(row[0], where), finite_number(row[1], where), finite_number(row[2], where)});
  }

  const auto& mocap = require(doc, "mocap", "capture");
  if (!mocap.is_array()) throw ParseError("mocap: expected an array");
  s.mocap.reserve(mocap.size());
  for (std::size_t i = 0; i < mocap.size(); ++i) {
    const auto& row = mocap[i];
    const auto where = record("mocap", i);
    if (!row.is_array() || row.size() != 7) throw ParseError(where + ": expected [t_ms, x1, y1, z1, x2, y2, z2]");
    MocapSample m{};
    m.t_ms = finite_number(row[0], where);
    for (int a = 0; a < 3; ++a) {
      m.marker1[a] = finite_number(row[1 + a], where);
      m.marker2[a] = finite_number(row[4 + a], where);
    }
    s.mocap.push_back(m);
  }

  const auto& sync = require(doc, "sync", "capture");
  s.sync.mcu_t_ms = finite_number(require(sync, "mcu_t_ms", "sync"), "sync.mcu_t_ms");
  s.sync.mocap_t_ms = finite_number(require(sync, "mocap_t_ms", "sync"), "sync.mocap_t_ms");

  validate_capture(s);
  return s;
}

void validate_capture(const CaptureSession& s) {
  if (s.meta.button_id.empty()) throw ValidationError("meta.button_id must not be empty");
  if (!(s.meta.nominal_velocity_mm_s > 0.0)) throw ValidationError("meta.nominal_velocity_mm_s must be positive");
  if (!(s.meta.travel_range_mm > 0.0)) throw ValidationError("meta.travel_range_mm must be positive");
  for (std::size_t i = 1; i < s.mcu.size(); ++i) {
    if (!(s.mcu[i].t_ms > s.mcu[i - 1].t_ms)) {
      throw ValidationError(record("mcu", i) + ": timestamps must be strictly increasing");
    }
  }
  for (std::size_t i = 1; i < s.mocap.size(); ++i) {
    if (!(s.mocap[i].t_ms > s.mocap[i - 1].t_ms)) {
      throw ValidationError(record("mocap", i) + ": timestamps must be strictly increasing");
    }
  }
}

std::string serialize_capture(const CaptureSession& s) {
  json doc;
  doc["meta"] = {{"button_id", s.meta.button_id},
                 {"nominal_velocity_mm_s", s.meta.nominal_velocity_mm_s},
                 {"travel_range_mm", s.meta.travel_range_mm}};
  json mcu = json::array();
  for (const auto& m : s.mcu) mcu.push_back({m.t_ms, m.force_cN, m.sound});
  json mocap = json::array();
  for (const auto& m : s.mocap) {
    mocap.push_back({m.t_ms, m.marker1[0], m.marker1[1], m.marker1[2], m.marker2[0], m.marker2[1], m.marker2[2]});
  }
  doc["mcu"] = std::move(mcu);
  doc["mocap"] = std::move(mocap);
  doc["sync"] = {{"mcu_t_ms", s.sync.mcu_t_ms}, {"mocap_t_ms", s.sync.mocap_t_ms}};
  return doc.dump();
}

double interpolate_linear(std::span<const double> times, std::span<const double> values, double t) {
  if (times.empty() || times.size() != values.size()) throw ValidationError("interpolation needs matching samples");
  if (t <= times.front()) return values.front();
  if (t >= times.back()) return values.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const auto hi = static_cast<std::size_t>(it - times.begin());
  const auto lo = hi - 1;
  const double w = (t - times[lo]) / (times[hi] - times[lo]);
  return values[lo] + w * (values[hi] - values[lo]);
}

namespace {

double estimate_rest_depth(std::vector<double> depths) {
  std::sort(depths.begin(), depths.end());
  const auto top = depths[static_cast<std::size_t>(0.95 * static_cast<double>(depths.size() - 1))];
  std::vector<double> band;
  for (double z : depths) {
    if (z >= top - 0.1) band.push_back(z);
  }
  return band[band.size() / 2];
}

}  // namespace

SyncedTrace synchronize(const CaptureSession& s, const SyncOptions& options) {
  if (s.mcu.empty() || s.mocap.empty()) throw SyncError("both streams must contain samples");
  if (s.sync.mcu_t_ms < s.mcu.front().t_ms || s.sync.mcu_t_ms > s.mcu.back().t_ms) {
    throw SyncError("sync keyframe mcu_t_ms lies outside the microcontroller stream");
  }
  if (s.sync.mocap_t_ms < s.mocap.front().t_ms || s.sync.mocap_t_ms > s.mocap.back().t_ms) {
    throw SyncError("sync keyframe mocap_t_ms lies outside the motion stream");
  }
  const int axis = options.depth_axis;
  if (axis < 0 || axis > 2) throw ParameterError("depth axis must be 0, 1 or 2");

  const double shift = s.sync.mcu_t_ms - s.sync.mocap_t_ms;
  std::vector<double> mocap_t(s.mocap.size());
  std::vector<double> depth(s.mocap.size());
  for (std::size_t i = 0; i < s.mocap.size(); ++i) {
    mocap_t[i] = s.mocap[i].t_ms + shift;
    depth[i] = 0.5 * (s.mocap[i].marker1[axis] + s.mocap[i].marker2[axis]);
  }

  SyncedTrace trace;
  trace.origin_depth_mm = options.rest_depth_mm.value_or(estimate_rest_depth(depth));

  std::vector<double> mcu_t(s.mcu.size()), force(s.mcu.size()), sound(s.mcu.size());
  for (std::size_t i = 0; i < s.mcu.size(); ++i) {
    mcu_t[i] = s.mcu[i].t_ms;
    force[i] = s.mcu[i].force_cN;
    sound[i] = s.mcu[i].sound;
  }

  const double begin = std::max(mcu_t.front(), mocap_t.front());
  const double end = std::min(mcu_t.back(), mocap_t.back());
  if (!(end >= begin)) throw SyncError("streams do not overlap after alignment");

  // Start on the first microcontroller timestamp inside the overlap so a uniform
  // 1 kHz input passes through unchanged.
  const auto first = std::lower_bound(mcu_t.begin(), mcu_t.end(), begin);
  const double t0 = *first;
  const auto count = static_cast<std::size_t>(std::floor(end - t0 + 1e-9)) + 1;
  trace.samples.reserve(count);
  for (std::size_t j = 0; j < count; ++j) {
    const double t = t0 + static_cast<double>(j);
    const double z = interpolate_linear(mocap_t, depth, t);
    trace.samples.push_back({t, interpolate_linear(mcu_t, force, t), interpolate_linear(mcu_t, sound, t),
                             std::max(0.0, trace.origin_depth_mm - z)});
  }
  return trace;
}

double mean_press_speed_mm_per_ms(const SyncedTrace& trace) {
  double max_d = 0.0;
  for (const auto& s : trace.samples) max_d = std::max(max_d, s.displacement_mm);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 1; i < trace.samples.size(); ++i) {
    const double d = trace.samples[i].displacement_mm;
    if (d <= 0.1 || d >= max_d - 0.1) continue;
    const double dt = trace.samples[i].t_ms - trace.samples[i - 1].t_ms;
    sum += std::abs(d - trace.samples[i - 1].displacement_mm) / dt;
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double sigma_mm_to_samples(const SyncedTrace& trace, double sigma_mm) {
  if (!(sigma_mm > 0.0)) throw ParameterError("sigma must be positive");
  const double speed = mean_press_speed_mm_per_ms(trace);
  if (!(speed > 0.0)) return 200.0;
  return std::clamp(sigma_mm / speed, 1.0, 200.0);
}

SyncedTrace filter_trace(const SyncedTrace& trace, double sigma_force_mm, double sigma_disp_mm) {
  if (!(sigma_force_mm > 0.0) || !(sigma_disp_mm > 0.0)) throw ParameterError("filter sigma must be positive");
  const double force_sigma = sigma_mm_to_samples(trace, sigma_force_mm);
  const double disp_sigma = sigma_mm_to_samples(trace, sigma_disp_mm);

  std::vector<double> force(trace.samples.size()), disp(trace.samples.size());
  for (std::size_t i = 0; i < trace.samples.size(); ++i) {
    force[i] = trace.samples[i].force_cN;
    disp[i] = trace.samples[i].displacement_mm;
  }
  const auto f = gaussian_smooth(force, force_sigma);
  const auto d = gaussian_smooth(disp, disp_sigma);

  SyncedTrace out = trace;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    out.samples[i].force_cN = f[i];
    out.samples[i].displacement_mm = std::max(0.0, d[i]);
  }
  return out;
}

std::vector<PressSegment> segment_and_grid(const SyncedTrace& trace, double travel_range_mm,
                                           double nominal_velocity_mm_s, const SegmentOptions& options) {
  const auto bins = bin_count(travel_range_mm);
  const auto& s = trace.samples;
  std::vector<PressSegment> out;

  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i].displacement_mm <= options.rest_threshold_mm) ++i;
    if (i == s.size()) break;
    std::size_t j = i;
    while (j < s.size() && s[j].displacement_mm > options.rest_threshold_mm) ++j;

    std::size_t peak = i;
    for (std::size_t k = i; k < j; ++k) {
      if (s[k].displacement_mm > s[peak].displacement_mm) peak = k;
    }
    const std::size_t first = i > 0 ? i - 1 : i;

    std::vector<BinnedSample> f, snd, t;
    for (std::size_t k = first; k <= peak; ++k) {
      f.push_back({s[k].displacement_mm, s[k].force_cN});
      snd.push_back({s[k].displacement_mm, s[k].sound});
      t.push_back({s[k].displacement_mm, s[k].t_ms});
    }

    PressSegment seg;
    seg.velocity_nominal_mm_s = nominal_velocity_mm_s;
    seg.travel_range_mm = travel_range_mm;
    seg.force_cN = grid_samples(f, bins).values;
    seg.sound = grid_samples(snd, bins).values;
    seg.time_ms = grid_samples(t, bins).values;
    seg.max_displacement_mm = s[peak].displacement_mm;
    seg.complete = seg.max_displacement_mm >= travel_range_mm - options.incomplete_margin_mm;

    if (options.grid_release) {
      std::vector<BinnedSample> r;
      const std::size_t last = std::min(j, s.size() - 1);
      for (std::size_t k = peak; k <= last; ++k) r.push_back({s[k].displacement_mm, s[k].force_cN});
      seg.release_force_cN = grid_samples(r, bins).values;
    }
    out.push_back(std::move(seg));
    i = j;
  }
  return out;
}

PressSegment average_presses(std::span<const PressSegment> segments, double sigma_smooth_mm) {
  if (segments.empty()) throw ValidationError("average_presses: no segments given");
  const double velocity = segments.front().velocity_nominal_mm_s;
  for (const auto& seg : segments) {
    if (seg.velocity_nominal_mm_s != velocity) throw ValidationError("average_presses: mixed nominal velocities");
  }

  std::vector<const PressSegment*> used;
  for (const auto& seg : segments) {
    if (seg.complete) used.push_back(&seg);
  }
  if (used.empty()) throw ValidationError("average_presses: no complete press among the segments");
  const auto bins = used.front()->bins();
  for (const auto* seg : used) {
    if (seg->bins() != bins || seg->sound.size() != bins) throw ValidationError("average_presses: grid mismatch");
  }

  PressSegment out;
  out.velocity_nominal_mm_s = velocity;
  out.travel_range_mm = used.front()->travel_range_mm;
  out.complete = true;
  std::vector<double> force(bins), sound(bins), column(used.size());
  for (std::size_t b = 0; b < bins; ++b) {
    for (std::size_t k = 0; k < used.size(); ++k) column[k] = used[k]->force_cN[b];
    force[b] = stable_mean(column);
    for (std::size_t k = 0; k < used.size(); ++k) column[k] = used[k]->sound[b];
    sound[b] = stable_mean(column);
  }
  std::vector<double> maxes;
  for (const auto* seg : used) maxes.push_back(seg->max_displacement_mm);
  out.max_displacement_mm = stable_mean(maxes);
  out.force_cN = smooth_over_grid(force, sigma_smooth_mm);
  out.sound = std::move(sound);
  return out;
}

}  // namespace fdvv
