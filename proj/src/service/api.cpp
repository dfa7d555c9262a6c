#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include "fdvv/compensation.hpp"
#include "fdvv/error.hpp"
#include "fdvv/optimizer.hpp"
#include "fdvv/service.hpp"

namespace fdvv::service {

using nlohmann::json;
namespace fs = std::filesystem;

Workspace::Workspace(fs::path root) : root_(std::move(root)) {
  for (const char* kind : {"models", "actuations", "plants", "presets"}) fs::create_directories(root_ / kind);
}

fs::path Workspace::file(const std::string& kind, const std::string& id) const {
  if (kind == "ratings") return root_ / "ratings.json";
  return root_ / kind / (id + ".json");
}

std::map<std::string, json> Workspace::load_all(const std::string& kind) const {
  std::map<std::string, json> out;
  for (const auto& entry : fs::directory_iterator(root_ / kind)) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    try {
      out.emplace(entry.path().stem().string(), json::parse(in));
    } catch (const json::exception& e) {
      throw ParseError(entry.path().string() + ": " + e.what());
    }
  }
  return out;
}

void Workspace::save(const std::string& kind, const std::string& id, const json& j) const {
  const auto path = file(kind, id);
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

std::optional<json> Workspace::load(const std::string& kind, const std::string& id) const {
  const auto path = file(kind, id);
  if (!fs::exists(path)) return std::nullopt;
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

fs::path resolve_workspace(const std::optional<std::string>& explicit_path) {
  if (explicit_path && !explicit_path->empty()) return *explicit_path;
  if (const char* env = std::getenv("FDVV_WORKSPACE"); env && *env) return env;
  return "workspace";
}

json job_to_json(const Job& j) {
  json out = {{"id", j.id}, {"kind", j.kind}, {"status", j.status}, {"progress", j.progress}};
  if (!j.result.is_null()) out["result"] = j.result;
  if (!j.error.empty()) out["error"] = j.error;
  return out;
}

JobQueue::JobQueue() : worker_([this] { run(); }) {}

JobQueue::~JobQueue() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  worker_.join();
}

std::string JobQueue::submit(std::string kind, Task task) {
  std::lock_guard lock(mu_);
  const auto id = "job-" + std::to_string(next_id_++);
  Job job;
  job.id = id;
  job.kind = std::move(kind);
  jobs_[id] = std::move(job);
  pending_.emplace_back(id, std::move(task));
  cv_.notify_all();
  return id;
}

std::optional<Job> JobQueue::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

Job JobQueue::wait(const std::string& id) const {
  std::unique_lock lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw ValidationError("unknown job " + id);
  cv_.wait(lock, [&] { return it->second.status == "done" || it->second.status == "failed"; });
  return it->second;
}

void JobQueue::run() {
  for (;;) {
    std::pair<std::string, Task> next;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !pending_.empty(); });
      if (stopping_) return;
      next = std::move(pending_.front());
      pending_.pop_front();
      jobs_[next.first].status = "running";
    }
    const auto& id = next.first;
    auto progress = [&](double p) {
      std::lock_guard lock(mu_);
      jobs_[id].progress = std::clamp(p, 0.0, 1.0);
    };
    json result;
    std::string error;
    bool ok = true;
    try {
      result = next.second(progress);
    } catch (const DivergenceError& e) {
      ok = false;
      error = e.what();
      result = {{"error_trace", e.trace()}};
    } catch (const std::exception& e) {
      ok = false;
      error = e.what();
    }
    {
      std::lock_guard lock(mu_);
      auto& job = jobs_[id];
      job.status = ok ? "done" : "failed";
      job.progress = ok ? 1.0 : job.progress;
      job.result = std::move(result);
      job.error = std::move(error);
    }
    cv_.notify_all();
  }
}

namespace {

ApiResponse error_response(int status, const std::string& message) { return {status, {{"error", message}}}; }

ApiResponse field_errors(const std::vector<std::pair<std::string, std::string>>& errors) {
  json list = json::array();
  for (const auto& [field, message] : errors) list.push_back({{"field", field}, {"message", message}});
  return {422, {{"error", "validation failed"}, {"errors", list}}};
}

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw ParseError(std::string("request body is not valid JSON: ") + e.what());
  }
}

std::vector<std::string> split_path(const std::string& target) {
  const auto path = target.substr(0, target.find('?'));
  std::vector<std::string> parts;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '/')) {
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

bool valid_id(const std::string& id) {
  static const std::regex re("[A-Za-z0-9_.-]{1,64}");
  return std::regex_match(id, re) && id != "." && id != "..";
}

json model_summary(const std::string& id, const FdvvModel& m, std::uint64_t revision) {
  json velocities = json::array();
  for (const auto& c : m.press_curves) velocities.push_back(c.velocity_mm_s);
  return {{"id", id},
          {"revision", revision},
          {"travel_range_mm", m.travel_range_mm},
          {"activation_point_mm", m.activation_point_mm},
          {"velocities", velocities}};
}

}  // namespace

PressTrajectory trajectory_from_request(const json& j, double travel) {
  if (!j.is_object()) throw ParseError("trajectory must be a JSON object");
  if (j.contains("samples")) return trajectory_from_json(j);
  try {
    const auto profile = j.value("profile", std::string("constant-velocity"));
    const double depth = j.value("depth_mm", travel + 0.3);
    if (profile == "constant-velocity") {
      auto t = constant_velocity_press(depth, j.value("velocity_mm_s", 100.0), j.value("rest_ticks", 30),
                                       j.value("hold_ticks", 60), j.value("release", true));
      return t;
    }
    if (profile == "probe") {
      auto t = constant_velocity_press(depth, j.value("velocity_mm_s", 0.5), 30, 30, false);
      t.profile = "probe";
      return t;
    }
    if (profile == "minimum-jerk") {
      return minimum_jerk_press(depth, j.value("duration_ms", 40.0), j.value("rest_ticks", 30), j.value("hold_ticks", 60));
    }
    throw ValidationError("unknown trajectory profile '" + profile + "'");
  } catch (const json::exception& e) {
    throw ParseError(std::string("trajectory: ") + e.what());
  }
}

Api::Api(fs::path workspace) : ws_(std::move(workspace)) {
  plants_["default"] = default_plant_params();
  plants_["identity"] = identity_plant_params();
  for (const auto& [id, j] : ws_.load_all("plants")) plants_[id] = plant_from_json(j);
  for (const auto& [id, j] : ws_.load_all("models")) {
    ModelEntry e;
    if (j.contains("model")) {
      e.model = model_from_json(j.at("model"));
      e.revision = j.value("revision", std::uint64_t{1});
    } else {
      e.model = model_from_json(j);
    }
    models_[id] = std::move(e);
  }
  for (const auto& [id, j] : ws_.load_all("actuations")) actuations_[id] = actuation_from_json(j);
  for (const auto& [id, j] : ws_.load_all("presets")) presets_[id] = preset_from_json(j);
  if (const auto r = ws_.load("ratings", "")) {
    std::vector<RatingStore::Entry> entries;
    for (const auto& e : *r) {
      entries.push_back({e.at("button_id").get<std::string>(), e.at("velocity_mm_s").get<double>(),
                         e.at("template_id").get<std::string>(), e.at("score").get<int>()});
    }
    ratings_.load(entries);
  }
}

ApiResponse Api::handle(const std::string& method, const std::string& target, const std::string& body) {
  const auto p = split_path(target);
  try {
    for (std::size_t i = 1; i < p.size(); ++i) {
      if (!valid_id(p[i])) return error_response(400, "invalid identifier '" + p[i] + "'");
    }
    auto allow = [&](const char* m) { return method == m; };
    if (p.size() == 1 && p[0] == "models") {
      if (allow("GET")) return list_models();
    } else if (p.size() == 2 && p[0] == "models") {
      if (allow("GET")) return get_model(p[1]);
      if (allow("PUT")) return put_model(p[1], parse_body(body));
    } else if (p.size() == 3 && p[0] == "models" && p[2] == "control-points") {
      if (allow("PUT")) return put_control_points(p[1], parse_body(body));
    } else if (p.size() == 3 && p[0] == "models" && p[2] == "compensate") {
      if (allow("POST")) return compensate(p[1], parse_body(body));
    } else if (p.size() == 2 && p[0] == "jobs") {
      if (allow("GET")) return get_job(p[1]);
    } else if (p.size() == 2 && p[0] == "actuations") {
      if (allow("GET")) return get_actuation(p[1]);
    } else if (p.size() == 1 && p[0] == "simulate") {
      if (allow("POST")) return simulate(parse_body(body));
    } else if (p.size() == 3 && p[0] == "vibration" && p[2] == "rate") {
      if (allow("POST")) return rate(p[1], parse_body(body));
    } else if (p.size() == 3 && p[0] == "vibration" && p[2] == "templates") {
      if (allow("GET")) return templates(p[1]);
    } else if (p.size() == 1 && p[0] == "optimize") {
      if (allow("POST")) return optimize(parse_body(body));
    } else if (p.size() == 1 && p[0] == "plants") {
      if (allow("GET")) return list_plants();
    } else if (p.size() == 2 && p[0] == "plants") {
      if (allow("PUT")) return put_plant(p[1], parse_body(body));
    } else if (p.size() == 1 && p[0] == "presets") {
      if (allow("GET")) return list_presets();
    } else if (p.size() == 1 && p[0] == "sessions") {
      if (allow("POST")) return create_session(parse_body(body));
    } else {
      return error_response(404, "no such endpoint: " + target);
    }
    return error_response(405, "method " + method + " not allowed on " + target);
  } catch (const ParseError& e) {
    return error_response(400, e.what());
  } catch (const ValidationError& e) {
    return error_response(422, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

ApiResponse Api::list_models() {
  std::lock_guard lock(mu_);
  json out = json::array();
  for (const auto& [id, e] : models_) out.push_back(model_summary(id, e.model, e.revision));
  return {200, out};
}

ApiResponse Api::get_model(const std::string& id) {
  std::lock_guard lock(mu_);
  const auto it = models_.find(id);
  if (it == models_.end()) return error_response(404, "unknown model " + id);
  return {200, {{"id", id}, {"revision", it->second.revision}, {"model", model_to_json(it->second.model)}}};
}

void Api::persist_model(const std::string& id, const ModelEntry& e) const {
  ws_.save("models", id, {{"revision", e.revision}, {"model", model_to_json(e.model)}});
}

ApiResponse Api::put_model(const std::string& id, const json& body) {
  auto model = model_from_json(body.contains("model") ? body.at("model") : body);
  if (model.button_id != id) model.button_id = id;
  std::lock_guard lock(mu_);
  const auto it = models_.find(id);
  if (it != models_.end()) {
    // replacing needs the revision the new content is based on
    if (!body.contains("revision") || !body.at("revision").is_number_unsigned()) {
      return field_errors({{"revision", "required when replacing an existing model"}});
    }
    const auto revision = body.at("revision").get<std::uint64_t>();
    if (revision != it->second.revision) {
      return {409, {{"error", "stale revision"},
                    {"current_revision", it->second.revision},
                    {"submitted_revision", revision}}};
    }
  }
  const bool created = it == models_.end();
  auto& e = models_[id];
  e.model = std::move(model);
  e.revision = created ? 1 : e.revision + 1;
  persist_model(id, e);
  return {created ? 201 : 200, {{"id", id}, {"revision", e.revision}}};
}

ApiResponse Api::put_control_points(const std::string& id, const json& body) {
  std::lock_guard lock(mu_);
  const auto it = models_.find(id);
  if (it == models_.end()) return error_response(404, "unknown model " + id);
  auto& entry = it->second;

  std::vector<std::pair<std::string, std::string>> errors;
  if (!body.is_object()) return field_errors({{"body", "expected a JSON object"}});
  if (!body.contains("revision") || !body.at("revision").is_number_unsigned()) {
    return field_errors({{"revision", "required: the revision the edit is based on"}});
  }
  const auto revision = body.at("revision").get<std::uint64_t>();
  if (revision != entry.revision) {
    return {409,
            {{"error", "stale revision"}, {"current_revision", entry.revision}, {"submitted_revision", revision}}};
  }

  FdvvModel m = entry.model;
  auto number = [&](const char* key, double& out) {
    if (!body.contains(key)) return;
    if (!body.at(key).is_number()) {
      errors.emplace_back(key, "must be a number");
      return;
    }
    out = body.at(key).get<double>();
  };
  number("travel_range_mm", m.travel_range_mm);
  number("activation_point_mm", m.activation_point_mm);
  if (m.travel_range_mm <= 0.0 || m.travel_range_mm > kMechanicalTravelLimitMm) {
    errors.emplace_back("travel_range_mm", "must lie in (0, 6.2]");
  }
  if (!(m.activation_point_mm > 0.0 && m.activation_point_mm < m.travel_range_mm)) {
    errors.emplace_back("activation_point_mm", "must lie strictly inside the travel range");
  }
  if (body.contains("vibration")) {
    const auto& v = body.at("vibration");
    if (!v.is_object()) {
      errors.emplace_back("vibration", "must be an object");
    } else {
      auto field = [&](const char* key, double& out) {
        if (!v.contains(key)) return;
        if (!v.at(key).is_number()) errors.emplace_back(std::string("vibration.") + key, "must be a number");
        else out = v.at(key).get<double>();
      };
      field("onset_mm", m.vibration.onset_mm);
      field("duration_ms", m.vibration.duration_ms);
      field("frequency_hz", m.vibration.frequency_hz);
      if (v.contains("template_id") && v.at("template_id").is_string()) {
        m.vibration.template_id = v.at("template_id").get<std::string>();
      }
    }
    if (!(m.vibration.onset_mm > 0.0 && m.vibration.onset_mm < m.travel_range_mm)) {
      errors.emplace_back("vibration.onset_mm", "must lie strictly inside the travel range");
    }
    if (!(m.vibration.duration_ms > 0.0)) errors.emplace_back("vibration.duration_ms", "must be positive");
  }

  std::vector<ControlPoint> points;
  if (!body.contains("points") || !body.at("points").is_array()) {
    errors.emplace_back("points", "required: an array of [displacement_mm, force_cN] pairs");
  } else {
    const auto& arr = body.at("points");
    if (arr.size() < 4 || arr.size() > 30) errors.emplace_back("points", "must contain between 4 and 30 points");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const auto where = "points[" + std::to_string(i) + "]";
      const auto& pt = arr[i];
      double d = 0.0, f = 0.0;
      if (pt.is_array() && pt.size() == 2 && pt[0].is_number() && pt[1].is_number()) {
        d = pt[0].get<double>();
        f = pt[1].get<double>();
      } else if (pt.is_object() && pt.contains("displacement_mm") && pt.contains("force_cN") &&
                 pt["displacement_mm"].is_number() && pt["force_cN"].is_number()) {
        d = pt["displacement_mm"].get<double>();
        f = pt["force_cN"].get<double>();
      } else {
        errors.emplace_back(where, "expected [displacement_mm, force_cN]");
        continue;
      }
      if (f < 0.0) errors.emplace_back(where + ".force_cN", "must not be negative");
      if (!points.empty() && d < points.back().displacement_mm) {
        errors.emplace_back(where + ".displacement_mm", "displacements must be non-decreasing");
      }
      points.push_back({d, f});
    }
    if (!points.empty()) {
      if (std::abs(points.front().displacement_mm) > 1e-9) {
        errors.emplace_back("points[0].displacement_mm", "first point must sit at 0 mm");
      }
      if (std::abs(points.back().displacement_mm - m.travel_range_mm) > 1e-9) {
        errors.emplace_back("points[" + std::to_string(points.size() - 1) + "].displacement_mm",
                            "last point must sit at the travel range");
      }
    }
  }
  std::optional<double> velocity;
  if (body.contains("velocity_mm_s")) {
    if (!body.at("velocity_mm_s").is_number()) errors.emplace_back("velocity_mm_s", "must be a number");
    else velocity = body.at("velocity_mm_s").get<double>();
  }
  if (!errors.empty()) return field_errors(errors);

  try {
    const BSplineCurve curve(points, static_cast<int>(std::min<std::size_t>(3, points.size() - 1)));
    if (velocity) {
      auto pos = std::find_if(m.press_curves.begin(), m.press_curves.end(),
                              [&](const auto& c) { return c.velocity_mm_s == *velocity; });
      if (pos != m.press_curves.end()) {
        pos->curve = curve;
      } else {
        m.press_curves.push_back({*velocity, curve});
        std::sort(m.press_curves.begin(), m.press_curves.end(),
                  [](const auto& a, const auto& b) { return a.velocity_mm_s < b.velocity_mm_s; });
      }
    } else {
      for (auto& c : m.press_curves) c.curve = curve;
    }
    validate_model(m);
  } catch (const ValidationError& e) {
    return field_errors({{"model", e.what()}});
  }
  entry.model = std::move(m);
  ++entry.revision;
  persist_model(id, entry);
  return {200, {{"id", id}, {"revision", entry.revision}, {"model", model_to_json(entry.model)}}};
}

PlantParams Api::plant_by_id(const std::string& id) const {
  const auto it = plants_.find(id);
  if (it == plants_.end()) throw ValidationError("unknown plant '" + id + "'");
  return it->second;
}

ApiResponse Api::compensate(const std::string& id, const json& body) {
  FdvvModel model;
  std::uint64_t revision = 0;
  PlantParams plant;
  {
    std::lock_guard lock(mu_);
    const auto it = models_.find(id);
    if (it == models_.end()) return error_response(404, "unknown model " + id);
    model = it->second.model;
    revision = it->second.revision;
    plant = plant_by_id(body.value("plant_id", std::string("default")));
  }
  CompensateRequest req;
  try {
    req.velocities = body.value("velocities", std::vector<double>{});
    req.runs = body.value("runs", req.runs);
    req.interpolate_to = body.value("interpolate_to", req.interpolate_to);
    req.options.max_iters = body.value("max_iters", req.options.max_iters);
    req.options.tol_cN = body.value("tol_cN", req.options.tol_cN);
    req.options.noiseless = body.value("noiseless", false);
  } catch (const json::exception& e) {
    throw ParseError(std::string("compensate request: ") + e.what());
  }
  if (req.runs < 1 || req.runs > 16) throw ValidationError("runs must lie in 1..16");
  const auto job = jobs_.submit("compensate", [this, id, model, revision, plant, req](const auto& progress) {
    progress(0.05);
    const auto report = compensate_model(model, VirtualPlant(plant), req);
    {
      std::lock_guard lock(mu_);
      actuations_[id] = report.table;
      ws_.save("actuations", id, actuation_to_json(report.table));
    }
    return json{{"button_id", id},
                {"model_revision", revision},
                {"actuation", actuation_to_json(report.table)},
                {"error_traces", report.traces}};
  });
  return {202, {{"job_id", job}}};
}

ApiResponse Api::get_job(const std::string& id) {
  const auto job = jobs_.get(id);
  if (!job) return error_response(404, "unknown job " + id);
  return {200, job_to_json(*job)};
}

ApiResponse Api::get_actuation(const std::string& id) {
  std::lock_guard lock(mu_);
  const auto it = actuations_.find(id);
  if (it == actuations_.end()) return error_response(404, "no actuation for " + id);
  return {200, actuation_to_json(it->second)};
}

SessionSpec Api::resolve_render(const json& body) const {
  SessionSpec s;
  std::lock_guard lock(mu_);
  if (body.contains("actuation")) {
    s.table = actuation_from_json(body.at("actuation"));
  } else if (body.contains("button_id")) {
    const auto id = body.at("button_id").get<std::string>();
    const auto it = actuations_.find(id);
    if (it == actuations_.end()) throw ValidationError("no actuation available for '" + id + "'; compensate first");
    s.table = it->second;
  } else {
    throw ValidationError("request needs 'button_id' or an inline 'actuation'");
  }
  if (body.contains("model")) {
    s.target = model_from_json(body.at("model"));
  } else if (const auto it = models_.find(s.table.button_id); it != models_.end()) {
    s.target = it->second.model;
  }
  s.plant = body.contains("plant") ? plant_from_json(body.at("plant"))
                                   : plant_by_id(body.value("plant_id", s.table.plant_id));
  s.config = sim_config_for(s.table);
  if (s.table.vibration) {
    const auto& v = *s.table.vibration;
    for (const auto& tpl : generate_templates({v.duration_ms, v.frequency_hz})) {
      if (tpl.id == v.template_id) s.config.vibration_template = tpl;
    }
  }
  if (body.contains("presets")) {
    for (const auto& p : body.at("presets")) {
      if (p.is_string()) {
        const auto it = presets_.find(p.get<std::string>());
        if (it == presets_.end()) throw ValidationError("unknown preset '" + p.get<std::string>() + "'");
        s.presets.push_back(it->second);
      } else {
        s.presets.push_back(preset_from_json(p));
      }
    }
  }
  if (body.contains("trajectory")) s.trajectory = trajectory_from_request(body.at("trajectory"), s.table.travel_range_mm);
  if (s.target && std::abs(s.target->travel_range_mm - s.table.travel_range_mm) > 1e-9) s.target.reset();
  return s;
}

ApiResponse Api::simulate(const json& body) {
  const auto s = resolve_render(body);
  const auto trajectory =
      s.trajectory.value_or(constant_velocity_press(s.table.travel_range_mm + 0.3, 100.0));
  const auto trace = run_press(s.table, trajectory, s.config, VirtualPlant(s.plant),
                               s.target ? &*s.target : nullptr, s.presets);
  json ticks = json::array();
  json events = json::array();
  for (const auto& t : trace.ticks) {
    ticks.push_back(tick_to_json(t));
    for (auto e : t.events) events.push_back({{"t_ms", t.t_ms}, {"event", to_string(e)}});
  }
  json summary = nullptr;
  if (trace.summary) {
    const auto& m = *trace.summary;
    summary = {{"target_velocity_mm_s", m.target_velocity_mm_s},
               {"bins_compared", m.bins_compared},
               {"mean_abs_error_cN", m.mean_abs_error_cN},
               {"sd_abs_error_cN", m.sd_abs_error_cN},
               {"max_abs_error_cN", m.max_abs_error_cN}};
  }
  return {200, {{"ticks", ticks}, {"events", events}, {"summary", summary}}};
}

ApiResponse Api::templates(const std::string& id) {
  std::lock_guard lock(mu_);
  const auto it = models_.find(id);
  if (it == models_.end()) return error_response(404, "unknown model " + id);
  const auto& v = it->second.model.vibration;
  json out = json::array();
  for (const auto& t : generate_templates({v.duration_ms, v.frequency_hz})) {
    out.push_back({{"id", t.id},
                   {"frequency_hz", t.frequency_hz},
                   {"duration_ms", t.duration_ms},
                   {"amplitude_start", t.amplitude_start},
                   {"amplitude_end", t.amplitude_end}});
  }
  return {200, {{"button_id", id}, {"templates", out}}};
}

ApiResponse Api::rate(const std::string& id, const json& body) {
  std::lock_guard lock(mu_);
  const auto it = models_.find(id);
  if (it == models_.end()) return error_response(404, "unknown model " + id);
  std::vector<std::pair<std::string, std::string>> errors;
  if (!body.contains("template_id") || !body.at("template_id").is_string()) {
    errors.emplace_back("template_id", "required string");
  }
  if (!body.contains("score") || !body.at("score").is_number_integer()) {
    errors.emplace_back("score", "required integer in 1..7");
  } else if (const int s = body.at("score").get<int>(); s < 1 || s > 7) {
    errors.emplace_back("score", "must lie in 1..7");
  }
  if (body.contains("velocity_mm_s") && !body.at("velocity_mm_s").is_number()) {
    errors.emplace_back("velocity_mm_s", "must be a number");
  }
  const auto& vib = it->second.model.vibration;
  const VibrationFeatures measured{vib.duration_ms, vib.frequency_hz};
  const auto bank = generate_templates(measured);
  if (errors.empty()) {
    const auto tid = body.at("template_id").get<std::string>();
    if (std::none_of(bank.begin(), bank.end(), [&](const auto& t) { return t.id == tid; })) {
      errors.emplace_back("template_id", "not in the template bank of " + id);
    }
  }
  if (!errors.empty()) return field_errors(errors);

  const double velocity = body.value("velocity_mm_s", 0.0);
  ratings_.rate(id, velocity, body.at("template_id").get<std::string>(), body.at("score").get<int>());
  json all = json::array();
  for (const auto& e : ratings_.entries()) {
    all.push_back({{"button_id", e.button_id},
                   {"velocity_mm_s", e.velocity_mm_s},
                   {"template_id", e.template_id},
                   {"score", e.score}});
  }
  ws_.save("ratings", "", all);
  const auto best = ratings_.best_template(id, std::nullopt, bank, measured);
  return {200, {{"button_id", id}, {"best_template", best ? json(*best) : json(nullptr)}}};
}

ApiResponse Api::optimize(const json& body) {
  const auto config = optimize_config_from_json(body);
  const auto job = jobs_.submit("optimize", [config](const auto& progress) {
    progress(0.05);
    const auto r = fdvv::optimize(config);
    json history = json::array();
    for (const auto& h : r.history) history.push_back(history_entry_to_json(h));
    return json{{"best", params_to_json(r.best)},
                {"best_mean_asynchrony_ms", r.best_mean_asynchrony_ms},
                {"history", history}};
  });
  return {202, {{"job_id", job}}};
}

ApiResponse Api::list_plants() {
  std::lock_guard lock(mu_);
  json out = json::array();
  for (const auto& [id, p] : plants_) out.push_back(plant_to_json(p));
  return {200, out};
}

ApiResponse Api::put_plant(const std::string& id, const json& body) {
  auto p = plant_from_json(body);
  p.plant_id = id;
  std::lock_guard lock(mu_);
  if (id == "default" || id == "identity") return error_response(409, "built-in plants cannot be replaced");
  plants_[id] = p;
  ws_.save("plants", id, plant_to_json(p));
  return {200, plant_to_json(p)};
}

ApiResponse Api::list_presets() {
  std::lock_guard lock(mu_);
  json out = json::array();
  for (const auto& [id, p] : presets_) {
    auto j = preset_to_json(p);
    j["id"] = id;
    out.push_back(j);
  }
  return {200, out};
}

ApiResponse Api::create_session(const json& body) {
  auto spec = resolve_render(body);
  std::lock_guard lock(mu_);
  const auto id = "s" + std::to_string(next_session_++);
  sessions_[id] = std::move(spec);
  return {201, {{"session_id", id}, {"ws_path", "/ws/sessions/" + id}}};
}

std::optional<SessionSpec> Api::session(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second;
}

}  // namespace fdvv::service
