#include <unistd.h>

#include <atomic>
#include <cmath>
#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "fdvv/service.hpp"
#include "fdvv/synthetic.hpp"
#include "httplib.h"

using namespace fdvv;
using namespace fdvv::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_workspace() {
  static std::atomic<int> n{0};
  const auto dir = fs::temp_directory_path() / ("fdvv-ws-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
  fs::remove_all(dir);
  return dir;
}

json clear_model_json() { return model_to_json(reference_model(clear_like_profile())); }

json fifteen_points(double travel) {
  json pts = json::array();
  for (int i = 0; i < 15; ++i) {
    const double d = travel * i / 14.0;
    pts.push_back({d, 20.0 + 4.0 * i + (i == 7 ? 25.0 : 0.0)});
  }
  return pts;
}

// Api with the Clear-like model stored under "clear".
struct Fixture {
  fs::path dir = fresh_workspace();
  Api api{dir};
  Fixture() { REQUIRE(api.handle("PUT", "/models/clear", clear_model_json().dump()).status == 201); }
  ~Fixture() { fs::remove_all(dir); }

  std::uint64_t revision() { return api.handle("GET", "/models/clear", "").body.at("revision").get<std::uint64_t>(); }

  Job compensate(const json& body = {{"runs", 1}}) {
    const auto r = api.handle("POST", "/models/clear/compensate", body.dump());
    REQUIRE(r.status == 202);
    return api.jobs().wait(r.body.at("job_id").get<std::string>());
  }
};

bool has_field_error(const ApiResponse& r, const std::string& field) {
  if (!r.body.contains("errors")) return false;
  for (const auto& e : r.body.at("errors")) {
    if (e.at("field") == field) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("routing errors") {
  Fixture f;
  CHECK(f.api.handle("GET", "/nothing", "").status == 404);
  CHECK(f.api.handle("DELETE", "/models", "").status == 405);
  CHECK(f.api.handle("POST", "/models/clear", "{}").status == 405);
  CHECK(f.api.handle("GET", "/models/a%20b", "").status == 400);
  CHECK(f.api.handle("PUT", "/models/x", "{not json").status == 400);
  CHECK(f.api.handle("GET", "/models/missing", "").status == 404);
  CHECK(f.api.handle("GET", "/jobs/job-999", "").status == 404);
  CHECK(f.api.handle("GET", "/actuations/clear", "").status == 404);
}

TEST_CASE("models list and replace under revision guard") {
  Fixture f;
  const auto list = f.api.handle("GET", "/models", "");
  REQUIRE(list.status == 200);
  REQUIRE(list.body.size() == 1);
  CHECK(list.body[0].at("id") == "clear");
  CHECK(list.body[0].at("revision") == 1);

  CHECK(f.api.handle("PUT", "/models/clear", clear_model_json().dump()).status == 422);
  const auto stale = f.api.handle("PUT", "/models/clear", json{{"revision", 7}, {"model", clear_model_json()}}.dump());
  CHECK(stale.status == 409);
  CHECK(stale.body.at("current_revision") == 1);
  const auto ok = f.api.handle("PUT", "/models/clear", json{{"revision", 1}, {"model", clear_model_json()}}.dump());
  CHECK(ok.status == 200);
  CHECK(ok.body.at("revision") == 2);
  CHECK(f.api.handle("PUT", "/models/broken", json{{"button_id", "broken"}}.dump()).status == 400);
}

TEST_CASE("control-point edits round trip") {
  Fixture f;
  const auto pts = fifteen_points(4.0);
  const auto put = f.api.handle("PUT", "/models/clear/control-points",
                                json{{"revision", 1}, {"points", pts}, {"velocity_mm_s", 100.0}}.dump());
  REQUIRE(put.status == 200);
  CHECK(put.body.at("revision") == 2);

  const auto got = f.api.handle("GET", "/models/clear", "");
  REQUIRE(got.status == 200);
  CHECK(got.body.at("revision") == 2);
  bool seen = false;
  for (const auto& c : got.body.at("model").at("press_curves")) {
    if (c.at("velocity_mm_s") != 100.0) continue;
    seen = true;
    const auto& cp = c.at("control_points");
    REQUIRE(cp.size() == 15);
    for (std::size_t i = 0; i < 15; ++i) {
      CHECK(cp[i][0].get<double>() == pts[i][0].get<double>());
      CHECK(cp[i][1].get<double>() == pts[i][1].get<double>());
    }
  }
  CHECK(seen);

  // object-style points are accepted too
  json objs = json::array();
  for (const auto& p : pts) objs.push_back({{"displacement_mm", p[0]}, {"force_cN", p[1]}});
  CHECK(f.api.handle("PUT", "/models/clear/control-points", json{{"revision", 2}, {"points", objs}}.dump()).status ==
        200);
}

TEST_CASE("control-point edits that break invariants are rejected with field errors") {
  Fixture f;
  const auto pts = fifteen_points(4.0);
  auto r = f.api.handle("PUT", "/models/clear/control-points",
                        json{{"revision", 1}, {"points", pts}, {"activation_point_mm", 4.0}}.dump());
  CHECK(r.status == 422);
  CHECK(has_field_error(r, "activation_point_mm"));

  auto bad = pts;
  bad[3][1] = -1.0;
  bad[5][0] = 0.1;
  r = f.api.handle("PUT", "/models/clear/control-points", json{{"revision", 1}, {"points", bad}}.dump());
  CHECK(r.status == 422);
  CHECK(has_field_error(r, "points[3].force_cN"));
  CHECK(has_field_error(r, "points[5].displacement_mm"));

  r = f.api.handle("PUT", "/models/clear/control-points", json{{"revision", 1}, {"points", json::array()}}.dump());
  CHECK(has_field_error(r, "points"));
  r = f.api.handle("PUT", "/models/clear/control-points",
                   json{{"revision", 1}, {"points", pts}, {"vibration", {{"onset_mm", 9.0}}}}.dump());
  CHECK(has_field_error(r, "vibration.onset_mm"));

  CHECK(f.api.handle("PUT", "/models/clear/control-points", json{{"points", pts}}.dump()).status == 422);
  CHECK(f.api.handle("PUT", "/models/clear/control-points", json{{"revision", 5}, {"points", pts}}.dump()).status ==
        409);
  CHECK(f.api.handle("PUT", "/models/nobody/control-points", json{{"revision", 1}, {"points", pts}}.dump()).status ==
        404);
  CHECK(f.revision() == 1);
}

TEST_CASE("concurrent conflicting edits: exactly one wins") {
  Fixture f;
  const auto body = json{{"revision", 1}, {"points", fifteen_points(4.0)}}.dump();
  std::atomic<int> ok{0}, conflict{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] {
      const auto s = f.api.handle("PUT", "/models/clear/control-points", body).status;
      if (s == 200) ++ok;
      if (s == 409) ++conflict;
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ok == 1);
  CHECK(conflict == 7);
  CHECK(f.revision() == 2);
}

TEST_CASE("models and revisions persist in the workspace") {
  const auto dir = fresh_workspace();
  {
    Api api(dir);
    REQUIRE(api.handle("PUT", "/models/clear", clear_model_json().dump()).status == 201);
    REQUIRE(api.handle("PUT", "/models/clear/control-points",
                       json{{"revision", 1}, {"points", fifteen_points(4.0)}}.dump())
                .status == 200);
  }
  CHECK(fs::exists(dir / "models" / "clear.json"));
  Api again(dir);
  CHECK(again.handle("GET", "/models/clear", "").body.at("revision") == 2);
  fs::remove_all(dir);
}

TEST_CASE("compensation job produces an actuation that simulates") {
  Fixture f;
  const auto job = f.compensate({{"runs", 1}, {"plant_id", "default"}});
  REQUIRE(job.status == "done");
  CHECK(job.result.at("model_revision") == 1);
  CHECK(job.result.at("error_traces").size() == 4);
  const auto polled = f.api.handle("GET", "/jobs/" + job.id, "");
  CHECK(polled.body.at("status") == "done");

  const auto act = f.api.handle("GET", "/actuations/clear", "");
  REQUIRE(act.status == 200);
  CHECK(act.body.at("curves").size() == 4);

  const auto sim = f.api.handle(
      "POST", "/simulate",
      json{{"button_id", "clear"}, {"trajectory", {{"profile", "constant-velocity"}, {"velocity_mm_s", 100.0}}}}.dump());
  REQUIRE(sim.status == 200);
  CHECK_FALSE(sim.body.at("ticks").empty());
  REQUIRE(sim.body.at("summary").is_object());
  CHECK(sim.body.at("summary").at("bins_compared").get<int>() > 0);
  CHECK(std::isfinite(sim.body.at("summary").at("mean_abs_error_cN").get<double>()));
  bool activation = false;
  for (const auto& e : sim.body.at("events")) activation = activation || e.at("event") == "activation";
  CHECK(activation);

  // inline actuation with a preset by name
  const auto inline_sim = f.api.handle(
      "POST", "/simulate",
      json{{"actuation", act.body}, {"presets", {{{"kind", "multi_level"}, {"detent_depths_mm", {1.0}}}}}}.dump());
  CHECK(inline_sim.status == 200);
}

TEST_CASE("compensation and simulation request errors") {
  Fixture f;
  CHECK(f.api.handle("POST", "/models/clear/compensate", json{{"runs", 0}}.dump()).status == 422);
  CHECK(f.api.handle("POST", "/models/clear/compensate", json{{"plant_id", "nope"}}.dump()).status == 422);
  CHECK(f.api.handle("POST", "/models/clear/compensate", json{{"runs", "x"}}.dump()).status == 400);
  CHECK(f.api.handle("POST", "/models/zzz/compensate", "{}").status == 404);
  CHECK(f.api.handle("POST", "/simulate", json{{"button_id", "clear"}}.dump()).status == 422);
  CHECK(f.api.handle("POST", "/simulate", "{}").status == 422);

  f.compensate();
  CHECK(f.api.handle("POST", "/simulate",
                     json{{"button_id", "clear"}, {"trajectory", {{"profile", "wobble"}}}}.dump())
            .status == 422);
  CHECK(f.api.handle("POST", "/simulate", json{{"button_id", "clear"}, {"trajectory", "fast"}}.dump()).status == 400);
  CHECK(f.api.handle("POST", "/simulate", json{{"button_id", "clear"}, {"presets", {"missing"}}}.dump()).status ==
        422);
}

TEST_CASE("divergent compensation is reported as a failed job with its trace") {
  Fixture f;
  auto p = default_plant_params();
  p.static_gain = 0.0;
  p.noise_sigma = 0.0;
  p.calibration = PlantCalibration{1.0, 0.0};
  REQUIRE(f.api.handle("PUT", "/plants/dead", plant_to_json(p).dump()).status == 200);
  const auto job = f.compensate({{"runs", 1}, {"plant_id", "dead"}, {"max_iters", 30}});
  CHECK(job.status == "failed");
  CHECK_FALSE(job.error.empty());
  CHECK(job.result.at("error_trace").size() == 6);
}

TEST_CASE("vibration templates and ratings") {
  const auto dir = fresh_workspace();
  std::string first;
  {
    Api api(dir);
    REQUIRE(api.handle("PUT", "/models/clear", clear_model_json().dump()).status == 201);
    const auto bank = api.handle("GET", "/vibration/clear/templates", "");
    REQUIRE(bank.status == 200);
    REQUIRE(bank.body.at("templates").size() == 9);
    for (const auto& t : bank.body.at("templates")) CHECK(t.at("amplitude_start").get<double>() <= 2.43);
    first = bank.body.at("templates")[2].at("id").get<std::string>();

    auto r = api.handle("POST", "/vibration/clear/rate", json{{"template_id", first}, {"score", 6}}.dump());
    REQUIRE(r.status == 200);
    CHECK(r.body.at("best_template") == first);
    CHECK(has_field_error(api.handle("POST", "/vibration/clear/rate", json{{"template_id", first}, {"score", 8}}.dump()),
                          "score"));
    CHECK(has_field_error(
        api.handle("POST", "/vibration/clear/rate", json{{"template_id", "f1.0_e9.9"}, {"score", 3}}.dump()),
        "template_id"));
    CHECK(api.handle("POST", "/vibration/other/rate", json{{"template_id", first}, {"score", 3}}.dump()).status == 404);
  }
  CHECK(fs::exists(dir / "ratings.json"));
  Api again(dir);
  const auto bank = again.handle("GET", "/vibration/clear/templates", "");
  const auto second = bank.body.at("templates")[5].at("id").get<std::string>();
  const auto r = again.handle("POST", "/vibration/clear/rate", json{{"template_id", second}, {"score", 2}}.dump());
  CHECK(r.body.at("best_template") == first);

  // the simulator picks the rated template when the model names it
  auto model = clear_model_json();
  model["vibration"]["template_id"] = first;
  CHECK(again.handle("PUT", "/models/clear", json{{"revision", 1}, {"model", model}}.dump()).status == 200);
  fs::remove_all(dir);
}

TEST_CASE("optimize runs as a job") {
  Fixture f;
  const auto r = f.api.handle(
      "POST", "/optimize", json{{"budget", 3}, {"trials_per_eval", 5}, {"seed", 2}, {"bo", {{"candidates", 64}}}}.dump());
  REQUIRE(r.status == 202);
  const auto job = f.api.jobs().wait(r.body.at("job_id").get<std::string>());
  REQUIRE(job.status == "done");
  CHECK(job.result.at("history").size() == 3);
  CHECK(job.result.contains("best"));
}

TEST_CASE("plants and presets") {
  Fixture f;
  CHECK(f.api.handle("PUT", "/plants/default", plant_to_json(default_plant_params()).dump()).status == 409);
  auto p = default_plant_params();
  p.static_gain = 1.3;
  CHECK(f.api.handle("PUT", "/plants/strong", plant_to_json(p).dump()).status == 200);
  const auto list = f.api.handle("GET", "/plants", "");
  CHECK(list.body.size() == 3);
  CHECK(f.api.handle("GET", "/presets", "").body.is_array());

  Preset detent;
  detent.kind = PresetKind::kMultiLevel;
  detent.detent_depths_mm = {1.0};
  fs::create_directories(f.dir / "presets");
  std::ofstream(f.dir / "presets" / "detent.json") << preset_to_json(detent).dump();
  Api reloaded(f.dir);
  const auto presets = reloaded.handle("GET", "/presets", "");
  REQUIRE(presets.body.size() == 1);
  CHECK(presets.body[0].at("id") == "detent");
}

TEST_CASE("workspace resolution") {
  CHECK(resolve_workspace(std::string("/tmp/explicit")) == fs::path("/tmp/explicit"));
  ::setenv("FDVV_WORKSPACE", "/tmp/from-env", 1);
  CHECK(resolve_workspace(std::nullopt) == fs::path("/tmp/from-env"));
  ::unsetenv("FDVV_WORKSPACE");
  CHECK(resolve_workspace(std::nullopt) == fs::path("workspace"));
}

TEST_CASE("HTTP server and WebSocket session stream") {
  Fixture f;
  f.compensate();
  Server server(f.api, ServerOptions{"127.0.0.1", 0});
  server.start();
  REQUIRE(server.port() != 0);

  httplib::Client http("127.0.0.1", server.port());
  const auto models = http.Get("/models");
  REQUIRE(models);
  CHECK(models->status == 200);
  CHECK(models->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(json::parse(models->body).size() == 1);
  CHECK(http.Get("/models/none")->status == 404);
  const auto put = http.Put("/models/clear/control-points", json{{"revision", 99}}.dump(), "application/json");
  REQUIRE(put);
  CHECK(put->status == 409);

  const auto session =
      http.Post("/sessions",
                json{{"button_id", "clear"},
                     {"trajectory", {{"profile", "constant-velocity"}, {"velocity_mm_s", 100.0}, {"depth_mm", 4.0}}}}
                    .dump(),
                "application/json");
  REQUIRE(session);
  REQUIRE(session->status == 201);
  const auto ws_path = json::parse(session->body).at("ws_path").get<std::string>();

  namespace beast = boost::beast;
  namespace asio = boost::asio;
  asio::io_context ioc;
  asio::ip::tcp::resolver resolver(ioc);
  beast::websocket::stream<asio::ip::tcp::socket> ws(ioc);
  asio::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(server.port())));
  ws.handshake("127.0.0.1", ws_path);

  auto read_press = [&] {
    std::vector<json> ticks;
    json summary;
    for (;;) {
      beast::flat_buffer buf;
      ws.read(buf);
      auto msg = json::parse(beast::buffers_to_string(buf.data()));
      if (msg.at("type") == "tick") {
        ticks.push_back(std::move(msg));
      } else {
        summary = std::move(msg);
        break;
      }
    }
    return std::make_pair(ticks, summary);
  };

  const auto [ticks, summary] = read_press();
  CHECK(summary.at("type") == "summary");
  CHECK(ticks.size() == constant_velocity_press(4.0, 100.0).samples.size());
  std::optional<double> moved, activation, vibration, bottom;
  for (const auto& t : ticks) {
    const double now = t.at("t_ms").get<double>();
    if (!moved && t.at("raw_mm").get<double>() > 0.0) moved = now;
    for (const auto& e : t.at("events")) {
      if (e == "activation" && !activation) activation = now;
      if (e == "vibration_start" && !vibration) vibration = now;
      if (e == "bottom_out" && !bottom) bottom = now;
    }
  }
  REQUIRE(moved);
  REQUIRE(activation);
  REQUIRE(vibration);
  REQUIRE(bottom);
  CHECK(*activation < *bottom);
  CHECK(*vibration < *bottom);
  // the Clear-like vibration sits below the activation point, so it fires first
  CHECK(*vibration < *activation);
  const double descent = *bottom - *moved + 1.0;
  CHECK(descent >= 40.0);
  CHECK(descent <= 45.0);

  // a further press on the same session, then a malformed message
  ws.write(asio::buffer(json{{"trajectory", {{"profile", "minimum-jerk"}, {"duration_ms", 60.0}}}}.dump()));
  const auto [again, summary2] = read_press();
  CHECK_FALSE(again.empty());
  CHECK(summary2.at("type") == "summary");
  ws.write(asio::buffer(std::string("{\"nope\":1}")));
  beast::flat_buffer buf;
  ws.read(buf);
  CHECK(json::parse(beast::buffers_to_string(buf.data())).at("type") == "error");
  ws.close(beast::websocket::close_code::normal);

  // unknown session: the upgrade is answered with a plain 404
  namespace bhttp = beast::http;
  asio::ip::tcp::socket raw(ioc);
  asio::connect(raw, resolver.resolve("127.0.0.1", std::to_string(server.port())));
  bhttp::request<bhttp::empty_body> up{bhttp::verb::get, "/ws/sessions/s999", 11};
  up.set(bhttp::field::host, "127.0.0.1");
  up.set(bhttp::field::upgrade, "websocket");
  up.set(bhttp::field::connection, "upgrade");
  up.set(bhttp::field::sec_websocket_key, "dGhlIHNhbXBsZSBub25jZQ==");
  up.set(bhttp::field::sec_websocket_version, "13");
  bhttp::write(raw, up);
  beast::flat_buffer rbuf;
  bhttp::response<bhttp::string_body> res;
  bhttp::read(raw, rbuf, res);
  CHECK(res.result_int() == 404);
  CHECK(json::parse(res.body()).at("error") == "unknown session");

  server.stop();
}
