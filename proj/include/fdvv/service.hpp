#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fdvv/actuation.hpp"
#include "fdvv/model.hpp"
#include "fdvv/plant.hpp"
#include "fdvv/render.hpp"
#include "fdvv/vibration.hpp"
#include "json.hpp"

namespace fdvv::service {

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

// Flat JSON files under one directory: models/, actuations/, plants/, presets/, ratings.json.
class Workspace {
 public:
  explicit Workspace(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path file(const std::string& kind, const std::string& id) const;

  std::map<std::string, nlohmann::json> load_all(const std::string& kind) const;
  void save(const std::string& kind, const std::string& id, const nlohmann::json& j) const;
  std::optional<nlohmann::json> load(const std::string& kind, const std::string& id) const;

 private:
  std::filesystem::path root_;
};

// Workspace root from the explicit option, else FDVV_WORKSPACE, else ./workspace.
std::filesystem::path resolve_workspace(const std::optional<std::string>& explicit_path);

struct Job {
  std::string id;
  std::string kind;
  std::string status = "queued";  // queued | running | done | failed
  double progress = 0.0;
  nlohmann::json result;
  std::string error;
};

nlohmann::json job_to_json(const Job& j);

// Single worker thread running submitted jobs in order.
class JobQueue {
 public:
  using Task = std::function<nlohmann::json(const std::function<void(double)>& progress)>;

  JobQueue();
  ~JobQueue();
  JobQueue(const JobQueue&) = delete;
  JobQueue& operator=(const JobQueue&) = delete;

  std::string submit(std::string kind, Task task);
  std::optional<Job> get(const std::string& id) const;
  // Blocks until the job leaves the queued/running states (tests and CLI).
  Job wait(const std::string& id) const;

 private:
  void run();

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::map<std::string, Job> jobs_;
  std::deque<std::pair<std::string, Task>> pending_;
  std::uint64_t next_id_ = 1;
  bool stopping_ = false;
  std::thread worker_;
};

// Either raw samples or a generated profile (constant-velocity, probe, minimum-jerk);
// generated presses default to 0.3 mm past the travel range.
PressTrajectory trajectory_from_request(const nlohmann::json& j, double travel_range_mm);

struct SessionSpec {
  ActuationTable table;
  SimConfig config;
  PlantParams plant;
  std::vector<Preset> presets;
  std::optional<PressTrajectory> trajectory;
  std::optional<FdvvModel> target;
};

// Transport-independent API. Every method is safe to call from several threads.
class Api {
 public:
  explicit Api(std::filesystem::path workspace);

  ApiResponse handle(const std::string& method, const std::string& target, const std::string& body);

  std::optional<SessionSpec> session(const std::string& id) const;
  JobQueue& jobs() { return jobs_; }

 private:
  struct ModelEntry {
    FdvvModel model;
    std::uint64_t revision = 1;
  };

  ApiResponse list_models();
  ApiResponse get_model(const std::string& id);
  ApiResponse put_model(const std::string& id, const nlohmann::json& body);
  ApiResponse put_control_points(const std::string& id, const nlohmann::json& body);
  ApiResponse compensate(const std::string& id, const nlohmann::json& body);
  ApiResponse get_job(const std::string& id);
  ApiResponse get_actuation(const std::string& id);
  ApiResponse simulate(const nlohmann::json& body);
  ApiResponse rate(const std::string& id, const nlohmann::json& body);
  ApiResponse templates(const std::string& id);
  ApiResponse optimize(const nlohmann::json& body);
  ApiResponse list_plants();
  ApiResponse put_plant(const std::string& id, const nlohmann::json& body);
  ApiResponse list_presets();
  ApiResponse create_session(const nlohmann::json& body);

  SessionSpec resolve_render(const nlohmann::json& body) const;
  PlantParams plant_by_id(const std::string& id) const;
  void persist_model(const std::string& id, const ModelEntry& e) const;

  Workspace ws_;
  mutable std::mutex mu_;
  std::map<std::string, ModelEntry> models_;
  std::map<std::string, ActuationTable> actuations_;
  std::map<std::string, PlantParams> plants_;
  std::map<std::string, Preset> presets_;
  std::map<std::string, SessionSpec> sessions_;
  std::uint64_t next_session_ = 1;
  RatingStore ratings_;
  JobQueue jobs_;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
};

// HTTP and WebSocket on one port (thread per connection).
class Server {
 public:
  Server(Api& api, ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start();
  void stop();
  unsigned short port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  unsigned short port_ = 0;
};

}  // namespace fdvv::service
