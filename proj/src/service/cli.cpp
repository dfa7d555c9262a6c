#include "fdvv/cli.hpp"

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fdvv/compensation.hpp"
#include "fdvv/error.hpp"
#include "fdvv/optimizer.hpp"
#include "fdvv/pipeline.hpp"
#include "fdvv/service.hpp"

namespace fdvv {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ValidationError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

// Stage files may carry the payload bare or under a key next to a report.
const json& unwrap(const json& j, const char* key) { return j.contains(key) ? j.at(key) : j; }

PlantParams plant_arg(const std::string& arg) {
  if (arg == "default") return default_plant_params();
  if (arg == "identity") return identity_plant_params();
  return plant_from_json(read_json(arg));
}

struct IngestArgs {
  std::vector<std::string> captures;
  std::string out;
  double sigma_filter = 1.2;
  double sigma_average = 0.8;
};

int run_ingest(const IngestArgs& a) {
  std::vector<CaptureSession> sessions;
  for (const auto& path : a.captures) sessions.push_back(parse_capture(read_text(path)));
  IngestOptions options;
  options.sigma_filter_mm = a.sigma_filter;
  options.sigma_average_mm = a.sigma_average;
  const auto r = ingest_captures(sessions, options);
  write_text(a.out, ingest_to_json(r).dump(2) + "\n");
  for (const auto& [v, p] : r.velocities) {
    std::cout << v << " mm/s: " << p.complete << "/" << p.presses << " complete presses\n";
  }
  return kExitOk;
}

struct FitArgs {
  std::string presses;
  std::string out;
  double penalty = kDefaultComplexityPenalty;
  std::size_t k_min = 4;
  std::size_t k_max = 30;
  std::optional<double> activation;
};

int run_fit(const FitArgs& a) {
  const auto r = ingest_from_json(read_json(a.presses));
  const auto built = fit_ingested(r, a.activation, a.k_min, a.k_max, a.penalty);
  json fit = json::array();
  for (const auto& [v, sel] : built.selections) {
    json reports = json::array();
    for (const auto& rep : sel.reports) reports.push_back(fit_report_to_json(rep));
    fit.push_back({{"velocity_mm_s", v}, {"best_k", sel.best_k}, {"reports", reports}});
    std::cout << v << " mm/s: best_k " << sel.best_k << "\n";
  }
  write_text(a.out, json{{"model", model_to_json(built.model)}, {"fit", fit}}.dump(2) + "\n");
  return kExitOk;
}

struct CompensateArgs {
  std::string model;
  std::string plant = "default";
  std::vector<double> velocities;
  std::size_t runs = 4;
  std::size_t interpolate_to = 0;
  std::size_t max_iters = 12;
  double tol = 0.5;
  bool noiseless = false;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int run_compensate(const CompensateArgs& a) {
  const auto model = model_from_json(unwrap(read_json(a.model), "model"));
  auto params = plant_arg(a.plant);
  if (a.seed) params.seed = *a.seed;
  CompensateRequest req;
  req.velocities = a.velocities;
  req.runs = a.runs;
  req.interpolate_to = a.interpolate_to;
  req.options.max_iters = a.max_iters;
  req.options.tol_cN = a.tol;
  req.options.noiseless = a.noiseless;
  const auto report = compensate_model(model, VirtualPlant(params), req);
  write_text(a.out, actuation_to_json(report.table).dump(2) + "\n");
  for (std::size_t i = 0; i < report.traces.size(); ++i) {
    std::cout << report.table.curves[std::min(i, report.table.curves.size() - 1)].velocity_mm_s << " mm/s:";
    for (const auto& trace : report.traces[i]) std::cout << ' ' << trace.back();
    std::cout << " cN final error per run\n";
  }
  return kExitOk;
}

struct SimulateArgs {
  std::string actuation;
  std::string model;
  std::string trajectory;
  std::string profile = "constant-velocity";
  double velocity = 100.0;
  std::optional<double> depth;
  double duration = 40.0;
  std::string plant;
  std::vector<std::string> presets;
  std::string out;
};

int run_simulate(const SimulateArgs& a) {
  const auto table = actuation_from_json(unwrap(read_json(a.actuation), "actuation"));
  std::optional<FdvvModel> target;
  if (!a.model.empty()) {
    target = model_from_json(unwrap(read_json(a.model), "model"));
    if (std::abs(target->travel_range_mm - table.travel_range_mm) > 1e-9) {
      throw ValidationError("model travel range " + std::to_string(target->travel_range_mm) +
                            " mm does not match actuation travel range " + std::to_string(table.travel_range_mm) +
                            " mm");
    }
  }
  PressTrajectory trajectory;
  const double depth = a.depth.value_or(table.travel_range_mm + 0.3);
  if (!a.trajectory.empty()) {
    trajectory = trajectory_from_json(read_json(a.trajectory));
  } else if (a.profile == "constant-velocity") {
    trajectory = constant_velocity_press(depth, a.velocity);
  } else if (a.profile == "minimum-jerk") {
    trajectory = minimum_jerk_press(depth, a.duration);
  } else if (a.profile == "probe") {
    trajectory = constant_velocity_press(depth, 0.5, 30, 30, false);
    trajectory.profile = "probe";
  } else {
    throw ValidationError("unknown profile '" + a.profile + "'");
  }
  std::vector<Preset> presets;
  for (const auto& p : a.presets) presets.push_back(preset_from_json(read_json(p)));
  const auto plant = plant_arg(a.plant.empty() ? table.plant_id : a.plant);

  const auto trace = run_press(table, trajectory, sim_config_for(table), VirtualPlant(plant),
                               target ? &*target : nullptr, presets);
  std::ostringstream lines;
  for (const auto& t : trace.ticks) lines << tick_to_json(t).dump() << '\n';
  if (a.out.empty()) {
    std::cout << lines.str();
  } else {
    write_text(a.out, lines.str());
  }
  if (trace.summary) {
    const auto& s = *trace.summary;
    json summary = {{"target_velocity_mm_s", s.target_velocity_mm_s},
                    {"bins_compared", s.bins_compared},
                    {"mean_abs_error_cN", s.mean_abs_error_cN},
                    {"sd_abs_error_cN", s.sd_abs_error_cN},
                    {"max_abs_error_cN", s.max_abs_error_cN}};
    (a.out.empty() ? std::cerr : std::cout) << summary.dump() << '\n';
  }
  return kExitOk;
}

struct OptimizeArgs {
  std::string config;
  std::optional<std::size_t> budget;
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> seed;
  std::string difficulty;
  std::string out;
};

int run_optimize(const OptimizeArgs& a) {
  json cfg = a.config.empty() ? json::object() : read_json(a.config);
  if (a.budget) cfg["budget"] = *a.budget;
  if (a.trials) cfg["trials_per_eval"] = *a.trials;
  if (a.seed) cfg["seed"] = *a.seed;
  if (!a.difficulty.empty()) cfg["difficulty"] = a.difficulty;
  const auto config = optimize_config_from_json(cfg);
  const auto r = optimize(config);
  json history = json::array();
  for (const auto& h : r.history) history.push_back(history_entry_to_json(h));
  write_text(a.out, json{{"config", optimize_config_to_json(config)},
                         {"best", params_to_json(r.best)},
                         {"best_mean_asynchrony_ms", r.best_mean_asynchrony_ms},
                         {"history", history}}
                        .dump(2) + "\n");
  std::cout << "best mean asynchrony " << r.best_mean_asynchrony_ms << " ms\n";
  return kExitOk;
}

struct ExportArgs {
  std::string model;
  std::optional<double> frequency;
  std::optional<double> duration;
  std::string template_id;
  std::uint32_t rate = 44100;
  std::string out;
};

int run_export_wave(const ExportArgs& a) {
  VibrationFeatures features{16.0, 239.0};
  std::string wanted = a.template_id;
  if (!a.model.empty()) {
    const auto m = model_from_json(unwrap(read_json(a.model), "model"));
    features = {m.vibration.duration_ms, m.vibration.frequency_hz};
    if (wanted.empty() && m.vibration.template_id != "default") wanted = m.vibration.template_id;
  }
  if (a.frequency) features.frequency_hz = *a.frequency;
  if (a.duration) features.duration_ms = *a.duration;
  const auto bank = generate_templates(features);
  const WaveTemplate* tpl = &bank.front();
  if (!wanted.empty()) {
    const auto it = std::find_if(bank.begin(), bank.end(), [&](const auto& t) { return t.id == wanted; });
    if (it == bank.end()) throw ValidationError("template '" + wanted + "' is not in the bank");
    tpl = &*it;
  }
  const auto samples = synthesize(*tpl, a.rate);
  const auto bytes = encode_wav(samples, a.rate);
  write_text(a.out, std::string(bytes.begin(), bytes.end()));
  std::cout << tpl->id << ": " << samples.size() << " samples at " << a.rate << " Hz\n";
  return kExitOk;
}

struct ServeArgs {
  std::string host = "127.0.0.1";
  unsigned short port = 8080;
  std::string workspace;
};

int run_serve(const ServeArgs& a) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  const auto root = service::resolve_workspace(a.workspace.empty() ? std::nullopt : std::optional(a.workspace));
  service::Api api(root);
  service::Server server(api, {a.host, a.port});
  server.start();
  std::cout << "serving " << root.string() << " on http://" << a.host << ':' << server.port() << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  return kExitOk;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Force-displacement-velocity-vibration button pipeline", "fdvv"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Synchronize, segment and average raw captures");
  c_ingest->add_option("captures", ingest.captures, "Capture files (JSON)")->required()->check(CLI::ExistingFile);
  c_ingest->add_option("--out", ingest.out, "Averaged presses file")->required();
  c_ingest->add_option("--sigma-filter", ingest.sigma_filter, "Smoothing of the raw streams (mm)");
  c_ingest->add_option("--sigma-average", ingest.sigma_average, "Smoothing of the averaged press (mm)");

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Fit B-spline curves with order selection");
  c_fit->add_option("--presses", fit.presses, "Averaged presses file from ingest")->required();
  c_fit->add_option("--out", fit.out, "Model file")->required();
  c_fit->add_option("--penalty", fit.penalty, "Complexity penalty");
  c_fit->add_option("--k-min", fit.k_min, "Fewest control points");
  c_fit->add_option("--k-max", fit.k_max, "Most control points");
  c_fit->add_option("--activation", fit.activation, "Activation point (mm); default half the travel");

  CompensateArgs comp;
  auto* c_comp = app.add_subcommand("compensate", "Learn actuation signals against a virtual plant");
  c_comp->add_option("--model", comp.model, "Model file")->required();
  c_comp->add_option("--plant", comp.plant, "Plant id (default, identity) or plant file");
  c_comp->add_option("--velocities", comp.velocities, "Velocities (mm/s); default the model's");
  c_comp->add_option("--runs", comp.runs, "Runs per velocity");
  c_comp->add_option("--interpolate-to", comp.interpolate_to, "Velocity count after interpolation");
  c_comp->add_option("--max-iters", comp.max_iters, "Iterations per run");
  c_comp->add_option("--tol", comp.tol, "Stop below this error (cN)");
  c_comp->add_flag("--noiseless", comp.noiseless, "Disable plant noise");
  c_comp->add_option("--seed", comp.seed, "Plant seed");
  c_comp->add_option("--out", comp.out, "Actuation file")->required();

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Render one press and write the tick trace");
  c_sim->add_option("--actuation", sim.actuation, "Actuation file")->required();
  c_sim->add_option("--model", sim.model, "Target model for the error summary");
  c_sim->add_option("--trajectory", sim.trajectory, "Trajectory file");
  c_sim->add_option("--profile", sim.profile, "constant-velocity, minimum-jerk or probe")
      ->check(CLI::IsMember({"constant-velocity", "minimum-jerk", "probe"}));
  c_sim->add_option("--velocity", sim.velocity, "Press velocity (mm/s)");
  c_sim->add_option("--depth", sim.depth, "Finger depth (mm)");
  c_sim->add_option("--duration", sim.duration, "Minimum-jerk descent (ms)");
  c_sim->add_option("--plant", sim.plant, "Plant id or file; default the actuation's plant");
  c_sim->add_option("--preset", sim.presets, "Preset files");
  c_sim->add_option("--out", sim.out, "Trace file (JSON lines); stdout when absent");

  OptimizeArgs opt;
  auto* c_opt = app.add_subcommand("optimize", "Bayesian optimization against a simulated user");
  c_opt->add_option("--config", opt.config, "Optimizer config file");
  c_opt->add_option("--budget", opt.budget, "Evaluations");
  c_opt->add_option("--trials", opt.trials, "Trials per evaluation");
  c_opt->add_option("--seed", opt.seed, "Run seed");
  c_opt->add_option("--difficulty", opt.difficulty, "easy, difficult or a speed in px/s");
  c_opt->add_option("--out", opt.out, "Result file")->required();

  ExportArgs wave;
  auto* c_wave = app.add_subcommand("export-wave", "Write a vibration template as 16-bit WAV");
  c_wave->add_option("--model", wave.model, "Model file supplying the measured features");
  c_wave->add_option("--frequency", wave.frequency, "Frequency (Hz)");
  c_wave->add_option("--duration", wave.duration, "Duration (ms)");
  c_wave->add_option("--template", wave.template_id, "Template id from the bank");
  c_wave->add_option("--rate", wave.rate, "Sample rate (Hz)");
  c_wave->add_option("--out", wave.out, "WAV file")->required();

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "HTTP and WebSocket service");
  c_serve->add_option("--host", serve.host, "Bind address");
  c_serve->add_option("--port", serve.port, "Port (0 picks a free one)");
  c_serve->add_option("--workspace", serve.workspace, "Data directory; else FDVV_WORKSPACE, else ./workspace");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "fdvv: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (c_ingest->parsed()) return run_ingest(ingest);
    if (c_fit->parsed()) return run_fit(fit);
    if (c_comp->parsed()) return run_compensate(comp);
    if (c_sim->parsed()) return run_simulate(sim);
    if (c_opt->parsed()) return run_optimize(opt);
    if (c_wave->parsed()) return run_export_wave(wave);
    if (c_serve->parsed()) return run_serve(serve);
  } catch (const ValidationError& e) {
    std::cerr << "fdvv: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "fdvv: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace fdvv
