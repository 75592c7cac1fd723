// posefuse: command line front end for the fusion pipeline.
//
//   posefuse simulate --subjects 3 --devices 4 --output scene.jsonl --truth truth.jsonl
//   posefuse replay --input scene.jsonl --output fused.jsonl
//   posefuse eval --pred fused.jsonl --gt truth.jsonl
//   posefuse bench --devices 5 --subjects 7
//   posefuse run --listen 7700 --output fused.jsonl
//   posefuse simulate --connect localhost:7700

#include <atomic>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "posefuse/config.hpp"
#include "posefuse/harness/io.hpp"
#include "posefuse/harness/scene.hpp"
#include "posefuse/live.hpp"
#include "posefuse/metrics.hpp"
#include "posefuse/pipeline.hpp"

namespace {

using namespace posefuse;

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;
  double tick_rate = 0.0;
  int threads = -1;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "Pipeline config (JSON, comments allowed)")->check(CLI::ExistingFile);
    app->add_option("--set", overrides, "Override a config key, e.g. --set association.gate=0.8");
    app->add_option("--tick-rate", tick_rate, "Aggregator tick rate in Hz")->check(CLI::PositiveNumber);
    app->add_option("--threads", threads, "Update worker threads (0: one per core)")->check(CLI::NonNegativeNumber);
  }

  PipelineConfig load() const {
    PipelineConfig c = file.empty() ? PipelineConfig{} : load_config(file);
    for (const auto& o : overrides) apply_override(c, o);
    if (tick_rate > 0.0) c.tick_rate = tick_rate;
    if (threads >= 0) c.threads = static_cast<unsigned>(threads);
    c.validate();
    return c;
  }
};

void attach_scene(CLI::App* app, harness::SceneConfig& s, std::string& scenario) {
  app->add_option("--scenario", scenario, "wander, crossing or static")->default_val("wander");
  app->add_option("--subjects", s.n_subjects, "Number of people")->default_val(s.n_subjects);
  app->add_option("--devices", s.n_devices, "Number of sensing devices")->default_val(s.n_devices);
  app->add_option("--duration", s.duration, "Seconds")->default_val(s.duration);
  app->add_option("--noise", s.noise_sigma, "Keypoint noise sigma, meters")->default_val(s.noise_sigma);
  app->add_option("--dropout", s.dropout, "Per-keypoint dropout probability")->default_val(s.dropout);
  app->add_option("--outliers", s.outlier_prob, "Per-keypoint outlier probability")->default_val(s.outlier_prob);
  app->add_option("--latency", s.latency_mean, "Mean transport latency, seconds")->default_val(s.latency_mean);
  app->add_option("--jitter", s.latency_jitter, "Latency jitter half-width, seconds")->default_val(s.latency_jitter);
  app->add_option("--frame-rate", s.frame_rate, "Device frame rate, Hz")->default_val(s.frame_rate);
  app->add_option("--fov", s.fov_deg, "Device half field of view, degrees")->default_val(s.fov_deg);
  app->add_option("--range", s.range, "Device sensing range, meters")->default_val(s.range);
  app->add_flag("!--no-occlusion", s.occlusion, "Disable the occlusion model");
  app->add_option("--seed", s.seed, "Random seed")->default_val(s.seed);
}

harness::SceneConfig finish_scene(harness::SceneConfig s, const std::string& scenario) {
  s.scenario = harness::scenario_from_string(scenario);
  s.validate();
  return s;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

void print_report(const RunReport& r, bool json) {
  if (json) {
    std::cout << to_json(r).dump(2) << '\n';
    return;
  }
  std::cout << std::fixed << std::setprecision(2);
  std::cout << "ticks " << r.ticks << "  batches " << r.batches << "  measurements " << r.measurements
            << "  tracks created " << r.tracks_created << "  max live " << r.max_live_tracks << '\n';
  std::cout << "tick latency ms: mean " << r.total.mean << "  p50 " << r.total.p50 << "  p95 " << r.total.p95
            << "  p99 " << r.total.p99 << "  max " << r.total.max << '\n';
  for (const auto& [stage, s] : r.stages)
    std::cout << "  " << std::setw(10) << std::left << stage << std::right << " mean " << s.mean << "  p95 " << s.p95
              << '\n';
  std::cout << "over budget (" << r.budget_ms << " ms): " << r.over_budget << " of " << r.ticks << " ticks\n";
}

std::pair<std::string, std::uint16_t> split_endpoint(const std::string& ep) {
  const auto colon = ep.rfind(':');
  if (colon == std::string::npos) return {"127.0.0.1", static_cast<std::uint16_t>(std::stoi(ep))};
  return {ep.substr(0, colon), static_cast<std::uint16_t>(std::stoi(ep.substr(colon + 1)))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-device 3D pose fusion"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic scene");
  harness::SceneConfig sim_scene;
  std::string sim_scenario, sim_out, sim_truth, sim_connect, sim_scene_file;
  attach_scene(sim, sim_scene, sim_scenario);
  sim->add_option("--scene", sim_scene_file, "Scene config JSON (flags on the command line are ignored)")
      ->check(CLI::ExistingFile);
  sim->add_option("-o,--output", sim_out, "Write the measurement stream here");
  sim->add_option("--truth", sim_truth, "Write ground-truth frames here");
  sim->add_option("--connect", sim_connect, "Stream to a running aggregator in real time (host:port)");

  // replay
  auto* rep = app.add_subcommand("replay", "Fuse a recorded measurement stream deterministically");
  ConfigArgs rep_cfg;
  std::string rep_in, rep_out;
  bool rep_json = false;
  rep_cfg.attach(rep);
  rep->add_option("-i,--input", rep_in, "Measurement stream file")->required()->check(CLI::ExistingFile);
  rep->add_option("-o,--output", rep_out, "Fused frames file");
  rep->add_flag("--json", rep_json, "Print the run report as JSON");

  // run
  auto* run = app.add_subcommand("run", "Listen for devices and fuse live");
  ConfigArgs run_cfg;
  std::uint16_t run_port = 7700;
  std::string run_bind = "0.0.0.0", run_out;
  double run_seconds = 0.0;
  bool run_json = false;
  run_cfg.attach(run);
  run->add_option("--listen", run_port, "TCP port")->default_val(run_port);
  run->add_option("--bind", run_bind, "Bind address")->default_val(run_bind);
  run->add_option("-o,--output", run_out, "Fused frames file (with stage latencies)");
  run->add_option("--seconds", run_seconds, "Stop after this many seconds (0: until devices disconnect)");
  run->add_flag("--json", run_json, "Print the run report as JSON");

  // bench
  auto* bench = app.add_subcommand("bench", "Latency benchmark on a simulated scene");
  ConfigArgs bench_cfg;
  harness::SceneConfig bench_scene;
  bench_scene.n_devices = 5;
  bench_scene.n_subjects = 7;
  bench_scene.duration = 5.0;
  bench_scene.fov_deg = 60.0;
  std::string bench_scenario;
  bool bench_json = false;
  bench_cfg.attach(bench);
  attach_scene(bench, bench_scene, bench_scenario);
  bench->add_flag("--json", bench_json, "Print the run report as JSON");

  // eval
  auto* ev = app.add_subcommand("eval", "Score fused frames against ground truth");
  std::string ev_pred, ev_gt;
  double ev_tol = 0.0;
  bool ev_lenient = false, ev_panoptic = false;
  ev->add_option("--pred", ev_pred, "Fused frames file")->required()->check(CLI::ExistingFile);
  ev->add_option("--gt", ev_gt, "Ground-truth frames file, or a Panoptic joints19 file/directory")
      ->required()
      ->check(CLI::ExistingPath);
  ev->add_option("--tolerance", ev_tol, "Frame alignment tolerance, seconds (default: half the gt spacing)");
  ev->add_flag("--lenient", ev_lenient, "Skip malformed lines instead of failing");
  ev->add_flag("--panoptic", ev_panoptic, "Ground truth is in Panoptic joints19 format");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      harness::SceneConfig sc;
      if (!sim_scene_file.empty()) {
        std::ifstream in(sim_scene_file);
        sc = harness::scene_config_from_json(nlohmann::json::parse(in, nullptr, true, true));
      } else {
        sc = finish_scene(sim_scene, sim_scenario);
      }
      const auto scene = harness::generate_scene(sc);
      if (!sim_out.empty()) {
        auto out = open_out(sim_out);
        harness::write_measurements(out, scene.devices, scene.stream);
      }
      if (!sim_truth.empty()) {
        auto out = open_out(sim_truth);
        harness::FrameWriter w(out);
        for (const auto& f : scene.ground_truth()) w.write(f);
      }
      if (!sim_connect.empty()) {
        const auto [host, port] = split_endpoint(sim_connect);
        std::cerr << "streaming " << scene.stream.size() << " batches from " << scene.devices.size()
                  << " devices to " << host << ':' << port << '\n';
        send_realtime(scene.stream, host, port, wall_seconds() + 0.1);
      }
      if (sim_out.empty() && sim_truth.empty() && sim_connect.empty())
        harness::write_measurements(std::cout, scene.devices, scene.stream);
      return 0;
    }

    if (rep->parsed()) {
      const auto log = harness::read_measurements(std::filesystem::path(rep_in));
      Aggregator agg(rep_cfg.load());
      for (const auto& d : log.devices) agg.set_device_origin(d.id, d.origin);
      std::ofstream file;
      if (!rep_out.empty()) file = open_out(rep_out);
      harness::FrameWriter w(rep_out.empty() ? std::cout : file);
      const auto report = replay(log.stream, agg, [&](const FusedFrame& f) { w.write(f); });
      if (!rep_out.empty() || rep_json) print_report(report, rep_json);
      return 0;
    }

    if (run->parsed()) {
      Aggregator agg(run_cfg.load());
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      net::TcpListener listener(run_port, [&](MeasurementBatch b) { agg.queue().push(std::move(b)); }, run_bind);
      std::cerr << "listening on " << run_bind << ':' << listener.port() << " at " << agg.config().tick_rate
                << " Hz\n";
      std::ofstream file;
      std::unique_ptr<harness::FrameWriter> w;
      if (!run_out.empty()) {
        file = open_out(run_out);
        w = std::make_unique<harness::FrameWriter>(file, true);
      }
      LiveOptions opts;
      opts.max_seconds = run_seconds;
      opts.stop = &g_stop;
      const auto report = run_live(agg, listener, [&](const FusedFrame& f) { if (w) w->write(f); }, opts);
      listener.stop();
      print_report(report, run_json);
      return 0;
    }

    if (bench->parsed()) {
      const auto scene = harness::generate_scene(finish_scene(bench_scene, bench_scenario));
      Aggregator agg(bench_cfg.load());
      const auto report = replay_scene(scene, agg);
      print_report(report, bench_json);
      return report.total.mean < agg.config().latency_budget_ms ? 0 : 2;
    }

    if (ev->parsed()) {
      harness::LoadOptions lo;
      lo.strict = !ev_lenient;
      std::vector<std::string> warnings;
      const auto pred = harness::load_keypoint_file(std::filesystem::path(ev_pred), lo, &warnings);
      const auto gt = ev_panoptic ? harness::load_panoptic(ev_gt)
                                  : harness::load_keypoint_file(std::filesystem::path(ev_gt), lo, &warnings);
      for (const auto& msg : warnings) std::cerr << "warning: " << msg << '\n';
      EvaluateOptions eo;
      if (ev_tol > 0.0) eo.tolerance = ev_tol;
      std::cout << to_json(evaluate(pred, gt, eo)).dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
