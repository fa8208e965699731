#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "sgscene/bev_image.hpp"
#include "sgscene/errors.hpp"
#include "sgscene/evaluation.hpp"
#include "sgscene/service.hpp"

using namespace sgscene;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Bad flags, missing inputs and invalid configs: exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void fail_line(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path);
}

json read_json_file(const std::string& path, const std::string& what) {
  require_file(path, what);
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw UsageError(what + " is not valid JSON: " + e.what());
  }
}

TrainConfig config_from(const json& base, const json& overrides) {
  json merged = base;
  merged.update(overrides);
  try {
    return TrainConfig::from_json(merged);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
}

json phase_summary(const PhaseReport& r) {
  return {{"phase", r.phase},
          {"steps", r.steps},
          {"first_loss", r.losses.empty() ? json(nullptr) : json(r.losses.front())},
          {"final_loss", r.losses.empty() ? json(nullptr) : json(r.losses.back())},
          {"extra", r.extra}};
}

std::vector<SceneSample> load_samples(const std::string& manifest) {
  require_file(manifest, "dataset manifest");
  return load_dataset(manifest);
}

struct TrainArgs {
  std::string stage;
  std::string config;
  std::string data;
  std::string init;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<int> T, batch_size, steps_joint, steps_loc, steps_scene3d, steps_ae, steps_pretrain;
  std::optional<std::string> metrics_log;
};

int cmd_train(const TrainArgs& a) {
  json base = TrainConfig().to_json();
  std::optional<Pipeline> init;
  if (!a.init.empty()) {
    require_file(a.init, "checkpoint");
    init.emplace(load_checkpoint(a.init));
    base = init->config.to_json();
  }
  json overrides = a.config.empty() ? json::object() : read_json_file(a.config, "config file");
  if (!overrides.is_object()) throw UsageError("config file must hold a JSON object");
  auto set = [&](const char* key, const auto& opt) {
    if (opt) overrides[key] = *opt;
  };
  set("seed", a.seed);
  set("strategy", a.strategy);
  set("T", a.T);
  set("batch_size", a.batch_size);
  set("steps_joint", a.steps_joint);
  set("steps_loc", a.steps_loc);
  set("steps_scene3d", a.steps_scene3d);
  set("steps_ae", a.steps_ae);
  set("steps_pretrain", a.steps_pretrain);
  set("metrics_log", a.metrics_log);
  const TrainConfig cfg = config_from(base, overrides);

  if (a.stage == "loc" && !init) throw UsageError("--stage loc needs --init with a jointly trained checkpoint");
  Pipeline p = init ? std::move(*init) : Pipeline(cfg);
  if (p.config.T != cfg.T) throw UsageError("T cannot change when continuing from a checkpoint");
  p.config = cfg;

  const auto data = TrainingData::from_samples(load_samples(a.data));
  std::vector<PhaseReport> reports;
  if (a.stage == "joint") {
    reports.push_back(train_joint(p, data));
  } else if (a.stage == "loc") {
    reports.push_back(train_loc(p, data));
  } else if (a.stage == "scene3d") {
    reports.push_back(train_scene3d(p, data));
  } else if (a.stage == "ae") {
    reports.push_back(train_autoencoder(p, data));
  } else if (a.stage == "strategy") {
    reports = run_strategy(p, data);
  } else if (a.stage == "all") {
    reports = run_strategy(p, data);
    reports.push_back(train_scene3d(p, data));
    reports.push_back(train_autoencoder(p, data));
  }
  save_checkpoint(p, a.out);
  json phases = json::array();
  for (const auto& r : reports) phases.push_back(phase_summary(r));
  std::cout << json{{"checkpoint", a.out}, {"config", p.config.to_json()}, {"trained", p.trained}, {"phases", phases}}.dump(2)
            << std::endl;
  return 0;
}

Pipeline load_ckpt_arg(const std::string& path) {
  require_file(path, "checkpoint");
  return load_checkpoint(path);
}

int cmd_sample(const std::string& graph_path, const std::string& ckpt, std::uint64_t seed, std::optional<double> tau,
               const std::string& out, const std::string& map_out, const std::string& png_out) {
  require_file(graph_path, "graph file");
  SceneGraph graph;
  try {
    graph = json_from_text(read_file(graph_path));
  } catch (const ParseError& e) {
    throw UsageError(std::string("graph file: ") + e.what());
  }
  auto report = validate_graph(graph);
  if (!report.ok()) throw UsageError("invalid graph: " + report.violations.front().message);
  Pipeline p = load_ckpt_arg(ckpt);
  const double t = tau.value_or(p.config.tau);
  if (!(t > 0.0)) throw UsageError("--tau must be positive");
  const auto map = sample_map(p, graph, seed, t);
  const auto scene = sample_scene(p, map, seed);
  write_vxs_file(scene, out);
  if (!map_out.empty()) write_bev_file(map, map_out);
  if (!png_out.empty()) write_file_atomic(png_out, encode_bev_png(map));
  json side = scene_sidecar(scene, map, graph);
  side["scene"] = out;
  side["seed"] = seed;
  side["tau"] = t;
  side["config"] = p.config.to_json();
  std::cout << side.dump(2) << std::endl;
  return 0;
}

int cmd_extract(const std::string& scene_path, const std::string& out) {
  require_file(scene_path, "scene file");
  const auto graph = extract_graph(read_vxs_file(scene_path));
  const auto text = graph_to_json(graph);
  if (out.empty()) {
    std::cout << text << std::endl;
  } else {
    write_file_atomic(out, text);
  }
  return 0;
}

int cmd_eval(const std::string& ckpt, int n, const std::string& report_path, std::uint64_t seed, int max_count,
             std::optional<double> tau) {
  if (n < kMinF3dScenes) throw UsageError("--n must be at least 16 for F3D");
  Pipeline p = load_ckpt_arg(ckpt);
  if (!p.is_trained("ae")) throw UsageError("checkpoint has no trained autoencoder (train --stage ae)");
  const auto held_out = make_synthetic_dataset(n, seed, max_count);
  std::vector<SceneGraph> graphs;
  std::vector<VoxelScene> real;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < held_out.size(); ++i) {
    graphs.push_back(held_out[i].graph);
    real.push_back(held_out[i].scene);
    seeds.push_back(seed + i);
  }
  const auto maps = sample_maps(p, graphs, seeds, tau.value_or(p.config.tau));
  const auto scenes = sample_scenes(p, maps, seeds);
  auto report = evaluate_scenes(p, scenes, graphs, real).to_json();
  report["eval"] = {{"checkpoint", ckpt}, {"seed", seed}, {"max_count", max_count}, {"tau", tau.value_or(p.config.tau)}};
  write_file_atomic(report_path, report.dump(2));
  std::cout << report.dump(2) << std::endl;
  return 0;
}

int cmd_ablate(const std::string& grid_path, const std::string& data_path, const std::string& stages_path, int n_eval,
               std::uint64_t eval_seed, int max_count, const std::string& out_dir) {
  AblationGrid grid;
  try {
    grid = ablation_grid_from_json(read_json_file(grid_path, "grid file"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("invalid grid: ") + e.what());
  }
  if (n_eval < kMinF3dScenes) throw UsageError("--n-eval must be at least 16 for F3D");
  Pipeline stages = load_ckpt_arg(stages_path);
  if (!stages.is_trained("scene") || !stages.is_trained("ae")) {
    throw UsageError("--stages checkpoint needs trained scene3d and autoencoder groups");
  }
  const auto data = TrainingData::from_samples(load_samples(data_path));
  const auto held_out = make_synthetic_dataset(n_eval, eval_seed, max_count);
  AblationSetup setup;
  setup.train = &data;
  setup.stages = &stages;
  setup.sample_seed = eval_seed;
  for (const auto& s : held_out) {
    setup.eval_graphs.push_back(s.graph);
    setup.real_scenes.push_back(s.scene);
  }
  setup.on_row = [](const AblationRow& row) {
    std::cerr << json{{"row", row.config}, {"mae", row.report.mae}, {"jaccard", row.report.jaccard}}.dump() << std::endl;
  };
  const auto rows = ablation_sweep(grid, setup);
  fs::create_directories(out_dir);
  write_file_atomic((fs::path(out_dir) / "ablation.csv").string(), ablation_csv(rows));
  write_file_atomic((fs::path(out_dir) / "ablation.json").string(), ablation_json(rows).dump(2));
  std::cout << ablation_json(rows).dump(2) << std::endl;
  return 0;
}

SceneService* g_service = nullptr;

int cmd_serve(const std::string& ckpt, const std::string& store, const std::string& listen, bool no_text2graph) {
  auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw UsageError("--listen must be host:port");
  const std::string host = listen.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("--listen must be host:port");
  }
  if (!ckpt.empty()) require_file(ckpt, "checkpoint");
  SceneService service(ServiceConfig{store, ckpt}, no_text2graph ? nullptr : std::make_unique<MockTextToGraph>());
  if (port == 0) {
    port = service.bind_any_port(host);
    if (port < 0) throw std::runtime_error("cannot bind " + host);
  } else if (!service.bind(host, port)) {
    throw std::runtime_error("cannot bind " + listen);
  }
  g_service = &service;
  std::signal(SIGINT, [](int) { g_service->stop(); });
  std::signal(SIGTERM, [](int) { g_service->stop(); });
  std::cout << json{{"listening", host + ":" + std::to_string(port)}, {"checkpoint_loaded", service.has_pipeline()}}.dump()
            << std::endl;
  service.listen_after_bind();
  g_service = nullptr;
  return 0;
}

const char* env_or(const char* name, const char* fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

}  // namespace

int main(int argc, char** argv) {
  init_runtime();
  CLI::App app{"Scene-graph-conditioned 3D outdoor scene generation"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic paired dataset and its manifest");
  int gen_n = 0, gen_max = 4;
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--n", gen_n, "Number of samples")->required()->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Seed of sample 0 (sample i uses seed + i)")->required();
  gen->add_option("--max-count", gen_max, "Max instances per countable class")->check(CLI::Range(0, kMaxCountPerClass));

  auto* train = app.add_subcommand("train", "Train one stage and write a checkpoint");
  TrainArgs ta;
  train->add_option("--stage", ta.stage, "joint | loc | scene3d | ae | strategy | all")
      ->required()
      ->check(CLI::IsMember({"joint", "loc", "scene3d", "ae", "strategy", "all"}));
  train->add_option("--config", ta.config, "TrainConfig JSON (flags override it)");
  train->add_option("--data", ta.data, "Dataset manifest (manifest.jsonl)")->required();
  train->add_option("--init", ta.init, "Continue from this checkpoint");
  train->add_option("--out", ta.out, "Output checkpoint")->required();
  train->add_option("--seed", ta.seed);
  train->add_option("--strategy", ta.strategy)->check(CLI::IsMember({"a", "b", "c", "d"}));
  train->add_option("--T", ta.T);
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--steps-joint", ta.steps_joint);
  train->add_option("--steps-pretrain", ta.steps_pretrain);
  train->add_option("--steps-loc", ta.steps_loc);
  train->add_option("--steps-scene3d", ta.steps_scene3d);
  train->add_option("--steps-ae", ta.steps_ae);
  train->add_option("--metrics-log", ta.metrics_log, "Append JSON-lines loss records here");

  auto* sample = app.add_subcommand("sample", "Generate one scene from a scene-graph JSON file");
  std::string s_graph, s_ckpt, s_out, s_map, s_png;
  std::uint64_t s_seed = 0;
  std::optional<double> s_tau;
  sample->add_option("--graph", s_graph)->required();
  sample->add_option("--ckpt", s_ckpt)->required();
  sample->add_option("--seed", s_seed)->required();
  sample->add_option("--tau", s_tau, "Gumbel temperature (default: checkpoint config)");
  sample->add_option("--out", s_out, "Output VXS1 scene")->required();
  sample->add_option("--map-out", s_map, "Also write the generated BEV map (BEV1)");
  sample->add_option("--png", s_png, "Also write the BEV map as PNG");

  auto* extract = app.add_subcommand("extract", "Extract the scene graph of a VXS1 scene");
  std::string e_scene, e_out;
  extract->add_option("--scene", e_scene)->required();
  extract->add_option("--out", e_out, "Write the graph here instead of stdout");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out synthetic graphs");
  std::string v_ckpt, v_report;
  int v_n = 0, v_max = 4;
  std::uint64_t v_seed = 1000000;
  std::optional<double> v_tau;
  eval->add_option("--ckpt", v_ckpt)->required();
  eval->add_option("--n", v_n)->required();
  eval->add_option("--report", v_report, "MetricsReport JSON output")->required();
  eval->add_option("--seed", v_seed, "Seed of the held-out set and of sampling");
  eval->add_option("--max-count", v_max)->check(CLI::Range(0, kMaxCountPerClass));
  eval->add_option("--tau", v_tau);

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every row of an ablation grid");
  std::string a_grid, a_data, a_stages, a_out = "ablation";
  int a_n = 64, a_max = 4;
  std::uint64_t a_seed = 1000000;
  ablate->add_option("--grid", a_grid)->required();
  ablate->add_option("--data", a_data, "Training manifest")->required();
  ablate->add_option("--stages", a_stages, "Checkpoint with trained scene3d and autoencoder")->required();
  ablate->add_option("--n-eval", a_n);
  ablate->add_option("--eval-seed", a_seed);
  ablate->add_option("--max-count", a_max)->check(CLI::Range(0, kMaxCountPerClass));
  ablate->add_option("--out-dir", a_out);

  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::string sv_ckpt = env_or("SGSCENE_CHECKPOINT", "");
  std::string sv_store = env_or("SGSCENE_STORE", "sgscene-store");
  std::string sv_listen = env_or("SGSCENE_LISTEN", "127.0.0.1:8080");
  bool sv_no_t2g = false;
  serve->add_option("--ckpt", sv_ckpt, "Checkpoint (env SGSCENE_CHECKPOINT)");
  serve->add_option("--store", sv_store, "Store directory (env SGSCENE_STORE)");
  serve->add_option("--listen", sv_listen, "host:port, port 0 picks one (env SGSCENE_LISTEN)");
  serve->add_flag("--no-text2graph", sv_no_t2g, "Disable the text-to-graph adapter");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("usage", e.what());
    return 2;
  }

  try {
    if (*gen) {
      std::cout << json{{"manifest", write_synthetic_dataset(gen_out, gen_n, gen_seed, gen_max)}}.dump() << std::endl;
      return 0;
    }
    if (*train) return cmd_train(ta);
    if (*sample) return cmd_sample(s_graph, s_ckpt, s_seed, s_tau, s_out, s_map, s_png);
    if (*extract) return cmd_extract(e_scene, e_out);
    if (*eval) return cmd_eval(v_ckpt, v_n, v_report, v_seed, v_max, v_tau);
    if (*ablate) return cmd_ablate(a_grid, a_data, a_stages, a_n, a_seed, a_max, a_out);
    if (*serve) return cmd_serve(sv_ckpt, sv_store, sv_listen, sv_no_t2g);
  } catch (const UsageError& e) {
    fail_line("usage", e.what());
    return 2;
  } catch (const ParseError& e) {
    fail_line("parse", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    fail_line("divergence", e.what());
    return 1;
  } catch (const std::exception& e) {
    fail_line("runtime", e.what());
    return 1;
  }
  return 0;
}
