#include "sgscene/pipeline.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

#include "sgscene/errors.hpp"

namespace sgscene {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'G', 'C', 'K', 'P', 'T', '0', '1'};
constexpr int kFormatVersion = 1;
const std::vector<std::string> kGroups = {"encoder", "loc", "map", "scene", "ae"};

static_assert(std::endian::native == std::endian::little, "checkpoint blocks are written in host order");

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& m) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& kv : m.named_parameters(true)) out.emplace_back(kv.key(), kv.value());
  for (const auto& kv : m.named_buffers(true)) out.emplace_back(kv.key(), kv.value());
  return out;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

void check_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
}

void check_positive(long long v, const char* name) {
  if (v <= 0) throw std::invalid_argument(std::string(name) + " must be positive");
}

void check_non_negative(long long v, const char* name) {
  if (v < 0) throw std::invalid_argument(std::string(name) + " must be non-negative");
}

}  // namespace

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::A: return "a";
    case Strategy::B: return "b";
    case Strategy::C: return "c";
    case Strategy::D: return "d";
  }
  return "d";
}

Strategy strategy_from_name(const std::string& s) {
  if (s == "a") return Strategy::A;
  if (s == "b") return Strategy::B;
  if (s == "c") return Strategy::C;
  if (s == "d") return Strategy::D;
  throw std::invalid_argument("unknown strategy '" + s + "' (expected a, b, c or d)");
}

json TrainConfig::to_json() const {
  return json{{"uncond_proportion", uncond_proportion},
              {"feature_mask_rate", feature_mask_rate},
              {"tau", tau},
              {"aux_weight", aux_weight},
              {"lambda", lambda},
              {"lr", lr},
              {"grad_clip", grad_clip},
              {"T", T},
              {"batch_size", batch_size},
              {"batch_size_3d", batch_size_3d},
              {"steps_joint", steps_joint},
              {"steps_pretrain", steps_pretrain},
              {"steps_loc", steps_loc},
              {"steps_scene3d", steps_scene3d},
              {"steps_ae", steps_ae},
              {"seed", seed},
              {"edge_recon", edge_recon},
              {"node_cls", node_cls},
              {"strategy", strategy_name(strategy)},
              {"log_every", log_every},
              {"metrics_log", metrics_log}};
}

TrainConfig TrainConfig::from_json(const json& j) { return from_json(j, TrainConfig()); }

TrainConfig TrainConfig::from_json(const json& j, const TrainConfig& defaults) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  TrainConfig c = defaults;
  const std::set<std::string> known = [&] {
    std::set<std::string> k;
    const json all = c.to_json();
    for (const auto& [key, _] : all.items()) k.insert(key);
    return k;
  }();
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("uncond_proportion", c.uncond_proportion);
    get("feature_mask_rate", c.feature_mask_rate);
    get("tau", c.tau);
    get("aux_weight", c.aux_weight);
    get("lambda", c.lambda);
    get("lr", c.lr);
    get("grad_clip", c.grad_clip);
    get("T", c.T);
    get("batch_size", c.batch_size);
    get("batch_size_3d", c.batch_size_3d);
    get("steps_joint", c.steps_joint);
    get("steps_pretrain", c.steps_pretrain);
    get("steps_loc", c.steps_loc);
    get("steps_scene3d", c.steps_scene3d);
    get("steps_ae", c.steps_ae);
    get("seed", c.seed);
    get("edge_recon", c.edge_recon);
    get("node_cls", c.node_cls);
    get("log_every", c.log_every);
    get("metrics_log", c.metrics_log);
    if (j.contains("strategy")) c.strategy = strategy_from_name(j.at("strategy").get<std::string>());
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  check_unit(uncond_proportion, "uncond_proportion");
  check_unit(feature_mask_rate, "feature_mask_rate");
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (!(aux_weight >= 0.0)) throw std::invalid_argument("aux_weight must be non-negative");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(grad_clip >= 0.0)) throw std::invalid_argument("grad_clip must be >= 0");
  check_positive(T, "T");
  check_positive(batch_size, "batch_size");
  check_positive(batch_size_3d, "batch_size_3d");
  check_non_negative(steps_joint, "steps_joint");
  check_non_negative(steps_pretrain, "steps_pretrain");
  check_non_negative(steps_loc, "steps_loc");
  check_non_negative(steps_scene3d, "steps_scene3d");
  check_non_negative(steps_ae, "steps_ae");
  check_positive(log_every, "log_every");
}

Pipeline::Pipeline(const TrainConfig& cfg) : config(cfg) {
  config.validate();
  torch::manual_seed(config.seed);
  schedule = build_schedule(config.T, kNumClasses);
  encoder = GraphEncoder();
  loc = LocHead();
  map_denoiser = MapDenoiser(config.T);
  scene_denoiser = SceneDenoiser(config.T);
  autoencoder = SceneAutoencoder();
  for (const auto& g : kGroups) trained[g] = false;
}

std::vector<std::pair<std::string, torch::nn::Module*>> Pipeline::groups() {
  return {{"encoder", encoder.get()},
          {"loc", loc.get()},
          {"map", map_denoiser.get()},
          {"scene", scene_denoiser.get()},
          {"ae", autoencoder.get()}};
}

std::vector<std::pair<std::string, const torch::nn::Module*>> Pipeline::groups() const {
  return {{"encoder", encoder.get()},
          {"loc", loc.get()},
          {"map", map_denoiser.get()},
          {"scene", scene_denoiser.get()},
          {"ae", autoencoder.get()}};
}

bool Pipeline::is_trained(const std::string& group) const {
  auto it = trained.find(group);
  return it != trained.end() && it->second;
}

void copy_group(const Pipeline& from, Pipeline& to, const std::string& group) {
  const torch::nn::Module* src = nullptr;
  torch::nn::Module* dst = nullptr;
  for (const auto& [name, m] : from.groups()) {
    if (name == group) src = m;
  }
  for (const auto& [name, m] : to.groups()) {
    if (name == group) dst = m;
  }
  if (!src || !dst) throw std::invalid_argument("unknown parameter group " + group);
  auto a = named_state(*src);
  auto b = named_state(*dst);
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < a.size(); ++i) b[i].second.copy_(a[i].second);
  to.trained[group] = from.is_trained(group);
}

std::string checkpoint_bytes(const Pipeline& p) {
  json blocks = json::array();
  std::string payload;
  auto add_block = [&](const std::string& name, const std::string& dtype, const std::vector<int64_t>& shape,
                       const void* data, std::size_t n) {
    blocks.push_back({{"name", name}, {"dtype", dtype}, {"shape", shape}, {"offset", payload.size()}, {"nbytes", n}});
    payload.append(static_cast<const char*>(data), n);
  };
  json topology = json::object();
  for (const auto& [group, module] : p.groups()) {
    json entries = json::array();
    for (const auto& [name, tensor] : named_state(*module)) {
      auto t = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
      add_block(group + "." + name, "f32", t.sizes().vec(), t.data_ptr(), static_cast<std::size_t>(t.numel()) * 4);
      entries.push_back(name);
    }
    topology[group] = entries;
  }
  add_block("rng_state", "u8", {static_cast<int64_t>(p.rng_state.size())}, p.rng_state.data(), p.rng_state.size());

  json header = {{"format", "SGCKPT"},
                 {"version", kFormatVersion},
                 {"palette", kPaletteVersion},
                 {"config", p.config.to_json()},
                 {"trained", p.trained},
                 {"schedule", {{"kind", "uniform"}, {"T", p.schedule.T}, {"c", p.schedule.c}, {"betas", p.schedule.betas}}},
                 {"architecture",
                  {{"map_denoiser", {{"base", 32}, {"in_channels", kNumClasses + kEmbedDim + 3}}},
                   {"scene_denoiser", {{"base", 16}, {"in_channels", 2 * kNumClasses + 2}}},
                   {"autoencoder", {{"feature_dim", kAeFeatureDim}}},
                   {"encoder", {{"feature_dim", kFeatureDim}, {"embed_dim", kEmbedDim}}}}},
                 {"topology", topology},
                 {"blocks", blocks}};
  const std::string head = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  const std::uint64_t len = head.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += head;
  out += payload;
  return out;
}

void save_checkpoint(const Pipeline& p, const std::string& path) { write_file_atomic(path, checkpoint_bytes(p)); }

Pipeline checkpoint_from_bytes(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("checkpoint", "bad magic (expected SGCKPT01)");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + sizeof(kMagic), sizeof(len));
  const std::size_t head_start = sizeof(kMagic) + sizeof(len);
  if (len > bytes.size() - head_start) throw ParseError("checkpoint", "truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(head_start, len));
  } catch (const json::exception& e) {
    throw ParseError("checkpoint header", e.what());
  }
  if (header.value("version", 0) != kFormatVersion) throw ParseError("checkpoint/version", "unsupported version");
  if (header.value("palette", std::string()) != kPaletteVersion) {
    throw ParseError("checkpoint/palette", "palette version mismatch");
  }
  const std::size_t payload_start = head_start + len;
  const std::size_t payload_size = bytes.size() - payload_start;

  TrainConfig cfg;
  try {
    cfg = TrainConfig::from_json(header.at("config"));
  } catch (const std::exception& e) {
    throw ParseError("checkpoint/config", e.what());
  }
  Pipeline p(cfg);
  p.schedule = schedule_from_betas(header.at("schedule").at("betas").get<std::vector<double>>(), kNumClasses);
  for (const auto& [k, v] : header.at("trained").items()) p.trained[k] = v.get<bool>();

  std::map<std::string, json> by_name;
  for (const auto& b : header.at("blocks")) by_name[b.at("name").get<std::string>()] = b;
  auto block_data = [&](const std::string& name, std::size_t expected) -> const char* {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("checkpoint/blocks", "missing block " + name);
    const auto off = it->second.at("offset").get<std::size_t>();
    const auto n = it->second.at("nbytes").get<std::size_t>();
    if (expected != static_cast<std::size_t>(-1) && n != expected) {
      throw ParseError("checkpoint/blocks/" + name, "size mismatch");
    }
    if (off > payload_size || n > payload_size - off) throw ParseError("checkpoint/blocks/" + name, "out of bounds");
    return bytes.data() + payload_start + off;
  };

  torch::NoGradGuard no_grad;
  for (auto& [group, module] : p.groups()) {
    for (auto& [name, tensor] : named_state(*module)) {
      const std::string full = group + "." + name;
      auto shape = by_name.count(full) ? by_name[full].at("shape").get<std::vector<int64_t>>() : std::vector<int64_t>{};
      if (by_name.count(full) && shape != tensor.sizes().vec()) {
        throw ShapeError("checkpoint block " + full + " has an unexpected shape");
      }
      const std::size_t n = static_cast<std::size_t>(tensor.numel()) * 4;
      const char* src = block_data(full, n);
      auto host = torch::empty(tensor.sizes(), torch::kFloat32);
      std::memcpy(host.data_ptr(), src, n);
      tensor.copy_(host);
    }
  }
  const auto& rng = by_name.count("rng_state") ? by_name["rng_state"] : json();
  if (!rng.is_null()) {
    const auto n = rng.at("nbytes").get<std::size_t>();
    p.rng_state.assign(block_data("rng_state", n), n);
  }
  return p;
}

Pipeline load_checkpoint(const std::string& path) { return checkpoint_from_bytes(read_file(path)); }

std::string params_digest(const torch::nn::Module& m) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, tensor] : named_state(m)) {
    h = fnv1a(name.data(), name.size(), h);
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    h = fnv1a(t.data_ptr(), static_cast<std::size_t>(t.numel()) * t.element_size(), h);
  }
  return hex64(h);
}

std::string file_digest(const std::string& bytes) { return hex64(fnv1a(bytes.data(), bytes.size())); }

void init_runtime() {
  at::set_num_threads(1);
  at::set_num_interop_threads(1);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

torch::Tensor maps_tensor(const std::vector<BevMap>& maps) {
  if (maps.empty()) return torch::zeros({0, kBevH, kBevW}, torch::kInt64);
  const int H = maps[0].height, W = maps[0].width;
  auto out = torch::empty({static_cast<int64_t>(maps.size()), H, W}, torch::kUInt8);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].height != H || maps[i].width != W) throw ShapeError("maps differ in size");
    std::memcpy(out[static_cast<int64_t>(i)].data_ptr(), maps[i].labels.data(), maps[i].labels.size());
  }
  return out.to(torch::kInt64);
}

torch::Tensor scenes_tensor(const std::vector<VoxelScene>& scenes) {
  if (scenes.empty()) return torch::zeros({0, kSceneD, kSceneH, kSceneW}, torch::kInt64);
  const auto& s0 = scenes[0];
  auto out = torch::empty({static_cast<int64_t>(scenes.size()), s0.depth, s0.height, s0.width}, torch::kUInt8);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    if (s.height != s0.height || s.width != s0.width || s.depth != s0.depth) throw ShapeError("scenes differ in size");
    std::memcpy(out[static_cast<int64_t>(i)].data_ptr(), s.labels.data(), s.labels.size());
  }
  return out.to(torch::kInt64);
}

std::vector<BevMap> maps_from_tensor(const torch::Tensor& t) {
  if (t.dim() != 3) throw ShapeError("expected (B, H, W) maps");
  auto u8 = t.to(torch::kUInt8).contiguous();
  std::vector<BevMap> out;
  for (int64_t b = 0; b < u8.size(0); ++b) {
    BevMap m = BevMap::filled(static_cast<int>(u8.size(1)), static_cast<int>(u8.size(2)));
    std::memcpy(m.labels.data(), u8[b].data_ptr(), m.labels.size());
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<VoxelScene> scenes_from_tensor(const torch::Tensor& t) {
  if (t.dim() != 4) throw ShapeError("expected (B, D, H, W) scenes");
  auto u8 = t.to(torch::kUInt8).contiguous();
  std::vector<VoxelScene> out;
  for (int64_t b = 0; b < u8.size(0); ++b) {
    VoxelScene s = VoxelScene::filled(static_cast<int>(u8.size(2)), static_cast<int>(u8.size(3)),
                                      static_cast<int>(u8.size(1)));
    std::memcpy(s.labels.data(), u8[b].data_ptr(), s.labels.size());
    out.push_back(std::move(s));
  }
  return out;
}

MapCondition build_condition(Pipeline& p, const std::vector<SceneGraph>& graphs, double tau,
                             std::vector<at::Generator>& gens, std::vector<std::vector<PatchPos>>* placed) {
  if (gens.size() != graphs.size()) throw std::invalid_argument("one generator per graph required");
  for (const auto& g : graphs) {
    auto report = validate_graph(g);
    if (!report.ok()) throw std::invalid_argument("invalid graph: " + report.violations.front().message);
  }
  torch::NoGradGuard no_grad;
  auto batch = make_graph_batch(graphs);
  auto cane = p.encoder->encode(batch);
  const int64_t M = batch.inst_rows.size(0);
  auto rows = cane.per_node.index_select(0, batch.inst_rows);
  auto patch = batch.inst_patch.clone();
  auto known = batch.inst_known.to(torch::kBool);
  if (placed) placed->assign(graphs.size(), {});
  for (int64_t m = 0; m < M; ++m) {
    const auto g = batch.inst_graph[m].item<int64_t>();
    if (!known[m].item<bool>()) {
      auto pos = localize(rows[m], p.loc, tau, gens[static_cast<std::size_t>(g)]);
      patch[m] = pos.index();
    }
    if (placed) (*placed)[static_cast<std::size_t>(g)].push_back(PatchPos::from_index(static_cast<int>(patch[m].item<int64_t>())));
  }
  MapCondition cond;
  cond.bem = assemble_bem(rows, patch, batch.inst_graph, batch.num_graphs);
  cond.global = cane.per_node.index_select(0, batch.road_rows);
  return cond;
}

namespace {

std::vector<BevMap> run_map_sampler(Pipeline& p, const MapCondition& cond, std::vector<at::Generator>& gens) {
  torch::NoGradGuard no_grad;
  const auto B = static_cast<int64_t>(gens.size());
  Denoiser denoiser = [&](const torch::Tensor& x_t, const torch::Tensor& t) {
    return p.map_denoiser->forward(x_t, t, cond.bem, cond.global).permute({0, 2, 3, 1});
  };
  return maps_from_tensor(p_sample_loop(denoiser, {B, kBevH, kBevW}, p.schedule, gens));
}

constexpr std::size_t kMapChunk = 16;
constexpr std::size_t kSceneChunk = 4;
constexpr std::uint64_t kMapStream = 0;
constexpr std::uint64_t kSceneStream = 1;

}  // namespace

std::vector<BevMap> sample_maps(Pipeline& p, const std::vector<SceneGraph>& graphs,
                                const std::vector<std::uint64_t>& seeds, double tau, bool conditional) {
  if (seeds.size() != graphs.size()) throw std::invalid_argument("one seed per graph required");
  std::vector<BevMap> out;
  for_chunks(graphs.size(), kMapChunk, [&](std::size_t lo, std::size_t hi) {
    std::vector<std::uint64_t> chunk_seeds;
    for (std::size_t i = lo; i < hi; ++i) chunk_seeds.push_back(derive_seed(seeds[i], kMapStream));
    auto gens = make_generators(chunk_seeds);
    std::vector<SceneGraph> chunk(graphs.begin() + static_cast<std::ptrdiff_t>(lo),
                                  graphs.begin() + static_cast<std::ptrdiff_t>(hi));
    MapCondition cond;
    if (conditional) {
      cond = build_condition(p, chunk, tau, gens);
    } else {
      cond.bem = torch::zeros({static_cast<int64_t>(chunk.size()), kEmbedDim, kBevH, kBevW});
      cond.global = torch::zeros({static_cast<int64_t>(chunk.size()), kEmbedDim});
    }
    for (auto& m : run_map_sampler(p, cond, gens)) out.push_back(std::move(m));
  });
  return out;
}

std::vector<BevMap> sample_maps_unconditional(Pipeline& p, const std::vector<std::uint64_t>& seeds) {
  std::vector<SceneGraph> placeholders(seeds.size());
  return sample_maps(p, placeholders, seeds, p.config.tau, false);
}

std::vector<VoxelScene> sample_scenes(Pipeline& p, const std::vector<BevMap>& maps,
                                      const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() != maps.size()) throw std::invalid_argument("one seed per map required");
  torch::NoGradGuard no_grad;
  std::vector<VoxelScene> out;
  for_chunks(maps.size(), kSceneChunk, [&](std::size_t lo, std::size_t hi) {
    std::vector<std::uint64_t> chunk_seeds;
    for (std::size_t i = lo; i < hi; ++i) chunk_seeds.push_back(derive_seed(seeds[i], kSceneStream));
    auto gens = make_generators(chunk_seeds);
    auto chunk = maps_tensor({maps.begin() + static_cast<std::ptrdiff_t>(lo), maps.begin() + static_cast<std::ptrdiff_t>(hi)});
    auto cond = upscale_map(chunk, kSceneH, kSceneW);
    const auto B = static_cast<int64_t>(hi - lo);
    Denoiser denoiser = [&](const torch::Tensor& z_t, const torch::Tensor& t) {
      return p.scene_denoiser->forward(z_t, t, cond).permute({0, 2, 3, 4, 1});
    };
    for (auto& s : scenes_from_tensor(p_sample_loop(denoiser, {B, kSceneD, kSceneH, kSceneW}, p.schedule, gens))) {
      out.push_back(std::move(s));
    }
  });
  return out;
}

BevMap sample_map(Pipeline& p, const SceneGraph& graph, std::uint64_t seed, double tau) {
  return sample_maps(p, {graph}, {seed}, tau).front();
}

VoxelScene sample_scene(Pipeline& p, const BevMap& map, std::uint64_t seed) {
  return sample_scenes(p, {map}, {seed}).front();
}

}  // namespace sgscene
