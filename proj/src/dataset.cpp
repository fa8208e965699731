#include "sgscene/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "sgscene/components.hpp"
#include "sgscene/errors.hpp"

namespace sgscene {

namespace {

constexpr int kVehicleHeight = 2;
constexpr int kPedestrianHeight = 2;
constexpr int kPoleHeight = 4;
constexpr int kBuildingHeight = 6;
constexpr int kVegetationHeight = 3;
constexpr int kSidewalkWidth = 2;  // off-road band (Chebyshev distance) where pedestrians/poles stand

using Rng = std::mt19937_64;

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

BevMask rotate_mask_ccw(const BevMask& m) { return augment_mask(m, AugmentOp::Rot90); }

void fill_rect(BevMask& m, int y0, int y1, int x0, int x1) {
  for (int y = std::max(0, y0); y < std::min(m.height, y1); ++y) {
    for (int x = std::max(0, x0); x < std::min(m.width, x1); ++x) m.set(y, x);
  }
}

BevMask make_road_layout(RoadType type, Rng& rng) {
  const int n = kBevH;
  BevMask m = BevMask::empty(n, n);
  const int w = uniform_int(rng, 0, 1) == 0 ? 6 : 8;
  const int ch = n / 2 + uniform_int(rng, -4, 4);  // horizontal band centre row
  const int cv = n / 2 + uniform_int(rng, -4, 4);  // vertical band centre column
  const int h0 = ch - w / 2, h1 = ch + w / 2;
  const int v0 = cv - w / 2, v1 = cv + w / 2;
  switch (type) {
    case RoadType::StraightRoad:
      fill_rect(m, h0, h1, 0, n);
      break;
    case RoadType::Crossroad:
      fill_rect(m, h0, h1, 0, n);
      fill_rect(m, 0, n, v0, v1);
      break;
    case RoadType::TJunction:
      fill_rect(m, h0, h1, 0, n);
      fill_rect(m, 0, ch, v0, v1);
      break;
    case RoadType::BendRoad:
      fill_rect(m, h0, h1, 0, v1);
      fill_rect(m, 0, h1, v0, v1);
      break;
    case RoadType::Others:
      fill_rect(m, h0, h1, 0, uniform_int(rng, 12, 22));
      break;
  }
  const int turns = uniform_int(rng, 0, 3);
  for (int k = 0; k < turns; ++k) m = rotate_mask_ccw(m);
  return m;
}

// Chebyshev distance to the nearest road cell, capped at `cap`.
std::vector<int> road_distance(const BevMask& road, int cap) {
  const int H = road.height, W = road.width;
  std::vector<int> dist(static_cast<std::size_t>(H * W), cap);
  std::deque<int> q;
  for (int i = 0; i < H * W; ++i) {
    if (road.cells[static_cast<std::size_t>(i)]) {
      dist[static_cast<std::size_t>(i)] = 0;
      q.push_back(i);
    }
  }
  while (!q.empty()) {
    int v = q.front();
    q.pop_front();
    int y = v / W, x = v % W;
    int d = dist[static_cast<std::size_t>(v)];
    if (d + 1 >= cap) continue;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
        auto& du = dist[static_cast<std::size_t>(yy * W + xx)];
        if (du > d + 1) {
          du = d + 1;
          q.push_back(yy * W + xx);
        }
      }
    }
  }
  return dist;
}

struct Footprint {
  int y = 0, x = 0, h = 1, w = 1;
  double cy() const { return y + h / 2.0; }
  double cx() const { return x + w / 2.0; }
  PatchPos patch() const {
    return {static_cast<int>(std::floor(cy() / kPatchCells)),
            static_cast<int>(std::floor(cx() / kPatchCells))};
  }
};

bool on_patch_boundary(double c) { return std::fmod(c, static_cast<double>(kPatchCells)) == 0.0; }

std::string id_prefix(SemanticClass c) {
  switch (c) {
    case SemanticClass::Vehicle: return "veh";
    case SemanticClass::Pedestrian: return "ped";
    case SemanticClass::Pole: return "pole";
    default: return "obj";
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

SceneSample generate_scene(const GenParams& params, double delta_d) {
  for (int c : params.counts) {
    if (c < 0 || c > kMaxCountPerClass) {
      throw std::invalid_argument("generate_scene: per-class count must be in [0, 12]");
    }
  }
  Rng rng(params.seed);
  const int H = kSceneH, W = kSceneW, D = kSceneD;

  const BevMask road = make_road_layout(params.road_type, rng);
  const auto dist = road_distance(road, 8);
  auto dist_at = [&](int y, int x) { return dist[static_cast<std::size_t>(y * W + x)]; };

  // Column profiles: 0 = ground only, else the background class standing on the ground.
  std::vector<SemanticClass> column(static_cast<std::size_t>(H * W), SemanticClass::Free);
  for (int by = 0; by < H; by += 8) {
    for (int bx = 0; bx < W; bx += 8) {
      double kind = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      if (kind < 0.5) {
        for (int y = by + 1; y < by + 7; ++y) {
          for (int x = bx + 1; x < bx + 7; ++x) {
            if (dist_at(y, x) > kSidewalkWidth) column[static_cast<std::size_t>(y * W + x)] = SemanticClass::Building;
          }
        }
      } else if (kind < 0.75) {
        for (int t = 0; t < 2; ++t) {
          int ty = by + uniform_int(rng, 0, 6);
          int tx = bx + uniform_int(rng, 0, 6);
          for (int y = ty; y < ty + 2; ++y) {
            for (int x = tx; x < tx + 2; ++x) {
              if (dist_at(y, x) > kSidewalkWidth) column[static_cast<std::size_t>(y * W + x)] = SemanticClass::Vegetation;
            }
          }
        }
      }
    }
  }

  // Instance placement: enumerate every admissible footprint, pick one uniformly.
  std::vector<std::uint8_t> occupied(static_cast<std::size_t>(H * W), 0);
  std::vector<std::uint8_t> patch_used(static_cast<std::size_t>(kPatchGrid * kPatchGrid), 0);
  struct Placed {
    SemanticClass cls;
    Footprint fp;
  };
  std::vector<Placed> placed;

  auto admissible = [&](const Footprint& fp, bool on_road) {
    if (fp.y < 0 || fp.x < 0 || fp.y + fp.h > H || fp.x + fp.w > W) return false;
    if (on_patch_boundary(fp.cy()) || on_patch_boundary(fp.cx())) return false;
    if (patch_used[static_cast<std::size_t>(fp.patch().index())]) return false;
    for (int y = fp.y; y < fp.y + fp.h; ++y) {
      for (int x = fp.x; x < fp.x + fp.w; ++x) {
        int d = dist_at(y, x);
        if (on_road ? d != 0 : (d < 1 || d > kSidewalkWidth)) return false;
      }
    }
    for (int y = fp.y - 1; y <= fp.y + fp.h; ++y) {
      for (int x = fp.x - 1; x <= fp.x + fp.w; ++x) {
        if (y < 0 || y >= H || x < 0 || x >= W) continue;
        if (occupied[static_cast<std::size_t>(y * W + x)]) return false;
      }
    }
    return true;
  };

  for (int k = 0; k < kNumCountable; ++k) {
    const SemanticClass cls = kCountableClasses[static_cast<std::size_t>(k)];
    for (int i = 0; i < params.counts[static_cast<std::size_t>(k)]; ++i) {
      std::vector<Footprint> candidates;
      if (cls == SemanticClass::Vehicle) {
        for (auto [h, w] : {std::pair{2, 4}, std::pair{4, 2}}) {
          for (int y = 0; y + h <= H; ++y) {
            for (int x = 0; x + w <= W; ++x) {
              Footprint fp{y, x, h, w};
              if (admissible(fp, true)) candidates.push_back(fp);
            }
          }
        }
      } else {
        for (int y = 0; y < H; ++y) {
          for (int x = 0; x < W; ++x) {
            Footprint fp{y, x, 1, 1};
            if (admissible(fp, false)) candidates.push_back(fp);
          }
        }
      }
      if (candidates.empty()) {
        throw CapacityError("generate_scene: no room for " + std::string(class_name(cls)) + " #" +
                            std::to_string(i + 1));
      }
      const Footprint fp =
          candidates[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(candidates.size()) - 1))];
      for (int y = fp.y; y < fp.y + fp.h; ++y) {
        for (int x = fp.x; x < fp.x + fp.w; ++x) occupied[static_cast<std::size_t>(y * W + x)] = 1;
      }
      patch_used[static_cast<std::size_t>(fp.patch().index())] = 1;
      placed.push_back({cls, fp});
    }
  }

  VoxelScene scene = VoxelScene::filled(H, W, D);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const SemanticClass bg = column[static_cast<std::size_t>(y * W + x)];
      if (bg == SemanticClass::Building) {
        for (int z = 0; z < kBuildingHeight; ++z) scene.set(y, x, z, SemanticClass::Building);
        continue;
      }
      scene.set(y, x, 0, road.at(y, x) ? SemanticClass::Road : SemanticClass::Other);
      if (bg == SemanticClass::Vegetation) {
        for (int z = 1; z <= kVegetationHeight; ++z) scene.set(y, x, z, SemanticClass::Vegetation);
      }
    }
  }
  for (const auto& p : placed) {
    const int height = p.cls == SemanticClass::Vehicle      ? kVehicleHeight
                       : p.cls == SemanticClass::Pedestrian ? kPedestrianHeight
                                                            : kPoleHeight;
    for (int y = p.fp.y; y < p.fp.y + p.fp.h; ++y) {
      for (int x = p.fp.x; x < p.fp.x + p.fp.w; ++x) {
        for (int z = 1; z <= height; ++z) scene.set(y, x, z, p.cls);
      }
    }
  }

  SceneSample out;
  out.graph = extract_graph(scene, delta_d);
  out.map = project_bev(scene);
  out.scene = std::move(scene);
  if (out.graph.road().type != params.road_type) {
    throw std::logic_error("generate_scene: road layout does not classify as requested type");
  }
  return out;
}

GenParams random_gen_params(std::uint64_t seed, int max_count) {
  Rng rng(mix_seed(seed, 0));
  GenParams p;
  p.seed = seed;
  p.road_type = kAllRoadTypes[static_cast<std::size_t>(uniform_int(rng, 0, kNumRoadTypes - 1))];
  for (auto& c : p.counts) c = uniform_int(rng, 0, max_count);
  return p;
}

SceneSample generate_random_sample(std::uint64_t seed, int max_count, GenParams* params_out) {
  GenParams p = random_gen_params(seed, max_count);
  for (std::uint64_t attempt = 1;; ++attempt) {
    try {
      SceneSample s = generate_scene(p);
      if (params_out) *params_out = p;
      return s;
    } catch (const CapacityError&) {
      if (attempt > 64) throw;
      p = random_gen_params(mix_seed(seed, attempt), max_count);
      p.seed = mix_seed(seed, attempt);
    }
  }
}

SceneGraph extract_graph(const VoxelScene& scene, double delta_d) {
  struct Found {
    SemanticClass cls;
    double cy, cx;
    PatchPos patch;
  };
  std::vector<Found> found;
  const double cell_h = static_cast<double>(scene.height) / kPatchGrid;
  const double cell_w = static_cast<double>(scene.width) / kPatchGrid;
  for (SemanticClass cls : kCountableClasses) {
    std::vector<Found> of_class;
    for (const auto& comp : label_components(scene, cls)) {
      PatchPos p{std::clamp(static_cast<int>(std::floor(comp.centroid_y / cell_h)), 0, kPatchGrid - 1),
                 std::clamp(static_cast<int>(std::floor(comp.centroid_x / cell_w)), 0, kPatchGrid - 1)};
      of_class.push_back({cls, comp.centroid_y, comp.centroid_x, p});
    }
    std::sort(of_class.begin(), of_class.end(), [](const Found& a, const Found& b) {
      return std::tie(a.patch, a.cy, a.cx) < std::tie(b.patch, b.cy, b.cx);
    });
    found.insert(found.end(), of_class.begin(), of_class.end());
  }

  SceneGraph g;
  g.roads.push_back(RoadNode{std::string(kDefaultRoadId), classify_road(road_mask(scene))});
  std::array<int, kNumCountable> next{};
  for (const auto& f : found) {
    int& k = next[static_cast<std::size_t>(countable_index(f.cls))];
    g.instances.push_back({id_prefix(f.cls) + std::to_string(k++), f.cls, f.patch});
  }
  for (std::size_t i = 0; i < found.size(); ++i) {
    for (std::size_t j = i + 1; j < found.size(); ++j) {
      double d = std::hypot(found[i].cy - found[j].cy, found[i].cx - found[j].cx);
      if (d < delta_d) {
        g.edges.push_back({EdgeKind::PhysicalProximity, g.instances[i].id, g.instances[j].id});
      }
    }
  }
  for (const auto& n : g.instances) {
    g.edges.push_back({EdgeKind::RoadConnectivity, n.id, g.road().id});
  }
  g.canonicalize();
  return g;
}

RoadType classify_road(const BevMask& mask) {
  const int H = mask.height, W = mask.width;
  std::vector<std::pair<int, int>> border;
  for (int x = 0; x < W; ++x) border.emplace_back(0, x);
  for (int y = 1; y < H; ++y) border.emplace_back(y, W - 1);
  for (int x = W - 2; x >= 0; --x) border.emplace_back(H - 1, x);
  for (int y = H - 2; y >= 1; --y) border.emplace_back(y, 0);
  const int n = static_cast<int>(border.size());
  auto road_at = [&](int i) {
    auto [y, x] = border[static_cast<std::size_t>(((i % n) + n) % n)];
    return mask.at(y, x);
  };

  int start = -1;
  for (int i = 0; i < n; ++i) {
    if (!road_at(i)) {
      start = i;
      break;
    }
  }
  if (start < 0) return RoadType::Others;  // whole border is road

  enum Side { Top, Right, Bottom, Left };
  std::vector<Side> arms;
  int i = 0;
  while (i < n) {
    if (!road_at(start + i)) {
      ++i;
      continue;
    }
    int len = 0;
    while (i + len < n && road_at(start + i + len)) ++len;
    if (len >= 4) {
      auto [y, x] = border[static_cast<std::size_t>((start + i + len / 2) % n)];
      Side s = y == 0 ? Top : x == W - 1 ? Right : y == H - 1 ? Bottom : Left;
      arms.push_back(s);
    }
    i += len;
  }

  switch (arms.size()) {
    case 2: {
      bool collinear = (arms[0] == Top && arms[1] == Bottom) || (arms[0] == Bottom && arms[1] == Top) ||
                       (arms[0] == Left && arms[1] == Right) || (arms[0] == Right && arms[1] == Left);
      return collinear ? RoadType::StraightRoad : RoadType::BendRoad;
    }
    case 3: return RoadType::TJunction;
    case 4: return RoadType::Crossroad;
    default: return RoadType::Others;
  }
}

BevMask road_mask(const VoxelScene& scene) {
  BevMask m = BevMask::empty(scene.height, scene.width);
  for (int z = 0; z < scene.depth; ++z) {
    for (int y = 0; y < scene.height; ++y) {
      for (int x = 0; x < scene.width; ++x) {
        if (scene.at(y, x, z) == SemanticClass::Road) m.set(y, x);
      }
    }
  }
  return m;
}

BevMask road_mask(const BevMap& map) {
  BevMask m = BevMask::empty(map.height, map.width);
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      auto c = map.at(y, x);
      if (c == SemanticClass::Road || c == SemanticClass::Vehicle) m.set(y, x);
    }
  }
  return m;
}

BevMap project_bev(const VoxelScene& scene) {
  BevMap m = BevMap::filled(scene.height, scene.width);
  for (int y = 0; y < scene.height; ++y) {
    for (int x = 0; x < scene.width; ++x) {
      for (int z = scene.depth - 1; z >= 0; --z) {
        auto c = scene.at(y, x, z);
        if (c != SemanticClass::Free) {
          m.set(y, x, c);
          break;
        }
      }
    }
  }
  return m;
}

std::pair<int, int> transform_cell(AugmentOp op, int y, int x, int n) {
  switch (op) {
    case AugmentOp::Identity: return {y, x};
    case AugmentOp::Rot90: return {n - 1 - x, y};
    case AugmentOp::Rot180: return {n - 1 - y, n - 1 - x};
    case AugmentOp::Rot270: return {x, n - 1 - y};
    case AugmentOp::FlipH: return {y, n - 1 - x};
    case AugmentOp::FlipV: return {n - 1 - y, x};
  }
  return {y, x};
}

PatchPos augment_patch(AugmentOp op, PatchPos p) {
  auto [r, c] = transform_cell(op, p.row, p.col, kPatchGrid);
  return {r, c};
}

VoxelScene augment_scene(const VoxelScene& scene, AugmentOp op) {
  if (scene.height != scene.width) throw ShapeError("augment_scene: requires a square plane");
  VoxelScene out = scene;
  const int n = scene.height;
  for (int z = 0; z < scene.depth; ++z) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        auto [ny, nx] = transform_cell(op, y, x, n);
        out.set(ny, nx, z, scene.at(y, x, z));
      }
    }
  }
  return out;
}

BevMap augment_map(const BevMap& map, AugmentOp op) {
  if (map.height != map.width) throw ShapeError("augment_map: requires a square map");
  BevMap out = map;
  const int n = map.height;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      auto [ny, nx] = transform_cell(op, y, x, n);
      out.set(ny, nx, map.at(y, x));
    }
  }
  return out;
}

BevMask augment_mask(const BevMask& mask, AugmentOp op) {
  if (mask.height != mask.width) throw ShapeError("augment_mask: requires a square mask");
  BevMask out = BevMask::empty(mask.height, mask.width);
  const int n = mask.height;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      auto [ny, nx] = transform_cell(op, y, x, n);
      out.set(ny, nx, mask.at(y, x));
    }
  }
  return out;
}

SceneGraph augment_graph(const SceneGraph& graph, AugmentOp op) {
  SceneGraph out = graph;
  for (auto& n : out.instances) {
    if (n.patch) n.patch = augment_patch(op, *n.patch);
  }
  return out;
}

SceneSample augment(const SceneSample& sample, AugmentOp op) {
  return {augment_scene(sample.scene, op), augment_graph(sample.graph, op),
          augment_map(sample.map, op)};
}

std::string write_synthetic_dataset(const std::string& dir, int n, std::uint64_t seed,
                                    int max_count) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "scenes");
  fs::create_directories(fs::path(dir) / "graphs");
  fs::create_directories(fs::path(dir) / "maps");
  std::ostringstream manifest;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    SceneSample sample = generate_random_sample(s, max_count);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "%06d", i);
    ManifestRecord rec;
    rec.index = i;
    rec.seed = s;
    rec.scene = std::string("scenes/") + stem + ".vxs";
    rec.graph = std::string("graphs/") + stem + ".json";
    rec.map = std::string("maps/") + stem + ".bev";
    write_vxs_file(sample.scene, (fs::path(dir) / rec.scene).string());
    write_file_atomic((fs::path(dir) / rec.graph).string(), graph_to_json(sample.graph));
    write_bev_file(sample.map, (fs::path(dir) / rec.map).string());
    nlohmann::json line = {{"index", rec.index}, {"seed", rec.seed},  {"scene", rec.scene},
                           {"graph", rec.graph}, {"map", rec.map},    {"source", rec.source}};
    manifest << line.dump() << '\n';
  }
  const std::string path = (fs::path(dir) / "manifest.jsonl").string();
  write_file_atomic(path, manifest.str());
  return path;
}

std::vector<ManifestRecord> read_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest_path);
  std::vector<ManifestRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.index = j.at("index").get<std::int64_t>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.scene = j.at("scene").get<std::string>();
      r.graph = j.at("graph").get<std::string>();
      r.map = j.at("map").get<std::string>();
      r.source = j.value("source", std::string("synthetic"));
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(manifest_path + ":" + std::to_string(lineno), e.what());
    }
  }
  return out;
}

std::vector<SceneSample> load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<SceneSample> out;
  for (const auto& r : read_manifest(manifest_path)) {
    SceneSample s;
    s.scene = read_vxs_file((base / r.scene).string());
    s.graph = json_from_text(read_file((base / r.graph).string()));
    s.map = read_bev_file((base / r.map).string());
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SceneSample> make_synthetic_dataset(int n, std::uint64_t seed, int max_count) {
  std::vector<SceneSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.push_back(generate_random_sample(seed + static_cast<std::uint64_t>(i), max_count));
  }
  return out;
}

}  // namespace sgscene
