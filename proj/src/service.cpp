#include "sgscene/service.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <filesystem>

#include "sgscene/bev_image.hpp"
#include "sgscene/dataset.hpp"
#include "sgscene/errors.hpp"
#include "sgscene/metrics.hpp"

namespace sgscene {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

json counts_json(const ClassCounts& c) {
  json j = json::object();
  for (int k = 0; k < kNumCountable; ++k) {
    j[std::string(class_name(kCountableClasses[static_cast<std::size_t>(k)]))] = c[static_cast<std::size_t>(k)];
  }
  return j;
}

ClassCounts requested_counts(const SceneGraph& g) {
  ClassCounts c{};
  for (const auto& inst : g.instances) {
    const int k = countable_index(inst.cls);
    if (k >= 0) c[static_cast<std::size_t>(k)]++;
  }
  return c;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  send_json(res, status, extra);
}

JobState state_from_name(const std::string& s) {
  if (s == "queued") return JobState::Queued;
  if (s == "running") return JobState::Running;
  if (s == "done") return JobState::Done;
  if (s == "failed") return JobState::Failed;
  throw ParseError("job/state", "unknown job state " + s);
}

}  // namespace

std::string job_state_name(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
  }
  return "failed";
}

json JobRecord::to_json() const {
  json j = {{"job_id", job_id},         {"graph_id", graph_id},     {"seed", seed},
            {"tau", tau},               {"state", job_state_name(state)},
            {"scene_id", nullptr},      {"error", nullptr},
            {"timings", {{"queued_at", queued_at}, {"started_at", started_at}, {"finished_at", finished_at}}}};
  if (scene_id) j["scene_id"] = *scene_id;
  if (error) j["error"] = *error;
  return j;
}

JobRecord JobRecord::from_json(const json& j) {
  JobRecord r;
  r.job_id = j.at("job_id").get<std::string>();
  r.graph_id = j.at("graph_id").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.tau = j.at("tau").get<double>();
  r.state = state_from_name(j.at("state").get<std::string>());
  if (!j.at("scene_id").is_null()) r.scene_id = j.at("scene_id").get<std::string>();
  if (!j.at("error").is_null()) r.error = j.at("error").get<std::string>();
  const auto& t = j.at("timings");
  r.queued_at = t.at("queued_at").get<double>();
  r.started_at = t.at("started_at").get<double>();
  r.finished_at = t.at("finished_at").get<double>();
  return r;
}

json scene_sidecar(const VoxelScene& scene, const BevMap& map, const SceneGraph& graph) {
  const auto counts = count_objects(scene);
  const auto requested = requested_counts(graph);
  const auto mae = mae_counts(std::vector<ClassCounts>{counts}, std::vector<ClassCounts>{requested});
  json per_class = json::object();
  for (int k = 0; k < kNumCountable; ++k) {
    per_class[std::string(class_name(kCountableClasses[static_cast<std::size_t>(k)]))] = mae.per_class[static_cast<std::size_t>(k)];
  }
  return {{"counts", counts_json(counts)},
          {"requested", counts_json(requested)},
          {"road_type", std::string(road_type_name(classify_road(road_mask(map))))},
          {"requested_road_type", std::string(road_type_name(graph.road().type))},
          {"mae", mae.overall},
          {"per_class_mae", per_class},
          {"jaccard", jaccard_categories(counts, requested)},
          {"valid", scene.valid()}};
}

// ---- store ----

SceneStore::SceneStore(std::string dir) : dir_(std::move(dir)) {
  fs::create_directories(fs::path(dir_) / "blobs");
  const auto index_path = fs::path(dir_) / "index.json";
  if (fs::exists(index_path)) {
    try {
      index_ = json::parse(read_file(index_path.string()));
    } catch (const json::exception& e) {
      throw ParseError(index_path.string(), e.what());
    }
  } else {
    index_ = {{"next", {{"graph", 1}, {"scene", 1}, {"job", 1}}},
              {"graphs", json::object()},
              {"scenes", json::object()},
              {"jobs", json::object()}};
  }
}

std::string SceneStore::put_blob(const std::string& bytes, const std::string& ext) {
  const std::string hash = sha256_hex(bytes) + ext;
  const auto path = fs::path(dir_) / "blobs" / hash;
  if (!fs::exists(path)) write_file_atomic(path.string(), bytes);
  return hash;
}

void SceneStore::flush_locked() { write_file_atomic((fs::path(dir_) / "index.json").string(), index_.dump(1)); }

std::string SceneStore::put_graph(const SceneGraph& g) {
  const auto blob = put_blob(graph_to_json(g), ".json");
  std::lock_guard lock(mu_);
  const auto n = index_["next"]["graph"].get<int>();
  const std::string id = "g" + std::to_string(n);
  index_["next"]["graph"] = n + 1;
  index_["graphs"][id] = {{"blob", blob}, {"created_at", now_seconds()}};
  flush_locked();
  return id;
}

std::optional<SceneGraph> SceneStore::graph(const std::string& id) const {
  std::string blob_name;
  {
    std::lock_guard lock(mu_);
    if (!index_["graphs"].contains(id)) return std::nullopt;
    blob_name = index_["graphs"][id]["blob"].get<std::string>();
  }
  return json_from_text(blob(blob_name));
}

std::vector<std::string> SceneStore::graph_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : index_["graphs"].items()) out.push_back(id);
  return out;
}

std::string SceneStore::put_scene(const VoxelScene& scene, const BevMap& map, const json& sidecar,
                                  const std::string& graph_id, const std::string& job_id) {
  const auto scene_blob = put_blob(encode_vxs(scene), ".vxs");
  const auto map_blob = put_blob(encode_bev(map), ".bev");
  std::lock_guard lock(mu_);
  const auto n = index_["next"]["scene"].get<int>();
  const std::string id = "s" + std::to_string(n);
  json full = sidecar;
  full["scene_id"] = id;
  full["graph_id"] = graph_id;
  full["job_id"] = job_id;
  const auto sidecar_blob = sha256_hex(full.dump()) + ".json";
  write_file_atomic((fs::path(dir_) / "blobs" / sidecar_blob).string(), full.dump());
  index_["next"]["scene"] = n + 1;
  index_["scenes"][id] = {{"scene", scene_blob}, {"map", map_blob}, {"sidecar", sidecar_blob},
                          {"graph_id", graph_id}, {"job_id", job_id}};
  flush_locked();
  return id;
}

std::optional<SceneStore::SceneRecord> SceneStore::scene(const std::string& id) const {
  std::lock_guard lock(mu_);
  if (!index_["scenes"].contains(id)) return std::nullopt;
  const auto& r = index_["scenes"][id];
  return SceneRecord{r["scene"].get<std::string>(), r["map"].get<std::string>(), r["sidecar"].get<std::string>(),
                     r["graph_id"].get<std::string>(), r["job_id"].get<std::string>()};
}

std::string SceneStore::blob(const std::string& hash) const {
  if (hash.find('/') != std::string::npos || hash.find("..") != std::string::npos) {
    throw std::invalid_argument("bad blob name");
  }
  return read_file((fs::path(dir_) / "blobs" / hash).string());
}

std::string SceneStore::new_job_id() {
  std::lock_guard lock(mu_);
  const auto n = index_["next"]["job"].get<int>();
  index_["next"]["job"] = n + 1;
  flush_locked();
  return "j" + std::to_string(n);
}

void SceneStore::put_job(const JobRecord& job) {
  std::lock_guard lock(mu_);
  index_["jobs"][job.job_id] = job.to_json();
  flush_locked();
}

std::optional<JobRecord> SceneStore::job(const std::string& id) const {
  std::lock_guard lock(mu_);
  if (!index_["jobs"].contains(id)) return std::nullopt;
  return JobRecord::from_json(index_["jobs"][id]);
}

std::vector<JobRecord> SceneStore::jobs() const {
  std::lock_guard lock(mu_);
  std::vector<JobRecord> out;
  for (const auto& [_, j] : index_["jobs"].items()) out.push_back(JobRecord::from_json(j));
  std::sort(out.begin(), out.end(), [](const JobRecord& a, const JobRecord& b) {
    return std::stoll(a.job_id.substr(1)) < std::stoll(b.job_id.substr(1));
  });
  return out;
}

// ---- service ----

SceneService::SceneService(ServiceConfig cfg, std::unique_ptr<TextToGraphAdapter> adapter)
    : cfg_(std::move(cfg)), store_(cfg_.store_dir), adapter_(std::move(adapter)) {
  if (!cfg_.checkpoint.empty()) set_pipeline(std::make_unique<Pipeline>(load_checkpoint(cfg_.checkpoint)));
  // Jobs interrupted by a shutdown cannot resume mid-sampling; queued ones are picked up again.
  for (auto job : store_.jobs()) {
    if (job.state == JobState::Running) {
      job.state = JobState::Failed;
      job.error = "interrupted by service restart";
      job.finished_at = now_seconds();
      store_.put_job(job);
    } else if (job.state == JobState::Queued) {
      queue_.push_back(job.job_id);
    }
  }
  routes();
  worker_ = std::thread([this] { worker_loop(); });
}

SceneService::~SceneService() {
  stop();
  {
    std::lock_guard lock(queue_mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void SceneService::set_pipeline(std::unique_ptr<Pipeline> p) {
  std::lock_guard lock(pipeline_mu_);
  pipeline_ = std::move(p);
  pipeline_loaded_ = pipeline_ != nullptr;
}

bool SceneService::has_pipeline() const { return pipeline_loaded_; }

int SceneService::bind_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
bool SceneService::bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
void SceneService::stop() { server_.stop(); }

std::optional<JobRecord> SceneService::wait_for_job(const std::string& id, double timeout_s) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  std::unique_lock lock(queue_mu_);
  while (true) {
    auto job = store_.job(id);
    if (!job) return std::nullopt;
    if (job->state == JobState::Done || job->state == JobState::Failed) return job;
    if (done_cv_.wait_until(lock, deadline) == std::cv_status::timeout) return store_.job(id);
  }
}

void SceneService::worker_loop() {
  while (true) {
    std::string id;
    {
      std::unique_lock lock(queue_mu_);
      queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
    }
    if (auto job = store_.job(id)) run_job(*job);
    done_cv_.notify_all();
  }
}

void SceneService::run_job(JobRecord job) {
  job.state = JobState::Running;
  job.started_at = now_seconds();
  store_.put_job(job);
  try {
    auto graph = store_.graph(job.graph_id);
    if (!graph) throw std::runtime_error("graph " + job.graph_id + " no longer exists");
    std::lock_guard lock(pipeline_mu_);
    if (!pipeline_) throw std::runtime_error("no checkpoint loaded");
    const auto map = sample_map(*pipeline_, *graph, job.seed, job.tau);
    const auto scene = sample_scene(*pipeline_, map, job.seed);
    if (!scene.valid()) throw std::runtime_error("generated scene failed validation");
    job.scene_id = store_.put_scene(scene, map, scene_sidecar(scene, map, *graph), job.graph_id, job.job_id);
    job.state = JobState::Done;
  } catch (const std::exception& e) {
    job.state = JobState::Failed;
    job.error = e.what();
  }
  job.finished_at = now_seconds();
  std::lock_guard lock(queue_mu_);
  store_.put_job(job);
}

void SceneService::routes() {
  server_.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
  });
  server_.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    } catch (...) {
      send_error(res, 500, "unknown error");
    }
  });

  server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}, {"checkpoint_loaded", has_pipeline()}});
  });

  server_.Post("/graphs", [this](const httplib::Request& req, httplib::Response& res) {
    SceneGraph g;
    try {
      g = json_from_text(req.body);
    } catch (const ParseError& e) {
      return send_error(res, 400, e.what(), {{"where", e.where()}});
    }
    auto report = validate_graph(g);
    if (!report.ok()) return send_error(res, 422, "graph violates structural rules", report.to_json());
    send_json(res, 201, {{"graph_id", store_.put_graph(g)}});
  });

  server_.Get("/graphs", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"graph_ids", store_.graph_ids()}});
  });

  server_.Get(R"(/graphs/([A-Za-z0-9]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto g = store_.graph(req.matches[1]);
    if (!g) return send_error(res, 404, "unknown graph " + std::string(req.matches[1]));
    res.set_content(graph_to_json(*g), "application/json");
  });

  server_.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      return send_error(res, 400, std::string("malformed JSON: ") + e.what());
    }
    if (!body.is_object() || !body.contains("graph_id") || !body["graph_id"].is_string()) {
      return send_error(res, 400, "body must be {graph_id, seed?, tau?}");
    }
    JobRecord job;
    job.graph_id = body["graph_id"].get<std::string>();
    if (body.contains("seed")) {
      if (!body["seed"].is_number_unsigned()) return send_error(res, 400, "seed must be a non-negative integer");
      job.seed = body["seed"].get<std::uint64_t>();
    }
    if (body.contains("tau")) {
      if (!body["tau"].is_number() || !(body["tau"].get<double>() > 0.0)) {
        return send_error(res, 400, "tau must be a positive number");
      }
      job.tau = body["tau"].get<double>();
    }
    if (!store_.graph(job.graph_id)) return send_error(res, 404, "unknown graph " + job.graph_id);
    if (!has_pipeline()) return send_error(res, 409, "no checkpoint loaded");
    job.job_id = store_.new_job_id();
    job.queued_at = now_seconds();
    {
      std::lock_guard lock(queue_mu_);
      store_.put_job(job);
      queue_.push_back(job.job_id);
    }
    queue_cv_.notify_one();
    send_json(res, 202, {{"job_id", job.job_id}});
  });

  server_.Get(R"(/jobs/([A-Za-z0-9]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto job = store_.job(req.matches[1]);
    if (!job) return send_error(res, 404, "unknown job " + std::string(req.matches[1]));
    send_json(res, 200, job->to_json());
  });

  server_.Get(R"(/scenes/([A-Za-z0-9]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto rec = store_.scene(req.matches[1]);
    if (!rec) return send_error(res, 404, "unknown scene " + std::string(req.matches[1]));
    res.set_header("Link", "</scenes/" + std::string(req.matches[1]) + "/sidecar>; rel=\"describedby\"");
    res.set_content(store_.blob(rec->scene_blob), "application/octet-stream");
  });

  server_.Get(R"(/scenes/([A-Za-z0-9]+)/sidecar)", [this](const httplib::Request& req, httplib::Response& res) {
    auto rec = store_.scene(req.matches[1]);
    if (!rec) return send_error(res, 404, "unknown scene " + std::string(req.matches[1]));
    res.set_content(store_.blob(rec->sidecar_blob), "application/json");
  });

  server_.Get(R"(/scenes/([A-Za-z0-9]+)/bev)", [this](const httplib::Request& req, httplib::Response& res) {
    auto rec = store_.scene(req.matches[1]);
    if (!rec) return send_error(res, 404, "unknown scene " + std::string(req.matches[1]));
    res.set_content(encode_bev_png(decode_bev(store_.blob(rec->map_blob))), "image/png");
  });

  server_.Post("/text2graph", [this](const httplib::Request& req, httplib::Response& res) {
    if (!adapter_) return send_error(res, 501, "no text-to-graph adapter configured");
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      return send_error(res, 400, std::string("malformed JSON: ") + e.what());
    }
    if (!body.is_object() || !body.contains("prompt") || !body["prompt"].is_string()) {
      return send_error(res, 400, "body must be {prompt}");
    }
    try {
      res.set_content(graph_to_json(adapter_->convert(body["prompt"].get<std::string>())), "application/json");
    } catch (const std::invalid_argument& e) {
      send_error(res, 422, e.what());
    }
  });
}

}  // namespace sgscene
