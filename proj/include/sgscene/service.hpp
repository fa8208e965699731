#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "sgscene/pipeline.hpp"
#include "sgscene/text2graph.hpp"

namespace sgscene {

enum class JobState { Queued, Running, Done, Failed };
std::string job_state_name(JobState s);

struct JobRecord {
  std::string job_id;
  std::string graph_id;
  std::uint64_t seed = 0;
  double tau = kDefaultTau;
  JobState state = JobState::Queued;
  std::optional<std::string> scene_id;
  std::optional<std::string> error;
  double queued_at = 0.0;  // unix seconds
  double started_at = 0.0;
  double finished_at = 0.0;

  nlohmann::json to_json() const;
  static JobRecord from_json(const nlohmann::json& j);
};

// Requested-vs-generated metrics stored next to every scene.
nlohmann::json scene_sidecar(const VoxelScene& scene, const BevMap& map, const SceneGraph& graph);

// Content-addressed blobs under dir/blobs plus a JSON index of records (graphs, scenes, jobs).
// Record ids are sequential, so posting the same graph twice yields two records sharing a blob.
class SceneStore {
 public:
  explicit SceneStore(std::string dir);

  std::string put_graph(const SceneGraph& g);
  std::optional<SceneGraph> graph(const std::string& id) const;
  std::vector<std::string> graph_ids() const;

  struct SceneRecord {
    std::string scene_blob;
    std::string map_blob;
    std::string sidecar_blob;
    std::string graph_id;
    std::string job_id;
  };
  std::string put_scene(const VoxelScene& scene, const BevMap& map, const nlohmann::json& sidecar,
                        const std::string& graph_id, const std::string& job_id);
  std::optional<SceneRecord> scene(const std::string& id) const;
  std::string blob(const std::string& hash) const;

  std::string new_job_id();
  void put_job(const JobRecord& job);
  std::optional<JobRecord> job(const std::string& id) const;
  std::vector<JobRecord> jobs() const;

 private:
  std::string put_blob(const std::string& bytes, const std::string& ext);
  void flush_locked();

  std::string dir_;
  mutable std::mutex mu_;
  nlohmann::json index_;
};

struct ServiceConfig {
  std::string store_dir = "sgscene-store";
  std::string checkpoint;  // empty: start without a model (generation answers 409)
};

// REST facade: graph CRUD, generation jobs on one FIFO worker, scene retrieval.
class SceneService {
 public:
  SceneService(ServiceConfig cfg, std::unique_ptr<TextToGraphAdapter> adapter);
  ~SceneService();
  SceneService(const SceneService&) = delete;
  SceneService& operator=(const SceneService&) = delete;

  void set_pipeline(std::unique_ptr<Pipeline> p);
  bool has_pipeline() const;

  httplib::Server& http() { return server_; }
  int bind_any_port(const std::string& host);
  bool bind(const std::string& host, int port);
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop();

  // Blocks until the job leaves the queue or the timeout (seconds) passes.
  std::optional<JobRecord> wait_for_job(const std::string& id, double timeout_s);

 private:
  void routes();
  void worker_loop();
  void run_job(JobRecord job);

  ServiceConfig cfg_;
  SceneStore store_;
  std::unique_ptr<TextToGraphAdapter> adapter_;
  std::unique_ptr<Pipeline> pipeline_;
  std::mutex pipeline_mu_;  // held by the worker for a whole job
  std::atomic<bool> pipeline_loaded_{false};

  httplib::Server server_;
  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::condition_variable done_cv_;
  std::deque<std::string> queue_;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace sgscene
