#include "sgscene/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sgscene/errors.hpp"

namespace sgscene {

using nlohmann::json;

namespace {

constexpr int kAeBatch = 8;

std::uint64_t phase_stream(const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string rng_snapshot(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::vector<torch::Tensor> params_of(torch::nn::Module& m) { return m.parameters(true); }

void append(std::vector<torch::Tensor>& dst, const std::vector<torch::Tensor>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

torch::Tensor index_tensor(const std::vector<int64_t>& v) { return torch::tensor(v, torch::kInt64); }

// Steps one optimiser and records the loss, aborting on non-finite values.
class PhaseRunner {
 public:
  PhaseRunner(Pipeline& p, std::string name, int steps, std::vector<torch::Tensor> params)
      : p_(p),
        optimizer_(std::move(params), torch::optim::AdamOptions(p.config.lr)),
        start_(std::chrono::steady_clock::now()) {
    report_.phase = std::move(name);
    report_.steps = steps;
    if (!p.config.metrics_log.empty()) log_.open(p.config.metrics_log, std::ios::app);
  }

  void step(int i, const torch::Tensor& total, const json& terms) {
    const double value = total.item<double>();
    if (!std::isfinite(value)) {
      throw DivergenceError("phase " + report_.phase + " step " + std::to_string(i) +
                            ": non-finite loss, terms " + terms.dump());
    }
    optimizer_.zero_grad();
    total.backward();
    // One rare-class voxel predicted with near-zero probability can produce a gradient orders of
    // magnitude above the norm; unclipped, it inflates Adam's second moments for thousands of steps.
    if (p_.config.grad_clip > 0.0) {
      torch::nn::utils::clip_grad_norm_(optimizer_.param_groups()[0].params(), p_.config.grad_clip);
    }
    optimizer_.step();
    report_.losses.push_back(value);
    if (log_.is_open() && (i % p_.config.log_every == 0 || i + 1 == report_.steps)) {
      const auto now = std::chrono::system_clock::now().time_since_epoch();
      json line = {{"phase", report_.phase},
                   {"step", i},
                   {"loss", value},
                   {"terms", terms},
                   {"elapsed_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()},
                   {"timestamp", std::chrono::duration<double>(now).count()}};
      log_ << line.dump() << '\n';
      log_.flush();
    }
  }

  PhaseReport& report() { return report_; }

 private:
  Pipeline& p_;
  torch::optim::Adam optimizer_;
  std::chrono::steady_clock::time_point start_;
  PhaseReport report_;
  std::ofstream log_;
};

}  // namespace

TrainingData TrainingData::from_samples(const std::vector<SceneSample>& samples) {
  TrainingData d;
  std::vector<BevMap> maps;
  std::vector<VoxelScene> scenes;
  for (const auto& s : samples) {
    d.graphs.push_back(s.graph);
    maps.push_back(s.map);
    scenes.push_back(s.scene);
  }
  d.maps = maps_tensor(maps);
  d.scenes = scenes_tensor(scenes);
  return d;
}

BatchPlan plan_batch(std::mt19937_64& rng, const TrainingData& data, int batch_size, int T, double mask_rate,
                     double uncond_proportion) {
  if (data.size() == 0) throw std::invalid_argument("empty training set");
  std::uniform_int_distribution<int64_t> pick(0, static_cast<int64_t>(data.size()) - 1);
  std::uniform_int_distribution<int64_t> step(1, T);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  BatchPlan plan;
  for (int b = 0; b < batch_size; ++b) {
    const int64_t idx = pick(rng);
    plan.indices.push_back(idx);
    std::set<std::string> hidden;
    for (const auto& inst : data.graphs[static_cast<std::size_t>(idx)].instances) {
      if (unit(rng) < mask_rate) hidden.insert(inst.id);
    }
    plan.hidden.push_back(std::move(hidden));
    plan.uncond.push_back(unit(rng) < uncond_proportion);
    plan.t.push_back(step(rng));
    plan.noise_seeds.push_back(rng());
  }
  return plan;
}

double PhaseReport::mean_loss(int from, int to) const {
  from = std::max(from, 0);
  to = std::min(to, static_cast<int>(losses.size()));
  if (to <= from) return std::nan("");
  double s = 0.0;
  for (int i = from; i < to; ++i) s += losses[static_cast<std::size_t>(i)];
  return s / (to - from);
}

JointLoss joint_loss(Pipeline& p, const TrainingData& data, const BatchPlan& plan, const JointPhase& phase) {
  const auto& cfg = p.config;
  const auto B = static_cast<int64_t>(plan.indices.size());
  std::vector<SceneGraph> graphs;
  for (auto idx : plan.indices) graphs.push_back(data.graphs[static_cast<std::size_t>(idx)]);
  auto batch = make_graph_batch(graphs, plan.hidden);

  CaneSet cane;
  if (phase.train_encoder) {
    cane = p.encoder->encode(batch);
  } else {
    torch::NoGradGuard no_grad;
    cane = p.encoder->encode(batch);
  }
  JointLoss out;
  auto zero = torch::zeros({}, torch::kFloat32);
  out.diffusion = zero;
  out.aux_bce = zero;
  out.aux_ce = zero;
  out.loc = zero;
  auto total = zero;

  if (phase.aux && phase.train_encoder && (cfg.edge_recon || cfg.node_cls)) {
    auto aux = p.encoder->aux_loss(batch, cane, {cfg.edge_recon, cfg.node_cls});
    out.aux_bce = aux.bce;
    out.aux_ce = aux.ce;
    total = total + cfg.aux_weight * aux.total;
  }

  auto valid = (batch.inst_patch >= 0).nonzero().view(-1);
  auto rows = cane.per_node.index_select(0, batch.inst_rows.index_select(0, valid));
  auto patch = batch.inst_patch.index_select(0, valid);
  auto owner = batch.inst_graph.index_select(0, valid);

  if (phase.diffusion) {
    auto bem = assemble_bem(rows, patch, owner, B);
    auto global = cane.per_node.index_select(0, batch.road_rows);
    std::vector<float> keep_v;
    for (bool u : plan.uncond) keep_v.push_back(phase.conditional && !u ? 1.0f : 0.0f);
    auto keep = torch::tensor(keep_v);
    bem = bem * keep.view({B, 1, 1, 1});
    global = global * keep.view({B, 1});

    auto x0 = data.maps.index_select(0, index_tensor(plan.indices));
    auto t = index_tensor(plan.t);
    auto gens = make_generators(plan.noise_seeds);
    auto x_t = q_sample(x0, t, p.schedule, gens);
    auto logits = p.map_denoiser->forward(x_t, t, bem, global).permute({0, 2, 3, 1});
    auto dl = diffusion_loss(x0, x_t, t, logits, p.schedule, cfg.lambda);
    out.diffusion = dl.total.to(torch::kFloat32);
    total = total + out.diffusion;
  }
  if (phase.loc) {
    out.loc = loc_loss(p.loc, rows, patch);
    total = total + out.loc;
  }
  out.total = total;
  return out;
}

PhaseReport train_2d_phase(Pipeline& p, const TrainingData& data, const JointPhase& phase) {
  const auto& cfg = p.config;
  std::vector<torch::Tensor> params;
  if (phase.train_encoder) append(params, params_of(*p.encoder));
  if (phase.diffusion) append(params, params_of(*p.map_denoiser));
  if (phase.loc) append(params, params_of(*p.loc));
  if (params.empty()) throw std::invalid_argument("phase " + phase.name + " has nothing to train");

  std::mt19937_64 rng(derive_seed(cfg.seed, phase_stream(phase.name)));
  PhaseRunner runner(p, phase.name, phase.steps, std::move(params));
  for (int i = 0; i < phase.steps; ++i) {
    auto plan = plan_batch(rng, data, cfg.batch_size, cfg.T, cfg.feature_mask_rate, cfg.uncond_proportion);
    auto loss = joint_loss(p, data, plan, phase);
    runner.step(i, loss.total,
                {{"diffusion", loss.diffusion.item<double>()},
                 {"aux_bce", loss.aux_bce.item<double>()},
                 {"aux_ce", loss.aux_ce.item<double>()},
                 {"loc", loss.loc.item<double>()}});
  }
  if (phase.train_encoder) p.trained["encoder"] = true;
  if (phase.diffusion) p.trained["map"] = true;
  if (phase.loc) p.trained["loc"] = true;
  p.rng_state = rng_snapshot(rng);
  return std::move(runner.report());
}

PhaseReport train_joint(Pipeline& p, const TrainingData& data) {
  JointPhase phase;
  phase.name = "joint";
  phase.steps = p.config.steps_joint;
  return train_2d_phase(p, data, phase);
}

PhaseReport train_loc(Pipeline& p, const TrainingData& data) {
  const auto& cfg = p.config;
  std::mt19937_64 rng(derive_seed(cfg.seed, phase_stream("loc")));
  PhaseRunner runner(p, "loc", cfg.steps_loc, params_of(*p.loc));
  for (int i = 0; i < cfg.steps_loc; ++i) {
    auto plan = plan_batch(rng, data, cfg.batch_size, cfg.T, cfg.feature_mask_rate, 0.0);
    std::vector<SceneGraph> graphs;
    for (auto idx : plan.indices) graphs.push_back(data.graphs[static_cast<std::size_t>(idx)]);
    auto batch = make_graph_batch(graphs, plan.hidden);
    torch::Tensor rows;
    {
      torch::NoGradGuard no_grad;
      rows = p.encoder->encode(batch).per_node;
    }
    auto valid = (batch.inst_patch >= 0).nonzero().view(-1);
    rows = rows.index_select(0, batch.inst_rows.index_select(0, valid));
    auto loss = loc_loss(p.loc, rows, batch.inst_patch.index_select(0, valid));
    if (rows.size(0) == 0) continue;
    runner.step(i, loss, {{"loc", loss.item<double>()}});
  }
  p.trained["loc"] = true;
  p.rng_state = rng_snapshot(rng);
  auto& report = runner.report();
  report.extra["accuracy"] = loc_accuracy(p, data, false);
  report.extra["accuracy_hidden"] = loc_accuracy(p, data, true);
  return std::move(report);
}

PhaseReport train_scene3d(Pipeline& p, const TrainingData& data) {
  const auto& cfg = p.config;
  std::mt19937_64 rng(derive_seed(cfg.seed, phase_stream("scene3d")));
  PhaseRunner runner(p, "scene3d", cfg.steps_scene3d, params_of(*p.scene_denoiser));
  for (int i = 0; i < cfg.steps_scene3d; ++i) {
    auto plan = plan_batch(rng, data, cfg.batch_size_3d, cfg.T, 0.0, 0.0);
    auto idx = index_tensor(plan.indices);
    auto z0 = data.scenes.index_select(0, idx);
    auto cond = upscale_map(data.maps.index_select(0, idx), z0.size(2), z0.size(3));
    auto t = index_tensor(plan.t);
    auto gens = make_generators(plan.noise_seeds);
    auto z_t = q_sample(z0, t, p.schedule, gens);
    auto logits = p.scene_denoiser->forward(z_t, t, cond).permute({0, 2, 3, 4, 1});
    auto dl = diffusion_loss(z0, z_t, t, logits, p.schedule, cfg.lambda);
    runner.step(i, dl.total, {{"kl", dl.kl.item<double>()}, {"ce", dl.ce.item<double>()}});
  }
  p.trained["scene"] = true;
  p.rng_state = rng_snapshot(rng);
  return std::move(runner.report());
}

PhaseReport train_autoencoder(Pipeline& p, const TrainingData& data) {
  const auto& cfg = p.config;
  std::mt19937_64 rng(derive_seed(cfg.seed, phase_stream("ae")));
  PhaseRunner runner(p, "ae", cfg.steps_ae, params_of(*p.autoencoder));
  for (int i = 0; i < cfg.steps_ae; ++i) {
    auto plan = plan_batch(rng, data, kAeBatch, cfg.T, 0.0, 0.0);
    auto scenes = data.scenes.index_select(0, index_tensor(plan.indices));
    auto loss = torch::nn::functional::cross_entropy(p.autoencoder->forward(scenes), scenes);
    runner.step(i, loss, {{"ce", loss.item<double>()}});
  }
  p.trained["ae"] = true;
  p.rng_state = rng_snapshot(rng);
  auto& report = runner.report();
  report.extra["accuracy"] = autoencoder_accuracy(p, data.scenes);
  return std::move(report);
}

std::vector<PhaseReport> run_strategy(Pipeline& p, const TrainingData& data) {
  const auto& cfg = p.config;
  std::vector<PhaseReport> reports;
  auto pretrain_gnn = [&] {
    JointPhase ph;
    ph.name = "pretrain_gnn";
    ph.steps = cfg.steps_pretrain;
    ph.diffusion = false;
    reports.push_back(train_2d_phase(p, data, ph));
  };
  switch (cfg.strategy) {
    case Strategy::D:
      reports.push_back(train_joint(p, data));
      reports.push_back(train_loc(p, data));
      break;
    case Strategy::B: {
      JointPhase ph;
      ph.name = "end_to_end";
      ph.steps = cfg.steps_joint;
      ph.loc = true;
      reports.push_back(train_2d_phase(p, data, ph));
      break;
    }
    case Strategy::C: {
      pretrain_gnn();
      reports.push_back(train_loc(p, data));
      JointPhase ph;
      ph.name = "diffusion_frozen_gnn";
      ph.steps = cfg.steps_joint;
      ph.train_encoder = false;
      reports.push_back(train_2d_phase(p, data, ph));
      break;
    }
    case Strategy::A: {
      pretrain_gnn();
      reports.push_back(train_loc(p, data));
      JointPhase uncond;
      uncond.name = "pretrain_diffusion";
      uncond.steps = cfg.steps_pretrain;
      uncond.train_encoder = false;
      uncond.conditional = false;
      reports.push_back(train_2d_phase(p, data, uncond));
      JointPhase fine;
      fine.name = "finetune_joint";
      fine.steps = cfg.steps_joint;
      reports.push_back(train_2d_phase(p, data, fine));
      break;
    }
  }
  return reports;
}

double loc_accuracy(Pipeline& p, const TrainingData& data, bool hide_all) {
  torch::NoGradGuard no_grad;
  int64_t correct = 0, total = 0;
  for_chunks(data.size(), 32, [&](std::size_t lo, std::size_t hi) {
    std::vector<SceneGraph> graphs(data.graphs.begin() + static_cast<std::ptrdiff_t>(lo),
                                   data.graphs.begin() + static_cast<std::ptrdiff_t>(hi));
    std::vector<std::set<std::string>> hidden(graphs.size());
    if (hide_all) {
      for (std::size_t i = 0; i < graphs.size(); ++i) {
        for (const auto& inst : graphs[i].instances) hidden[i].insert(inst.id);
      }
    }
    auto batch = make_graph_batch(graphs, hidden);
    auto valid = (batch.inst_patch >= 0).nonzero().view(-1);
    if (valid.numel() == 0) return;
    auto rows = p.encoder->encode(batch).per_node.index_select(0, batch.inst_rows.index_select(0, valid));
    auto pred = p.loc->forward(rows).argmax(-1);
    correct += pred.eq(batch.inst_patch.index_select(0, valid)).sum().item<int64_t>();
    total += valid.numel();
  });
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double autoencoder_accuracy(Pipeline& p, const torch::Tensor& scenes) {
  torch::NoGradGuard no_grad;
  int64_t correct = 0;
  for (int64_t lo = 0; lo < scenes.size(0); lo += kAeBatch) {
    auto chunk = scenes.slice(0, lo, std::min<int64_t>(lo + kAeBatch, scenes.size(0)));
    correct += p.autoencoder->forward(chunk).argmax(1).eq(chunk).sum().item<int64_t>();
  }
  return scenes.numel() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(scenes.numel());
}

}  // namespace sgscene
