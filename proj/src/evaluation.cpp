#include "sgscene/evaluation.hpp"

#include <array>
#include <set>
#include <sstream>
#include <stdexcept>

namespace sgscene {

using nlohmann::json;

namespace {

void require_autoencoder(const Pipeline& p) {
  if (!p.is_trained("ae")) throw std::logic_error("autoencoder is untrained; train it before computing F3D or mIoU/MA");
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::VectorXd& mean) {
  const auto centered = x.rowwise() - mean.transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(std::max<Eigen::Index>(x.rows() - 1, 1));
  return 0.5 * (cov + cov.transpose());
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

std::string csv_cell(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace

IouResult scene_iou(const VoxelScene& reference, const VoxelScene& prediction) {
  if (reference.labels.size() != prediction.labels.size()) throw std::invalid_argument("scene sizes differ");
  std::array<std::int64_t, kNumClasses> inter{}, ref{}, pred{};
  for (std::size_t i = 0; i < reference.labels.size(); ++i) {
    const auto a = reference.labels[i];
    const auto b = prediction.labels[i];
    ref[a]++;
    pred[b]++;
    if (a == b) inter[a]++;
  }
  double iou_sum = 0.0, acc_sum = 0.0;
  int iou_n = 0, acc_n = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto uni = ref[c] + pred[c] - inter[c];
    if (uni > 0) {
      iou_sum += static_cast<double>(inter[c]) / static_cast<double>(uni);
      ++iou_n;
    }
    if (ref[c] > 0) {
      acc_sum += static_cast<double>(inter[c]) / static_cast<double>(ref[c]);
      ++acc_n;
    }
  }
  return {iou_n ? iou_sum / iou_n : 1.0, acc_n ? acc_sum / acc_n : 1.0};
}

IouResult miou_ma(Pipeline& p, const std::vector<VoxelScene>& scenes) {
  require_autoencoder(p);
  if (scenes.empty()) throw std::invalid_argument("miou_ma needs at least one scene");
  torch::NoGradGuard no_grad;
  IouResult total;
  for_chunks(scenes.size(), 8, [&](std::size_t lo, std::size_t hi) {
    std::vector<VoxelScene> chunk(scenes.begin() + static_cast<std::ptrdiff_t>(lo),
                                  scenes.begin() + static_cast<std::ptrdiff_t>(hi));
    auto recon = scenes_from_tensor(p.autoencoder->forward(scenes_tensor(chunk)).argmax(1));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      auto r = scene_iou(chunk[i], recon[i]);
      total.miou += r.miou;
      total.ma += r.ma;
    }
  });
  total.miou /= static_cast<double>(scenes.size());
  total.ma /= static_cast<double>(scenes.size());
  return total;
}

Eigen::MatrixXd autoencoder_features(Pipeline& p, const std::vector<VoxelScene>& scenes) {
  torch::NoGradGuard no_grad;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(scenes.size()), kAeFeatureDim);
  for_chunks(scenes.size(), 8, [&](std::size_t lo, std::size_t hi) {
    std::vector<VoxelScene> chunk(scenes.begin() + static_cast<std::ptrdiff_t>(lo),
                                  scenes.begin() + static_cast<std::ptrdiff_t>(hi));
    auto f = p.autoencoder->features(scenes_tensor(chunk)).to(torch::kFloat64).contiguous();
    auto acc = f.accessor<double, 2>();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      for (int k = 0; k < kAeFeatureDim; ++k) out(static_cast<Eigen::Index>(lo + i), k) = acc[static_cast<int64_t>(i)][k];
    }
  });
  return out;
}

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("feature dimensions differ");
  if (a.rows() < 2 || b.rows() < 2) throw std::invalid_argument("need at least two samples per set");
  const Eigen::VectorXd mu_a = a.colwise().mean();
  const Eigen::VectorXd mu_b = b.colwise().mean();
  const auto I = Eigen::MatrixXd::Identity(a.cols(), a.cols());
  const Eigen::MatrixXd sa = covariance(a, mu_a) + kCovRegularization * I;
  const Eigen::MatrixXd sb = covariance(b, mu_b) + kCovRegularization * I;
  // tr((S_a S_b)^{1/2}) = tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}); the inner matrix is symmetric PSD.
  const Eigen::MatrixXd ra = sqrt_psd(sa);
  Eigen::MatrixXd inner = ra * sb * ra;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
  const double tr_cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_cross;
}

double f3d(Pipeline& p, const std::vector<VoxelScene>& a, const std::vector<VoxelScene>& b) {
  require_autoencoder(p);
  if (static_cast<int>(a.size()) < kMinF3dScenes || static_cast<int>(b.size()) < kMinF3dScenes) {
    throw std::invalid_argument("f3d needs at least 16 scenes per set");
  }
  return frechet_distance(autoencoder_features(p, a), autoencoder_features(p, b));
}

json MetricsReport::to_json() const {
  return json{{"mae", mae},         {"per_class_mae", per_class_mae}, {"jaccard", jaccard}, {"miou", miou},
              {"ma", ma},           {"f3d", f3d},                     {"n_scenes", n_scenes}, {"config", config}};
}

MetricsReport evaluate_scenes(Pipeline& p, const std::vector<VoxelScene>& generated, const std::vector<SceneGraph>& graphs,
                              const std::vector<VoxelScene>& real) {
  if (generated.size() != graphs.size()) throw std::invalid_argument("scenes and graphs must pair up");
  MetricsReport r;
  r.n_scenes = static_cast<int>(generated.size());
  auto mae = mae_counts(generated, graphs);
  r.mae = mae.overall;
  for (int k = 0; k < kNumCountable; ++k) {
    r.per_class_mae[std::string(class_name(kCountableClasses[static_cast<std::size_t>(k)]))] = mae.per_class[static_cast<std::size_t>(k)];
  }
  double jac = 0.0;
  for (std::size_t i = 0; i < generated.size(); ++i) jac += jaccard_categories(generated[i], graphs[i]);
  r.jaccard = generated.empty() ? 0.0 : jac / static_cast<double>(generated.size());
  auto iou = miou_ma(p, generated);
  r.miou = iou.miou;
  r.ma = iou.ma;
  r.f3d = f3d(p, generated, real);
  r.config = p.config.to_json();
  return r;
}

AblationGrid ablation_grid_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("ablation grid must be a JSON object");
  static const std::set<std::string> known = {"base", "configs", "uncond_proportion", "aux", "strategy"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown ablation grid key '" + key + "'");
  }
  AblationGrid g;
  if (j.contains("base")) g.base = j.at("base");
  TrainConfig::from_json(g.base);
  if (j.contains("configs")) {
    for (const auto& c : j.at("configs")) g.rows.push_back(c);
  }
  if (j.contains("uncond_proportion")) {
    for (const auto& v : j.at("uncond_proportion")) g.rows.push_back({{"uncond_proportion", v}});
  }
  if (j.contains("aux")) {
    for (const auto& v : j.at("aux")) g.rows.push_back({{"edge_recon", v.at("edge_recon")}, {"node_cls", v.at("node_cls")}});
  }
  if (j.contains("strategy")) {
    for (const auto& v : j.at("strategy")) g.rows.push_back({{"strategy", v}});
  }
  for (const auto& r : g.rows) {
    json merged = g.base;
    merged.update(r);
    TrainConfig::from_json(merged);
  }
  return g;
}

AblationGrid default_ablation_grid() {
  return ablation_grid_from_json({{"uncond_proportion", {0.0, 0.05, 0.1, 0.2, 0.4}},
                                  {"aux",
                                   {{{"edge_recon", true}, {"node_cls", true}},
                                    {{"edge_recon", true}, {"node_cls", false}},
                                    {{"edge_recon", false}, {"node_cls", true}},
                                    {{"edge_recon", false}, {"node_cls", false}}}},
                                  {"strategy", {"a", "b", "c", "d"}}});
}

std::vector<AblationRow> ablation_sweep(const AblationGrid& grid, const AblationSetup& setup) {
  if (!setup.train || !setup.stages) throw std::invalid_argument("ablation setup needs data and trained 3D stages");
  std::vector<AblationRow> rows;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < setup.eval_graphs.size(); ++i) seeds.push_back(setup.sample_seed + i);
  for (const auto& override_cfg : grid.rows) {
    json merged = grid.base;
    merged.update(override_cfg);
    Pipeline p(TrainConfig::from_json(merged));
    copy_group(*setup.stages, p, "scene");
    copy_group(*setup.stages, p, "ae");
    run_strategy(p, *setup.train);
    auto maps = sample_maps(p, setup.eval_graphs, seeds, p.config.tau);
    auto scenes = sample_scenes(p, maps, seeds);
    AblationRow row{p.config.to_json(), evaluate_scenes(p, scenes, setup.eval_graphs, setup.real_scenes)};
    if (setup.on_row) setup.on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  std::vector<std::string> cfg_keys;
  const json defaults = TrainConfig().to_json();
  for (const auto& [k, _] : defaults.items()) cfg_keys.push_back(k);
  std::vector<std::string> class_keys;
  for (auto c : kCountableClasses) class_keys.emplace_back(class_name(c));
  for (const auto& k : cfg_keys) os << k << ',';
  os << "mae";
  for (const auto& c : class_keys) os << ",mae_" << c;
  os << ",jaccard,miou,ma,f3d,n_scenes\n";
  for (const auto& r : rows) {
    for (const auto& k : cfg_keys) os << csv_cell(r.config.value(k, json())) << ',';
    os << r.report.mae;
    for (const auto& c : class_keys) os << ',' << r.report.per_class_mae.at(c);
    os << ',' << r.report.jaccard << ',' << r.report.miou << ',' << r.report.ma << ',' << r.report.f3d << ','
       << r.report.n_scenes << '\n';
  }
  return os.str();
}

json ablation_json(const std::vector<AblationRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) out.push_back({{"config", r.config}, {"report", r.report.to_json()}});
  return out;
}

}  // namespace sgscene
