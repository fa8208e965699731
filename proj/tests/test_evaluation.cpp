#include "torch_doctest.hpp"

#include <algorithm>
#include <random>

#include "sgscene/evaluation.hpp"

using namespace sgscene;

namespace {

VoxelScene tiny_scene(std::initializer_list<int> labels) {
  VoxelScene s = VoxelScene::filled(1, static_cast<int>(labels.size()), 1);
  std::size_t i = 0;
  for (int v : labels) s.labels[i++] = static_cast<std::uint8_t>(v);
  return s;
}

// 2x2 closed forms: tr(sqrt(M)) = sqrt(tr M + 2 sqrt(det M)) for M with non-negative spectrum.
double frechet_2d_oracle(const std::vector<std::array<double, 2>>& a, const std::vector<std::array<double, 2>>& b) {
  auto stats = [](const std::vector<std::array<double, 2>>& x) {
    std::array<double, 2> mu{0, 0};
    for (const auto& r : x) {
      mu[0] += r[0];
      mu[1] += r[1];
    }
    mu[0] /= static_cast<double>(x.size());
    mu[1] /= static_cast<double>(x.size());
    std::array<double, 4> cov{0, 0, 0, 0};
    for (const auto& r : x) {
      const double d0 = r[0] - mu[0], d1 = r[1] - mu[1];
      cov[0] += d0 * d0;
      cov[1] += d0 * d1;
      cov[3] += d1 * d1;
    }
    for (auto& v : cov) v /= static_cast<double>(x.size() - 1);
    cov[2] = cov[1];
    cov[0] += kCovRegularization;
    cov[3] += kCovRegularization;
    return std::pair{mu, cov};
  };
  auto [ma, sa] = stats(a);
  auto [mb, sb] = stats(b);
  const std::array<double, 4> m = {sa[0] * sb[0] + sa[1] * sb[2], sa[0] * sb[1] + sa[1] * sb[3],
                                   sa[2] * sb[0] + sa[3] * sb[2], sa[2] * sb[1] + sa[3] * sb[3]};
  const double tr = m[0] + m[3];
  const double det = m[0] * m[3] - m[1] * m[2];
  const double tr_sqrt = std::sqrt(tr + 2.0 * std::sqrt(det));
  const double dmu = (ma[0] - mb[0]) * (ma[0] - mb[0]) + (ma[1] - mb[1]) * (ma[1] - mb[1]);
  return dmu + sa[0] + sa[3] + sb[0] + sb[3] - 2.0 * tr_sqrt;
}

Eigen::MatrixXd to_matrix(const std::vector<std::array<double, 2>>& x) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(x.size()), 2);
  for (std::size_t i = 0; i < x.size(); ++i) m.row(static_cast<Eigen::Index>(i)) << x[i][0], x[i][1];
  return m;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.T = 4;
  c.batch_size = 4;
  c.batch_size_3d = 2;
  c.steps_joint = 2;
  c.steps_pretrain = 1;
  c.steps_loc = 2;
  c.steps_scene3d = 2;
  c.steps_ae = 2;
  return c;
}

}  // namespace

TEST_CASE("scene_iou") {
  SUBCASE("identical grids") {
    auto s = tiny_scene({0, 1, 1, 4, 6});
    auto r = scene_iou(s, s);
    CHECK(r.miou == 1.0);
    CHECK(r.ma == 1.0);
  }
  SUBCASE("hand-computed example") {
    // ref: F F R R V ; pred: F R R R F
    auto ref = tiny_scene({0, 0, 1, 1, 4});
    auto pred = tiny_scene({0, 1, 1, 1, 0});
    auto r = scene_iou(ref, pred);
    // Free: inter 1, union 3; Road: inter 2, union 3; Vehicle: inter 0, union 1.
    CHECK(r.miou == doctest::Approx((1.0 / 3 + 2.0 / 3 + 0.0) / 3));
    // Accuracy over reference classes: Free 1/2, Road 2/2, Vehicle 0/1.
    CHECK(r.ma == doctest::Approx((0.5 + 1.0 + 0.0) / 3));
  }
  SUBCASE("values stay in [0, 1]") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      auto a = VoxelScene::filled(4, 4, 2), b = VoxelScene::filled(4, 4, 2);
      for (auto& v : a.labels) v = static_cast<std::uint8_t>(rng() % kNumClasses);
      for (auto& v : b.labels) v = static_cast<std::uint8_t>(rng() % kNumClasses);
      auto r = scene_iou(a, b);
      CHECK(r.miou >= 0.0);
      CHECK(r.miou <= 1.0);
      CHECK(r.ma >= 0.0);
      CHECK(r.ma <= 1.0);
    }
  }
}

TEST_CASE("frechet distance") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto draw = [&](int n, double shift, double scale) {
    std::vector<std::array<double, 2>> x;
    for (int i = 0; i < n; ++i) {
      const double u = n01(rng), v = n01(rng);
      x.push_back({shift + scale * u, 0.5 * u + scale * v});
    }
    return x;
  };

  SUBCASE("matches the 2x2 closed form") {
    for (int trial = 0; trial < 20; ++trial) {
      auto a = draw(40, 0.0, 1.0);
      auto b = draw(30, 0.7, 2.0);
      CHECK(frechet_distance(to_matrix(a), to_matrix(b)) == doctest::Approx(frechet_2d_oracle(a, b)).epsilon(1e-9));
    }
  }
  SUBCASE("identical, shuffled, and swapped sets") {
    Eigen::MatrixXd a = Eigen::MatrixXd::Random(40, 128);
    Eigen::MatrixXd b = Eigen::MatrixXd::Random(24, 128) * 2.0;
    CHECK(std::abs(frechet_distance(a, a)) < 1e-6);
    std::vector<int> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd shuffled(40, 128);
    for (int i = 0; i < 40; ++i) shuffled.row(i) = a.row(perm[static_cast<std::size_t>(i)]);
    CHECK(std::abs(frechet_distance(a, shuffled)) < 1e-6);
    CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-9);
    CHECK(frechet_distance(a, b) > 1.0);
  }
  SUBCASE("rank-deficient covariance stays finite") {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(16, 128);
    Eigen::MatrixXd b = Eigen::MatrixXd::Ones(16, 128);
    const double d = frechet_distance(a, b);
    CHECK(std::isfinite(d));
    CHECK(d == doctest::Approx(128.0).epsilon(1e-6));
  }
}

TEST_CASE("autoencoder metrics require a trained autoencoder") {
  Pipeline p(tiny_config());
  std::vector<VoxelScene> scenes(16, VoxelScene::filled(kSceneH, kSceneW, kSceneD));
  CHECK_THROWS_AS(miou_ma(p, scenes), std::logic_error);
  CHECK_THROWS_AS(f3d(p, scenes, scenes), std::logic_error);
  p.trained["ae"] = true;
  CHECK_THROWS_AS(f3d(p, scenes, std::vector<VoxelScene>(15, scenes[0])), std::invalid_argument);
  CHECK(f3d(p, scenes, scenes) < 1e-6);
  auto r = miou_ma(p, scenes);
  CHECK(r.miou >= 0.0);
  CHECK(r.miou <= 1.0);
}

TEST_CASE("ablation grid") {
  SUBCASE("default grid covers the three sweeps") {
    auto g = default_ablation_grid();
    CHECK(g.rows.size() == 13);
  }
  SUBCASE("parsing") {
    auto g = ablation_grid_from_json({{"base", {{"steps_joint", 5}}}, {"configs", {{{"tau", 1.0}}}}});
    REQUIRE(g.rows.size() == 1);
    CHECK_THROWS_AS(ablation_grid_from_json({{"lr_sweep", {1}}}), std::invalid_argument);
    CHECK_THROWS_AS(ablation_grid_from_json({{"configs", {{{"uncond_proportion", 2.0}}}}}), std::invalid_argument);
  }
  SUBCASE("one config gives one row carrying its config") {
    const auto data = TrainingData::from_samples(make_synthetic_dataset(6, 3, 3));
    Pipeline stages(tiny_config());
    train_scene3d(stages, data);
    train_autoencoder(stages, data);
    auto eval = make_synthetic_dataset(16, 900, 3);
    AblationSetup setup;
    setup.train = &data;
    setup.stages = &stages;
    for (const auto& s : eval) {
      setup.eval_graphs.push_back(s.graph);
      setup.real_scenes.push_back(s.scene);
    }
    auto base = tiny_config().to_json();
    auto grid = ablation_grid_from_json({{"base", base}, {"configs", {{{"uncond_proportion", 0.2}}}}});
    auto rows = ablation_sweep(grid, setup);
    REQUIRE(rows.size() == 1);
    auto expected = base;
    expected["uncond_proportion"] = 0.2;
    CHECK(rows[0].config == expected);
    CHECK(rows[0].report.config == expected);
    CHECK(rows[0].report.n_scenes == 16);
    CHECK(rows[0].report.mae >= 0.0);
    CHECK(rows[0].report.jaccard >= 0.0);
    CHECK(rows[0].report.jaccard <= 1.0);

    auto csv = ablation_csv(rows);
    auto header = csv.substr(0, csv.find('\n'));
    for (const auto& [k, _] : expected.items()) CHECK_MESSAGE(header.find(k) != std::string::npos, k);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
    auto j = ablation_json(rows);
    CHECK(j.at(0).at("report").at("per_class_mae").size() == 3);
  }
}
