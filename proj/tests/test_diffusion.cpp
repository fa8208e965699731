#include "torch_doctest.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <random>

#include "diffusion_oracle.hpp"
#include "sgscene/diffusion.hpp"

using namespace sgscene;
using namespace sgscene::testing;

namespace {

double chi2_pvalue(const std::vector<double>& observed, const std::vector<double>& expected) {
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) stat += std::pow(observed[i] - expected[i], 2) / expected[i];
  boost::math::chi_squared dist(static_cast<double>(observed.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

torch::Tensor tvec(std::initializer_list<int64_t> v) { return torch::tensor(std::vector<int64_t>(v), torch::kInt64); }

}  // namespace

TEST_CASE("build_schedule") {
  SUBCASE("c=2, beta=0.5") {
    auto s = schedule_from_betas({0.5}, 2);
    auto expected = torch::tensor({0.75, 0.25, 0.25, 0.75}, torch::kFloat64).view({2, 2});
    CHECK(torch::equal(s.Q[1], expected));
    CHECK(torch::equal(s.Qbar[1], s.Q[1]));
  }

  SUBCASE("row-stochastic, associative, converges to uniform") {
    auto s = build_schedule(100, 8);
    CHECK(s.betas.front() == doctest::Approx(0.02));
    CHECK(s.betas.back() == doctest::Approx(1.0));
    for (int t = 1; t <= s.T; ++t) {
      CHECK((s.Q[t].sum(1) - 1).abs().max().item<double>() < 1e-9);
      CHECK((s.Qbar[t].sum(1) - 1).abs().max().item<double>() < 1e-9);
      CHECK(s.Q[t].min().item<double>() >= 0);
      CHECK(s.Qbar[t].min().item<double>() >= 0);
      CHECK(torch::allclose(s.Qbar[t], torch::matmul(s.Qbar[t - 1], s.Q[t]), 0, 1e-15));
    }
    // Independent product of the oracle matrices.
    auto Q = oracle_Q(s.betas, 8);
    Mat acc = Q[0];
    for (std::size_t k = 1; k < Q.size(); ++k) {
      Mat next(8, std::vector<double>(8, 0.0));
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
          for (int l = 0; l < 8; ++l) next[i][j] += acc[i][l] * Q[k][l][j];
      acc = next;
    }
    for (int i = 0; i < 8; ++i) {
      auto [mn, mx] = std::minmax_element(acc[i].begin(), acc[i].end());
      CHECK(*mx - *mn < 1e-3);
      double tv = 0;
      for (int j = 0; j < 8; ++j) tv += 0.5 * std::abs(s.Qbar[100][i][j].item<double>() - 0.125);
      CHECK(tv < 1e-3);
    }
  }

  SUBCASE("invalid arguments") {
    CHECK_THROWS(build_schedule(0, 8));
    CHECK_THROWS(build_schedule(10, 1));
  }
}

TEST_CASE("q_sample") {
  SUBCASE("identity kernel leaves x0 untouched") {
    auto s = schedule_from_betas({0.0, 0.0, 0.0}, 8);
    auto gens = make_generators({1, 2});
    auto x0 = torch::randint(0, 8, {2, 16, 16}, torch::kInt64);
    CHECK(torch::equal(q_sample(x0, tvec({3, 2}), s, gens), x0));
  }

  SUBCASE("t=T is uniform") {
    auto s = build_schedule(100, 8);
    auto gens = make_generators({7});
    auto x0 = torch::full({1, 100000}, 3, torch::kInt64);
    auto xt = q_sample(x0, tvec({100}), s, gens);
    auto counts = torch::bincount(xt.flatten(), {}, 8);
    std::vector<double> obs, exp;
    for (int k = 0; k < 8; ++k) {
      obs.push_back(counts[k].item<double>());
      exp.push_back(100000.0 * s.Qbar[100][3][k].item<double>());
    }
    CHECK(chi2_pvalue(obs, exp) > 0.01);
  }

  SUBCASE("single-cell two-class draw") {
    auto s = schedule_from_betas({0.5}, 2);
    auto gens = make_generators({3});
    int zeros = 0;
    for (int i = 0; i < 10000; ++i) zeros += q_sample(torch::zeros({1, 1}, torch::kInt64), tvec({1}), s, gens).item<int64_t>() == 0;
    CHECK(std::abs(zeros / 10000.0 - 0.75) < 0.01);
  }

  SUBCASE("property: marginals match x0 Qbar_t for random x0") {
    auto s = build_schedule(100, 8);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
      const int64_t label = static_cast<int64_t>(rng() % 8);
      const int64_t t = 1 + static_cast<int64_t>(rng() % 100);
      auto gens = make_generators({rng()});
      auto xt = q_sample(torch::full({1, 50000}, label, torch::kInt64), torch::tensor({t}), s, gens);
      auto counts = torch::bincount(xt.flatten(), {}, 8);
      std::vector<double> obs, exp;
      for (int k = 0; k < 8; ++k) {
        const double e = 50000.0 * s.Qbar[t][label][k].item<double>();
        if (e < 5) continue;  // merged into nothing: tiny cells are checked by the total below
        obs.push_back(counts[k].item<double>());
        exp.push_back(e);
      }
      if (obs.size() >= 2) CHECK(chi2_pvalue(obs, exp) > 0.001);
    }
  }

  SUBCASE("deterministic and range-checked") {
    auto s = build_schedule(10, 8);
    auto x0 = torch::randint(0, 8, {2, 8, 8}, torch::kInt64);
    auto g1 = make_generators({5, 6});
    auto g2 = make_generators({5, 6});
    CHECK(torch::equal(q_sample(x0, tvec({4, 9}), s, g1), q_sample(x0, tvec({4, 9}), s, g2)));
    CHECK_THROWS_AS(q_sample(x0, tvec({0, 1}), s, g1), std::out_of_range);
    CHECK_THROWS_AS(q_sample(x0, tvec({11, 1}), s, g1), std::out_of_range);
  }
}

TEST_CASE("posterior") {
  SUBCASE("noiseless chain is a delta at x0") {
    auto s = schedule_from_betas({0.0, 0.0, 0.0}, 4);
    auto x0 = torch::tensor({{0, 1, 2, 3}}, torch::kInt64);
    auto p = posterior(x0, torch::one_hot(x0, 4).to(torch::kFloat64), tvec({3}), s);
    CHECK(torch::equal(p, torch::one_hot(x0, 4).to(torch::kFloat64)));
  }

  SUBCASE("t=1 returns x0_probs exactly") {
    auto s = build_schedule(10, 8);
    auto probs = torch::softmax(torch::randn({2, 5, 8}, torch::kFloat64), -1);
    auto xt = torch::randint(0, 8, {2, 5}, torch::kInt64);
    auto p = posterior(xt, probs, tvec({1, 1}), s);
    CHECK(torch::equal(p, probs));
  }

  SUBCASE("exhaustive enumeration, c <= 3, T <= 3") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double worst = 0.0;
    for (int c = 2; c <= 3; ++c) {
      for (int T = 1; T <= 3; ++T) {
        for (int trial = 0; trial < 10; ++trial) {
          std::vector<double> betas(T);
          for (auto& b : betas) b = 0.05 + 0.9 * unif(rng);
          if (trial == 0 && T == 3) betas = build_schedule(T, c).betas;
          auto s = schedule_from_betas(betas, c);
          auto Q = oracle_Q(betas, c);
          std::vector<double> pi(c);
          double z = 0;
          for (auto& p : pi) z += (p = 0.1 + unif(rng));
          for (auto& p : pi) p /= z;
          for (int t = 1; t <= T; ++t) {
            for (int v = 0; v < c; ++v) {
              // Model output = exact p(x0 | x_t) under the prior; reverse step must equal the
              // chain's exact p(x_{t-1} | x_t).
              auto m = enumerate(Q, pi, t, v);
              auto probs = torch::tensor(m.x0, torch::kFloat64).view({1, 1, c});
              auto got = posterior(torch::full({1, 1}, v, torch::kInt64), probs, torch::tensor({int64_t{t}}), s);
              for (int i = 0; i < c; ++i) worst = std::max(worst, std::abs(got[0][0][i].item<double>() - m.prev[i]));
              // One-hot x0: the forward posterior q(x_{t-1} | x_t, x0).
              for (int k = 0; k < c; ++k) {
                std::vector<double> delta(c, 0.0);
                delta[k] = 1.0;
                auto mk = enumerate(Q, delta, t, v);
                auto oh = torch::tensor(delta, torch::kFloat64).view({1, 1, c});
                auto gk = posterior(torch::full({1, 1}, v, torch::kInt64), oh, torch::tensor({int64_t{t}}), s);
                for (int i = 0; i < c; ++i) worst = std::max(worst, std::abs(gk[0][0][i].item<double>() - mk.prev[i]));
              }
            }
          }
        }
      }
    }
    CHECK(worst < 1e-10);
  }

  SUBCASE("rows sum to 1 for batched mixed timesteps") {
    auto s = build_schedule(100, 8);
    auto probs = torch::softmax(torch::randn({4, 6, 6, 8}), -1);
    auto xt = torch::randint(0, 8, {4, 6, 6}, torch::kInt64);
    auto p = posterior(xt, probs, tvec({1, 2, 50, 100}), s);
    CHECK((p.sum(-1) - 1).abs().max().item<float>() < 1e-5);
    CHECK(p.min().item<float>() >= 0);
    // Batched result equals per-item evaluation.
    for (int b = 0; b < 4; ++b) {
      auto single = posterior(xt.narrow(0, b, 1), probs.narrow(0, b, 1), tvec({std::vector<int64_t>{1, 2, 50, 100}[b]}), s);
      CHECK(torch::equal(single[0], p[b]));
    }
  }
}

TEST_CASE("diffusion_loss") {
  torch::manual_seed(4);
  auto s = build_schedule(100, 8);

  SUBCASE("perfect model tends to zero") {
    auto x0 = torch::randint(0, 8, {2, 4, 4}, torch::kInt64);
    auto xt = torch::randint(0, 8, {2, 4, 4}, torch::kInt64);
    auto logits = 60.0 * torch::one_hot(x0, 8).to(torch::kFloat64);
    auto l = diffusion_loss(x0, xt, tvec({5, 80}), logits, s, 0.001);
    CHECK(l.total.item<double>() < 1e-12);
    CHECK(l.kl.item<double>() >= -1e-12);  // a perfect model's KL is zero up to float64 rounding
  }

  SUBCASE("uniform logits: auxiliary term ln c per cell") {
    auto x0 = torch::randint(0, 8, {3, 4, 4}, torch::kInt64);
    auto xt = torch::randint(0, 8, {3, 4, 4}, torch::kInt64);
    auto l = diffusion_loss(x0, xt, tvec({1, 30, 99}), torch::zeros({3, 4, 4, 8}, torch::kFloat64), s, 0.001);
    CHECK(l.ce.item<double>() == doctest::Approx(16 * std::log(8.0)).epsilon(1e-12));
  }

  SUBCASE("property: non-negative") {
    for (int trial = 0; trial < 50; ++trial) {
      auto x0 = torch::randint(0, 8, {2, 3, 3}, torch::kInt64);
      auto xt = torch::randint(0, 8, {2, 3, 3}, torch::kInt64);
      auto t = torch::randint(1, 101, {2}, torch::kInt64);
      auto l = diffusion_loss(x0, xt, t, 3.0 * torch::randn({2, 3, 3, 8}, torch::kFloat64), s, 0.001);
      CHECK(l.kl.item<double>() >= -1e-12);
      CHECK(l.total.item<double>() >= 0);
    }
  }

  SUBCASE("finite-difference gradient on a 2x2 grid") {
    auto x0 = torch::tensor({{{1, 3}, {0, 7}}}, torch::kInt64);
    auto xt = torch::tensor({{{1, 2}, {5, 7}}}, torch::kInt64);
    for (int64_t step : {1, 2, 17, 60}) {
      auto t = tvec({step});
      auto logits = torch::randn({1, 2, 2, 8}, torch::kFloat64).requires_grad_(true);
      auto l = diffusion_loss(x0, xt, t, logits, s, 0.001).total;
      l.backward();
      auto grad = logits.grad().clone();
      auto flat = logits.detach().clone().flatten();
      auto fd = torch::zeros_like(flat);
      const double h = 1e-5;
      for (int64_t i = 0; i < flat.numel(); ++i) {
        auto plus = flat.clone();
        auto minus = flat.clone();
        plus[i] += h;
        minus[i] -= h;
        double lp = diffusion_loss(x0, xt, t, plus.view({1, 2, 2, 8}), s, 0.001).total.item<double>();
        double lm = diffusion_loss(x0, xt, t, minus.view({1, 2, 2, 8}), s, 0.001).total.item<double>();
        fd[i] = (lp - lm) / (2 * h);
      }
      double rel = (grad.flatten() - fd).norm().item<double>() / std::max(1e-12, fd.norm().item<double>());
      CHECK_MESSAGE(rel < 1e-3, "t=" << step << " rel=" << rel);
    }
  }
}

TEST_CASE("p_sample_loop") {
  auto s = build_schedule(100, 8);
  auto target = torch::randint(0, 8, {2, 6, 5}, torch::kInt64);
  Denoiser oracle = [&](const torch::Tensor&, const torch::Tensor&) {
    return 50.0 * torch::one_hot(target, 8).to(torch::kFloat32);
  };

  SUBCASE("oracle denoiser reaches its target for any seed") {
    for (std::uint64_t seed : {1u, 2u, 99u}) {
      auto gens = make_generators({seed, seed + 1000});
      CHECK(torch::equal(p_sample_loop(oracle, {2, 6, 5}, s, gens), target));
    }
  }

  SUBCASE("deterministic and in range") {
    // Per-cell logits that depend on x_t and t only.
    Denoiser noise = [](const torch::Tensor& x, const torch::Tensor& t) {
      auto k = torch::arange(8, torch::kFloat32);
      auto tt = t.to(torch::kFloat32).view({-1, 1, 1, 1});
      return 2.0 * torch::sin(1.3 * k + 0.7 * x.unsqueeze(-1).to(torch::kFloat32) + 0.1 * tt);
    };
    auto g1 = make_generators({4, 5});
    auto g2 = make_generators({4, 5});
    auto a = p_sample_loop(noise, {2, 6, 5}, s, g1);
    auto b = p_sample_loop(noise, {2, 6, 5}, s, g2);
    CHECK(torch::equal(a, b));
    CHECK(a.min().item<int64_t>() >= 0);
    CHECK(a.max().item<int64_t>() < 8);
    // Batch composition does not change an item's sample.
    auto g3 = make_generators({5});
    CHECK(torch::equal(p_sample_loop(noise, {1, 6, 5}, s, g3)[0], a[1]));
  }
}

TEST_CASE("sample_categorical rejects bad probabilities") {
  auto gens = make_generators({1});
  auto p = torch::full({1, 2, 3}, 1.0 / 3, torch::kFloat64);
  CHECK_NOTHROW(sample_categorical(p, gens));
  p[0][1][2] = std::nan("");
  CHECK_THROWS_AS(sample_categorical(p, gens), std::domain_error);
  auto q = torch::tensor({0.5, 0.7, -0.2}, torch::kFloat64).view({1, 1, 3});
  CHECK_THROWS_AS(sample_categorical(q, gens), std::domain_error);
}
