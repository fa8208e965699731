#include "torch_doctest.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>

#include "grad_check.hpp"
#include "sgscene/allocation.hpp"
#include "sgscene/dataset.hpp"
#include "sgscene/diffusion.hpp"

using namespace sgscene;

namespace {

double chi2_pvalue(const std::vector<double>& observed, const std::vector<double>& expected) {
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) stat += std::pow(observed[i] - expected[i], 2) / expected[i];
  boost::math::chi_squared dist(static_cast<double>(observed.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

std::vector<double> draw_frequencies(const torch::Tensor& logits, double tau, int draws, std::uint64_t seed) {
  auto gen = make_generator(seed);
  std::vector<double> counts(static_cast<std::size_t>(logits.size(0)), 0.0);
  auto idx = gumbel_argmax(logits.unsqueeze(0).expand({draws, logits.size(0)}).contiguous(), tau, gen);
  auto acc = idx.accessor<int64_t, 1>();
  for (int i = 0; i < draws; ++i) counts[static_cast<std::size_t>(acc[i])] += 1.0;
  return counts;
}

}  // namespace

TEST_CASE("patch_mask") {
  auto m = patch_mask({0, 0});
  CHECK(m.narrow(0, 0, 4).narrow(1, 0, 4).min().item<float>() == 1.0f);
  CHECK(m.sum().item<float>() == 16.0f);
  auto total = torch::zeros({32, 32});
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      auto mk = patch_mask({r, c});
      CHECK(mk.sum().item<float>() == 16.0f);
      CHECK((total * mk).sum().item<float>() == 0.0f);  // disjoint from all earlier patches
      total += mk;
    }
  CHECK(torch::equal(total, torch::ones({32, 32})));
  CHECK_THROWS(patch_mask({8, 0}));
  CHECK_THROWS(patch_mask({0, -1}));
}

TEST_CASE("assemble_bem") {
  SUBCASE("one node") {
    auto e = torch::randn({1, 64});
    auto L = assemble_bem(e, {PatchPos{2, 3}});
    REQUIRE(L.sizes() == std::vector<int64_t>{64, 32, 32});
    auto block = L.narrow(1, 8, 4).narrow(2, 12, 4);
    CHECK(torch::equal(block, e[0].view({64, 1, 1}).expand({64, 4, 4})));
    CHECK(L.abs().sum().item<float>() == doctest::Approx(block.abs().sum().item<float>()));
    auto outside = L.clone();
    outside.narrow(1, 8, 4).narrow(2, 12, 4).zero_();
    CHECK(outside.abs().max().item<float>() == 0.0f);
  }
  SUBCASE("same patch sums") {
    auto e = torch::randn({2, 64});
    auto L = assemble_bem(e, {PatchPos{5, 5}, PatchPos{5, 5}});
    CHECK(torch::equal(L.select(1, 21).select(1, 22), e[0] + e[1]));
  }
  SUBCASE("empty instance set") {
    CHECK(torch::equal(assemble_bem(torch::zeros({0, 64}), std::vector<PatchPos>{}), torch::zeros({64, 32, 32})));
  }
  SUBCASE("property: linear and zero outside the support") {
    torch::manual_seed(0);
    for (int trial = 0; trial < 50; ++trial) {
      const int m = 1 + trial % 7;
      auto e = torch::randn({m, 64});
      std::vector<PatchPos> ps;
      auto support = torch::zeros({32, 32});
      for (int i = 0; i < m; ++i) {
        ps.push_back(PatchPos::from_index((trial * 13 + i * 29) % 64));
        support += patch_mask(ps.back());
      }
      auto L = assemble_bem(e, ps);
      CHECK(torch::equal(assemble_bem(4.0 * e, ps), 4.0 * L));  // power-of-two scaling is exact
      CHECK(torch::allclose(assemble_bem(-3.0 * e, ps), -3.0 * L, 1e-6, 1e-6));
      CHECK(L.masked_select((support == 0).unsqueeze(0).expand_as(L)).abs().max().item<float>() == 0.0f);
    }
  }
  SUBCASE("batched assembly from a graph batch equals the per-graph form") {
    std::vector<SceneGraph> graphs;
    for (int i = 0; i < 4; ++i) graphs.push_back(generate_random_sample(40 + i, 4).graph);
    auto batch = make_graph_batch(graphs);
    auto rows = torch::randn({batch.features.size(0), 64});
    auto inst = rows.index_select(0, batch.inst_rows);
    auto L = assemble_bem(inst, batch.inst_patch, batch.inst_graph, 4);
    for (int64_t b = 0; b < 4; ++b) {
      std::vector<PatchPos> ps;
      std::vector<int64_t> sel;
      for (int64_t i = 0; i < batch.inst_rows.size(0); ++i) {
        if (batch.inst_graph[i].item<int64_t>() != b) continue;
        sel.push_back(i);
        ps.push_back(PatchPos::from_index(static_cast<int>(batch.inst_patch[i].item<int64_t>())));
      }
      auto single = assemble_bem(inst.index_select(0, torch::tensor(sel, torch::kInt64).view({-1})), ps);
      CHECK(torch::equal(single, L[b]));
    }
  }
}

TEST_CASE("gumbel localization") {
  SUBCASE("dominant logit") {
    auto logits = torch::zeros({64}, torch::kFloat64);
    logits[17] = 1e6;
    auto f = draw_frequencies(logits, 2.0, 10000, 1);
    CHECK(f[17] / 10000.0 > 0.999);
  }
  SUBCASE("uniform logits are uniform") {
    auto f = draw_frequencies(torch::zeros({64}, torch::kFloat64), 2.0, 10000, 2);
    CHECK(chi2_pvalue(f, std::vector<double>(64, 10000.0 / 64)) > 0.01);
  }
  SUBCASE("frequencies follow softmax(logits / tau)") {
    auto logits = torch::linspace(-2.0, 3.0, 8, torch::kFloat64);
    for (double tau : {0.5, 2.0}) {
      auto p = torch::softmax(logits / tau, 0);
      auto f = draw_frequencies(logits, tau, 20000, 3);
      std::vector<double> exp;
      for (int i = 0; i < 8; ++i) exp.push_back(20000.0 * p[i].item<double>());
      CHECK_MESSAGE(chi2_pvalue(f, exp) > 0.01, "tau=" << tau);
    }
  }
  SUBCASE("zero-temperature limit is argmax") {
    torch::manual_seed(4);
    auto logits = torch::randn({64}, torch::kFloat64);
    auto gen = make_generator(5);
    const auto best = logits.argmax().item<int64_t>();
    for (int i = 0; i < 200; ++i) CHECK(gumbel_argmax(logits, 1e-9, gen).item<int64_t>() == best);
  }
  SUBCASE("localize is deterministic given the generator seed") {
    torch::manual_seed(6);
    LocHead head;
    auto row = torch::randn({64});
    auto g1 = make_generator(9);
    auto g2 = make_generator(9);
    for (int i = 0; i < 20; ++i) CHECK(localize(row, head, 2.0, g1) == localize(row, head, 2.0, g2));
    CHECK_THROWS(gumbel_argmax(row, 0.0, g1));
  }
  SUBCASE("straight-through sample") {
    auto logits = torch::randn({5, 64}, torch::kFloat64).requires_grad_(true);
    auto gen = make_generator(11);
    auto y = gumbel_softmax_st(logits, 2.0, gen);
    CHECK(torch::equal(y.sum(-1), torch::ones({5}, torch::kFloat64)));
    CHECK(torch::equal(y.detach(), torch::one_hot(y.argmax(-1), 64).to(torch::kFloat64)));
    (y * torch::randn({5, 64}, torch::kFloat64)).sum().backward();
    CHECK(logits.grad().abs().sum().item<double>() > 0);
  }
}

TEST_CASE("loc_loss") {
  torch::manual_seed(8);
  LocHead head;
  head->to(torch::kFloat64);
  auto rows = torch::randn({6, 64}, torch::kFloat64);
  auto gt = torch::tensor({0, 5, 63, 12, 12, 40}, torch::kInt64);

  SUBCASE("uniform logits cost ln 64") {
    {
      torch::NoGradGuard ng;
      auto last = head->mlp[2]->as<torch::nn::Linear>();
      last->weight.zero_();
      last->bias.zero_();
    }
    CHECK(loc_loss(head, rows, gt).item<double>() == doctest::Approx(std::log(64.0)).epsilon(1e-12));
  }
  SUBCASE("perfect logits drive it to zero") {
    {
      torch::NoGradGuard ng;
      auto first = head->mlp[0]->as<torch::nn::Linear>();
      auto last = head->mlp[2]->as<torch::nn::Linear>();
      first->weight.copy_(torch::eye(64, torch::kFloat64));
      first->bias.zero_();
      last->weight.copy_(100.0 * torch::eye(64, torch::kFloat64));
      last->bias.zero_();
    }
    auto onehot_rows = torch::one_hot(gt, 64).to(torch::kFloat64);
    CHECK(loc_loss(head, onehot_rows, gt).item<double>() < 1e-12);
  }
  SUBCASE("finite-difference gradients") {
    auto loss = [&] { return loc_loss(head, rows, gt); };
    for (auto& p : head->named_parameters()) {
      double rel = testing::grad_rel_error(loss, p.value(), 10);
      CHECK_MESSAGE(rel < 1e-3, p.key() << " rel=" << rel);
    }
  }
}
