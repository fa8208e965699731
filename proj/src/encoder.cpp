#include "sgscene/encoder.hpp"

#include <map>
#include <stdexcept>

#include "sgscene/errors.hpp"

namespace sgscene {

namespace {

// E E^T from BLAS is not bit-symmetric; averaging with the transpose is.
torch::Tensor gram(const torch::Tensor& e) {
  auto g = torch::matmul(e, e.t());
  return 0.5 * (g + g.t());
}

}  // namespace

GraphBatch GraphBatch::to(torch::ScalarType dtype) const {
  GraphBatch out = *this;
  out.features = features.to(dtype);
  out.adjacency = adjacency.to(dtype);
  // Recomputed rather than cast so 1 / |V| is exact in the target precision.
  auto counts = torch::bincount(graph_index, {}, num_graphs).to(dtype);
  out.node_weight = counts.index_select(0, graph_index).reciprocal();
  return out;
}

GraphBatch make_graph_batch(const std::vector<SceneGraph>& graphs, const std::vector<std::set<std::string>>& hidden,
                            const std::vector<std::vector<std::string>>& orders) {
  if (!hidden.empty() && hidden.size() != graphs.size()) throw ShapeError("hidden sets must match graph count");
  if (!orders.empty() && orders.size() != graphs.size()) throw ShapeError("node orders must match graph count");
  GraphBatch b;
  b.num_graphs = static_cast<int64_t>(graphs.size());
  b.offsets.push_back(0);
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    auto ids = orders.empty() ? graphs[gi].node_ids() : orders[gi];
    if (ids.size() != graphs[gi].node_count()) throw OrderingError("node order is not a permutation of the graph's nodes");
    b.offsets.push_back(b.offsets.back() + static_cast<int64_t>(ids.size()));
    b.ids.push_back(std::move(ids));
  }
  const int64_t N = b.offsets.back();
  auto feats = torch::zeros({N, kFeatureDim});
  auto adj = torch::zeros({N, N});
  auto graph_index = torch::zeros({N}, torch::kInt64);
  auto labels = torch::zeros({N}, torch::kInt64);
  auto weight = torch::zeros({N});
  auto road_rows = torch::zeros({b.num_graphs}, torch::kInt64);
  std::vector<int64_t> inst_rows, inst_graph, inst_patch;
  std::vector<uint8_t> inst_known;
  auto F = feats.accessor<float, 2>();
  auto Aacc = adj.accessor<float, 2>();

  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const auto& g = graphs[gi];
    const auto& ids = b.ids[gi];
    const int64_t off = b.offsets[gi];
    const auto n = static_cast<int64_t>(ids.size());
    const auto A = adjacency(g, ids);
    std::map<std::string, int64_t> row_of;
    for (int64_t i = 0; i < n; ++i) row_of[ids[static_cast<std::size_t>(i)]] = i;
    for (int64_t i = 0; i < n; ++i) {
      const int64_t r = off + i;
      graph_index[r] = static_cast<int64_t>(gi);
      weight[r] = 1.0f / static_cast<float>(n);
      for (int64_t j = 0; j < n; ++j) Aacc[r][off + j] = A(static_cast<int>(i), static_cast<int>(j));
    }
    for (const auto& road : g.roads) {
      const int64_t r = off + row_of.at(road.id);
      F[r][kNumCountable] = 1.0f;
      F[r][kClassSlots + static_cast<int>(road.type)] = 1.0f;
      labels[r] = kNumCountable + static_cast<int64_t>(road.type);
      road_rows[static_cast<int64_t>(gi)] = r;
    }
    for (const auto& inst : g.instances) {
      const int64_t r = off + row_of.at(inst.id);
      const int k = countable_index(inst.cls);
      if (k < 0) throw std::invalid_argument("instance " + inst.id + " has a non-countable class");
      F[r][k] = 1.0f;
      labels[r] = k;
      const bool is_hidden = !hidden.empty() && hidden[gi].count(inst.id) > 0;
      const bool known = inst.patch.has_value() && !is_hidden;
      if (known) {
        F[r][kClassSlots + kNumRoadTypes + inst.patch->index()] = 1.0f;
      } else {
        F[r][kFeatureDim - 1] = 1.0f;
      }
      inst_rows.push_back(r);
      inst_graph.push_back(static_cast<int64_t>(gi));
      inst_patch.push_back(inst.patch ? inst.patch->index() : -1);
      inst_known.push_back(known ? 1 : 0);
    }
  }
  // Instances in row order so per-graph slices are contiguous.
  std::vector<std::size_t> perm(inst_rows.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::sort(perm.begin(), perm.end(), [&](std::size_t x, std::size_t y) { return inst_rows[x] < inst_rows[y]; });
  auto reorder = [&](const auto& v) {
    std::vector<std::decay_t<decltype(v[0])>> out;
    for (auto i : perm) out.push_back(v[i]);
    return out;
  };
  inst_rows = reorder(inst_rows);
  inst_graph = reorder(inst_graph);
  inst_patch = reorder(inst_patch);
  inst_known = reorder(inst_known);

  auto same_graph = graph_index.unsqueeze(1) == graph_index.unsqueeze(0);
  b.features = feats;
  b.adjacency = adj;
  b.attn_mask = torch::logical_and(same_graph, torch::logical_or(adj > 0, torch::eye(N, torch::kBool)));
  b.graph_index = graph_index;
  b.labels = labels;
  b.node_weight = weight;
  b.road_rows = road_rows;
  const auto M = static_cast<int64_t>(inst_rows.size());
  b.inst_rows = torch::tensor(inst_rows, torch::kInt64).view({M});
  b.inst_graph = torch::tensor(inst_graph, torch::kInt64).view({M});
  b.inst_patch = torch::tensor(inst_patch, torch::kInt64).view({M});
  b.inst_known = torch::tensor(std::vector<int64_t>(inst_known.begin(), inst_known.end()), torch::kInt64).view({M}).to(torch::kBool);
  return b;
}

GATLayerImpl::GATLayerImpl(int in_dim, int out_dim, int heads, bool concat)
    : heads_(heads), out_dim_(out_dim), concat_(concat) {
  proj_ = register_module("proj", torch::nn::Linear(torch::nn::LinearOptions(in_dim, heads * out_dim).bias(false)));
  att_src_ = register_parameter("att_src", torch::empty({heads, out_dim}));
  att_dst_ = register_parameter("att_dst", torch::empty({heads, out_dim}));
  bias_ = register_parameter("bias", torch::zeros({concat ? heads * out_dim : out_dim}));
  torch::nn::init::xavier_uniform_(att_src_);
  torch::nn::init::xavier_uniform_(att_dst_);
}

torch::Tensor GATLayerImpl::forward(const torch::Tensor& x, const torch::Tensor& mask) {
  const int64_t N = x.size(0);
  auto wh = proj_(x).view({N, heads_, out_dim_});
  auto s_src = (wh * att_src_).sum(-1).t();  // (H, N)
  auto s_dst = (wh * att_dst_).sum(-1).t();
  auto e = torch::leaky_relu(s_src.unsqueeze(2) + s_dst.unsqueeze(1), 0.2);  // e[h, i, j]
  e = e.masked_fill(mask.logical_not().unsqueeze(0), -std::numeric_limits<double>::infinity());
  auto alpha = torch::softmax(e, -1);
  auto out = torch::bmm(alpha, wh.permute({1, 0, 2}));  // (H, N, out)
  out = concat_ ? out.permute({1, 0, 2}).reshape({N, heads_ * out_dim_}) : out.mean(0);
  return out + bias_;
}

GraphEncoderImpl::GraphEncoderImpl() {
  gat1 = register_module("gat1", GATLayer(kFeatureDim, kEmbedDim / 4, 4, true));
  gat2 = register_module("gat2", GATLayer(kEmbedDim, kEmbedDim, 1, false));
  cane_mlp = register_module("cane_mlp", torch::nn::Sequential(torch::nn::Linear(2 * kEmbedDim, kEmbedDim),
                                                               torch::nn::ELU(),
                                                               torch::nn::Linear(kEmbedDim, kEmbedDim)));
  classifier = register_module("classifier", torch::nn::Sequential(torch::nn::Linear(kEmbedDim, kEmbedDim),
                                                                   torch::nn::ELU(),
                                                                   torch::nn::Linear(kEmbedDim, kNodeLabels)));
}

CaneSet GraphEncoderImpl::encode(const GraphBatch& batch) {
  if (batch.features.dim() != 2 || batch.features.size(1) != kFeatureDim) {
    throw ShapeError("node features must be (N, " + std::to_string(kFeatureDim) + ")");
  }
  auto h = torch::elu(gat1(batch.features, batch.attn_mask));
  h = gat2(h, batch.attn_mask);
  auto sums = torch::zeros({batch.num_graphs, kEmbedDim}, h.options()).index_add(0, batch.graph_index, h);
  auto counts = torch::zeros({batch.num_graphs}, h.options())
                    .index_add(0, batch.graph_index, torch::ones({h.size(0)}, h.options()));
  auto global = sums / counts.unsqueeze(1);
  auto cane = cane_mlp->forward(torch::cat({h, global.index_select(0, batch.graph_index)}, 1));
  return {cane, global, h};
}

torch::Tensor GraphEncoderImpl::classify_nodes(const torch::Tensor& cane) { return classifier->forward(cane); }

AuxLoss GraphEncoderImpl::aux_loss(const GraphBatch& batch, const CaneSet& cane, AuxSwitches switches) {
  const auto B = static_cast<double>(batch.num_graphs);
  auto zero = torch::zeros({}, cane.per_node.options());
  AuxLoss out{zero, zero, zero};
  if (switches.edge_recon) {
    auto logits = gram(cane.per_node);
    const int64_t N = logits.size(0);
    auto target = batch.adjacency + torch::eye(N, logits.options());
    auto same = (batch.graph_index.unsqueeze(1) == batch.graph_index.unsqueeze(0)).to(logits.scalar_type());
    // Each within-graph entry weighs 1 / |V|^2 so every graph contributes its own mean.
    auto w = same * batch.node_weight.unsqueeze(1) * batch.node_weight.unsqueeze(0);
    auto bce = torch::binary_cross_entropy_with_logits(logits, target, w, {}, at::Reduction::Sum);
    out.bce = bce / B;
  }
  if (switches.node_cls) {
    auto ce = torch::nn::functional::cross_entropy(
        classify_nodes(cane.per_node), batch.labels,
        torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kNone));
    out.ce = (ce * batch.node_weight).sum() / B;
  }
  out.total = out.bce + out.ce;
  return out;
}

torch::Tensor reconstruct_edges(const torch::Tensor& cane_rows) {
  // Vectorised and scalar sigmoid paths may round differently, so mirror the upper triangle.
  auto upper = torch::sigmoid(gram(cane_rows)).triu();
  return upper + upper.triu(1).t();
}

}  // namespace sgscene
