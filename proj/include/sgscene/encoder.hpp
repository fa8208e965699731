#pragma once

#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sgscene/scene_graph.hpp"

namespace sgscene {

// Node feature layout: class one-hot (3 countable classes + road slot) | road-type one-hot (5,
// road row only) | patch one-hot (64) | mask bit (position hidden or unknown).
inline constexpr int kClassSlots = kNumCountable + 1;
inline constexpr int kPatchCount = kPatchGrid * kPatchGrid;
inline constexpr int kFeatureDim = kClassSlots + kNumRoadTypes + kPatchCount + 1;
inline constexpr int kEmbedDim = 64;
// Node classification labels: countable classes, then the road types.
inline constexpr int kNodeLabels = kNumCountable + kNumRoadTypes;

// Several graphs packed into one block-diagonal problem.
struct GraphBatch {
  int64_t num_graphs = 0;
  torch::Tensor features;     // (N, kFeatureDim) float
  torch::Tensor attn_mask;    // (N, N) bool: edge or self loop within one graph
  torch::Tensor adjacency;    // (N, N) float 0/1, zero diagonal
  torch::Tensor graph_index;  // (N) int64
  torch::Tensor labels;       // (N) int64 in [0, kNodeLabels)
  torch::Tensor node_weight;  // (N) float, 1 / |V| of the node's graph
  torch::Tensor road_rows;    // (B) int64 row of each graph's road node
  // Instance nodes, in row order.
  torch::Tensor inst_rows;    // (M) int64
  torch::Tensor inst_graph;   // (M) int64
  torch::Tensor inst_patch;   // (M) int64 true patch index, -1 when the graph has none
  torch::Tensor inst_known;   // (M) bool: patch present and not hidden
  std::vector<int64_t> offsets;                // B + 1 row offsets
  std::vector<std::vector<std::string>> ids;   // per graph, row order

  GraphBatch to(torch::ScalarType dtype) const;
};

// `hidden[b]` lists instance ids whose patch is masked out of the features; `orders[b]`, when
// given, is the row order of graph b (default: node_ids()). Graphs must be valid.
GraphBatch make_graph_batch(const std::vector<SceneGraph>& graphs,
                            const std::vector<std::set<std::string>>& hidden = {},
                            const std::vector<std::vector<std::string>>& orders = {});

// Dense multi-head attention layer over a boolean neighbourhood mask.
class GATLayerImpl : public torch::nn::Module {
 public:
  GATLayerImpl(int in_dim, int out_dim, int heads, bool concat);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask);

  int heads() const { return heads_; }
  int out_dim() const { return out_dim_; }

 private:
  int heads_;
  int out_dim_;
  bool concat_;
  torch::nn::Linear proj_{nullptr};
  torch::Tensor att_src_;
  torch::Tensor att_dst_;
  torch::Tensor bias_;
};
TORCH_MODULE(GATLayer);

struct CaneSet {
  torch::Tensor per_node;  // (N, kEmbedDim) CANE rows
  torch::Tensor global;    // (B, kEmbedDim) h_G: mean of GAT outputs per graph
  torch::Tensor gat;       // (N, kEmbedDim) GAT outputs h_i
};

struct AuxSwitches {
  bool edge_recon = true;
  bool node_cls = true;
};

struct AuxLoss {
  torch::Tensor total;
  torch::Tensor bce;
  torch::Tensor ce;
};

// Two GAT layers (4 heads x 16 concatenated, ELU, then 1 head x 64), the CANE MLP over
// [h_i; h_G] and the node classifier.
class GraphEncoderImpl : public torch::nn::Module {
 public:
  GraphEncoderImpl();

  CaneSet encode(const GraphBatch& batch);
  torch::Tensor classify_nodes(const torch::Tensor& cane);
  // BCE against A + I per graph over all |V|^2 entries plus mean node CE, averaged over graphs.
  AuxLoss aux_loss(const GraphBatch& batch, const CaneSet& cane, AuxSwitches switches = {});

  GATLayer gat1{nullptr};
  GATLayer gat2{nullptr};
  torch::nn::Sequential cane_mlp{nullptr};
  torch::nn::Sequential classifier{nullptr};
};
TORCH_MODULE(GraphEncoder);

// sigma(E E^T) for one graph's CANE rows.
torch::Tensor reconstruct_edges(const torch::Tensor& cane_rows);

}  // namespace sgscene
