#pragma once

#include <string>
#include <vector>

#include "vistrack/nn.hpp"
#include "vistrack/tensor.hpp"
#include "vistrack/types.hpp"

namespace vistrack {

// Bipartite graph between reference-frame instance nodes (k) and target-frame
// pixel nodes (t). Node and edge features are stored batched: one row per
// node/edge, so message passing runs as a handful of matrix ops.
struct FrameGraph {
  struct KNode {
    int instance_id = -1;
    int class_id = 0;
    double cx = 0, cy = 0;  // feature-grid coordinates
  };

  int height = 0, width = 0, feat_dim = 0;
  int window = 0;
  int iterations_run = 0;

  std::vector<KNode> k_nodes;
  Tensor k_feats;  // [m x D]
  Tensor t_feats;  // [(H*W) x D], row j is grid cell (y=j/W, x=j%W)

  std::vector<int> edge_k;  // per edge: index into k_nodes
  std::vector<int> edge_t;  // per edge: t row index y*W + x
  Tensor edge_feats;        // [n_e x D]

  int edge_count() const { return static_cast<int>(edge_k.size()); }
};

// Instance boxes are in feature-grid coordinates. k-node features come from
// roi_align (roi_out x roi_out samples) averaged per channel; t-node features
// are the F_t columns; an edge joins instance i to every grid cell within
// Chebyshev distance < w/2 of the instance's box center. Edge features start
// as |h_i^v - h_j^v|.
FrameGraph build_graph(const InstanceSet& instances_k, const Tensor& F_k, const Tensor& F_t,
                       int w, int roi_out = 3);

// Same wiring with caller-supplied reference nodes and features [m x D]. Used
// at inference, where some reference features come from memory rather than
// from a live frame.
FrameGraph build_graph_nodes(std::vector<FrameGraph::KNode> nodes, const Tensor& k_feats,
                             const Tensor& F_t, int w);

// L synchronous iterations: every edge is re-encoded from its previous feature
// and both endpoint features, then every node adds the sum of per-edge
// messages (each message sees the edge's new feature and the node's previous
// feature). Nodes without edges are fixed points.
FrameGraph message_pass(const FrameGraph& g, const MlpParams& n_e, const MlpParams& n_v, int L);

// Final t-node features reassembled into a [D x H x W] map.
Tensor aggregate_feature(const FrameGraph& g);

// Edge list with endpoints and feature norms, for inspection.
std::string graph_debug_json(const FrameGraph& g);

}  // namespace vistrack
