#pragma once

#include <utility>
#include <vector>

#include "vistrack/graph.hpp"
#include "vistrack/nn.hpp"
#include "vistrack/types.hpp"

namespace vistrack {

// One graph edge that survived pruning, tied to the detection occupying its
// t-node cell.
struct PrunedEdge {
  int edge_index;  // row in the graph's edge feature matrix
  int k_index;     // position in the graph's reference-instance list
  int det_index;   // position in the target-frame detection list
};

struct EdgeScore {
  int k_instance_id;
  int t_detection_index;
  double score;  // in (0,1)
};

// Partial matching between reference identities and target detections.
// Every listed detection index appears once across matched + new_tracks and
// every listed identity once across matched + unmatched_k.
struct Assignment {
  std::vector<std::pair<int, int>> matched;  // (k_instance_id, t_detection_index)
  std::vector<int> new_tracks;               // detection indices to start fresh
  std::vector<int> unmatched_k;              // identities with no accepted edge
};

// Binary edge classifier over final edge features: MLP with one hidden layer
// of the feature width, sigmoid output.
MlpParams make_edge_classifier(int d, Rng& rng);

// Keeps edges whose t-node is the center cell of a detection of the same
// class as the reference instance; everything else is dropped.
// classes_k[i] is the class of the graph's i-th reference instance.
std::vector<PrunedEdge> prune_edges(const FrameGraph& g, const InstanceSet& det_t,
                                    const std::vector<int>& classes_k);

// Differentiable scores for the surviving edges: gathers their feature rows
// and applies the classifier. Returns [n x 1] sigmoid outputs.
Tensor edge_score_tensor(const Tensor& edge_feats, const std::vector<PrunedEdge>& edges,
                         const MlpParams& classifier);

// Inference wrapper producing (identity, detection, score) triples.
std::vector<EdgeScore> classify_edges(const FrameGraph& g, const std::vector<PrunedEdge>& edges,
                                      const MlpParams& classifier);

// Mean binary cross-entropy over the surviving edges; zero when none survive.
// labels[i] is 1 when edge i joins the same ground-truth identity.
Tensor edge_loss(const Tensor& scores, const std::vector<int>& labels);

// Greedy descending-score matching over edges with score >= tau_assoc; ties
// broken by lower identity, then lower detection index. Detections and
// identities are taken from the score list itself.
Assignment resolve_associations(const std::vector<EdgeScore>& scores, double tau_assoc);

}  // namespace vistrack
