#include "vistrack/track.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

#include "vistrack/rng.hpp"

namespace vistrack {

// The near-zero output layer starts every edge probability at 0.5, so the
// first updates see a calibrated sigmoid instead of saturated logits whose
// clamped log-loss carries no gradient.
MlpParams make_edge_classifier(int d, Rng& rng) { return make_mlp(d, d, 1, rng, 0.01); }

std::vector<PrunedEdge> prune_edges(const FrameGraph& g, const InstanceSet& det_t,
                                    const std::vector<int>& classes_k) {
  if (classes_k.size() != g.k_nodes.size())
    throw std::invalid_argument("prune_edges: one class per reference instance required");
  // center cell -> detections occupying it (distinct classes by construction)
  std::map<int, std::vector<int>> cell_dets;
  for (int d = 0; d < static_cast<int>(det_t.size()); ++d) {
    const Instance& det = det_t[d];
    if (det.cell_x < 0 || det.cell_x >= g.width || det.cell_y < 0 || det.cell_y >= g.height)
      throw std::invalid_argument("prune_edges: detection cell outside the grid");
    cell_dets[det.cell_y * g.width + det.cell_x].push_back(d);
  }
  std::vector<PrunedEdge> kept;
  for (int e = 0; e < g.edge_count(); ++e) {
    const int k = g.edge_k[e];
    auto it = cell_dets.find(g.edge_t[e]);
    if (it == cell_dets.end()) continue;
    for (int d : it->second) {
      if (det_t[d].class_id != classes_k[k]) continue;
      kept.push_back({e, k, d});
      break;
    }
  }
  return kept;
}

Tensor edge_score_tensor(const Tensor& edge_feats, const std::vector<PrunedEdge>& edges,
                         const MlpParams& classifier) {
  if (edges.empty()) throw std::invalid_argument("edge_score_tensor: no edges to score");
  std::vector<int> rows;
  rows.reserve(edges.size());
  for (const PrunedEdge& e : edges) rows.push_back(e.edge_index);
  return sigmoid(mlp_rows(classifier, gather_rows(edge_feats, rows)));
}

std::vector<EdgeScore> classify_edges(const FrameGraph& g, const std::vector<PrunedEdge>& edges,
                                      const MlpParams& classifier) {
  std::vector<EdgeScore> out;
  if (edges.empty()) return out;
  NoTape guard;
  Tensor scores = edge_score_tensor(g.edge_feats, edges, classifier);
  out.reserve(edges.size());
  for (std::size_t i = 0; i < edges.size(); ++i)
    out.push_back({g.k_nodes[edges[i].k_index].instance_id, edges[i].det_index,
                   scores.data()[i]});
  return out;
}

Tensor edge_loss(const Tensor& scores, const std::vector<int>& labels) {
  if (labels.empty()) return Tensor({1});
  if (scores.numel() != static_cast<int>(labels.size()))
    throw std::invalid_argument("edge_loss: one label per score required");
  Tensor y(scores.shape());
  Tensor y_inv(scores.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw std::invalid_argument("edge_loss: labels must be 0 or 1");
    y.data()[i] = labels[i];
    y_inv.data()[i] = 1 - labels[i];
  }
  Tensor p = clamp(scores, 1e-7, 1.0 - 1e-7);
  Tensor ll = add(mul(y, log(p)), mul(y_inv, log(add_scalar(scale(p, -1.0), 1.0))));
  return scale(sum(ll), -1.0 / static_cast<double>(labels.size()));
}

Assignment resolve_associations(const std::vector<EdgeScore>& scores, double tau_assoc) {
  std::vector<EdgeScore> pos;
  std::set<int> k_seen, t_seen;
  for (const EdgeScore& s : scores) {
    k_seen.insert(s.k_instance_id);
    t_seen.insert(s.t_detection_index);
    if (s.score >= tau_assoc) pos.push_back(s);
  }
  std::sort(pos.begin(), pos.end(), [](const EdgeScore& a, const EdgeScore& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.k_instance_id != b.k_instance_id) return a.k_instance_id < b.k_instance_id;
    return a.t_detection_index < b.t_detection_index;
  });

  Assignment out;
  std::set<int> k_taken, t_taken;
  for (const EdgeScore& s : pos) {
    if (k_taken.count(s.k_instance_id) || t_taken.count(s.t_detection_index)) continue;
    k_taken.insert(s.k_instance_id);
    t_taken.insert(s.t_detection_index);
    out.matched.push_back({s.k_instance_id, s.t_detection_index});
  }
  std::sort(out.matched.begin(), out.matched.end());
  for (int t : t_seen)
    if (!t_taken.count(t)) out.new_tracks.push_back(t);
  for (int k : k_seen)
    if (!k_taken.count(k)) out.unmatched_k.push_back(k);
  return out;
}

}  // namespace vistrack
