#include "vistrack/graph.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace vistrack {

FrameGraph build_graph(const InstanceSet& instances_k, const Tensor& F_k, const Tensor& F_t,
                       int w, int roi_out) {
  if (F_k.rank() != 3 || F_t.rank() != 3 || F_k.shape() != F_t.shape())
    throw std::invalid_argument("build_graph: feature maps must share shape, got " +
                                shape_str(F_k.shape()) + " and " + shape_str(F_t.shape()));
  const int d = F_k.dim(0);
  std::vector<FrameGraph::KNode> nodes;
  std::vector<Tensor> k_rows;
  for (const Instance& inst : instances_k) {
    nodes.push_back({inst.id, inst.class_id, inst.box.cx(), inst.box.cy()});
    Tensor feat = flatten_node_feature(roi_align(F_k, inst.box, roi_out));
    k_rows.push_back(reshape(feat, {1, d}));
  }
  Tensor k_feats = k_rows.empty() ? Tensor({0, d}) : concat(k_rows, 0);
  return build_graph_nodes(std::move(nodes), k_feats, F_t, w);
}

FrameGraph build_graph_nodes(std::vector<FrameGraph::KNode> nodes, const Tensor& k_feats,
                             const Tensor& F_t, int w) {
  if (F_t.rank() != 3)
    throw std::invalid_argument("build_graph: target features must be [D x H x W]");
  if (w < 1) throw std::invalid_argument("build_graph: window must be >= 1");
  if (k_feats.rank() != 2 || k_feats.dim(0) != static_cast<int>(nodes.size()) ||
      k_feats.dim(1) != F_t.dim(0))
    throw std::invalid_argument("build_graph: reference features must be [" +
                                std::to_string(nodes.size()) + " x " +
                                std::to_string(F_t.dim(0)) + "], got " +
                                shape_str(k_feats.shape()));

  FrameGraph g;
  g.feat_dim = F_t.dim(0);
  g.height = F_t.dim(1);
  g.width = F_t.dim(2);
  g.window = w;
  g.k_nodes = std::move(nodes);
  g.k_feats = k_feats;
  g.t_feats = channels_to_rows(F_t);

  const double half = w / 2.0;
  for (std::size_t i = 0; i < g.k_nodes.size(); ++i) {
    const double cx = g.k_nodes[i].cx, cy = g.k_nodes[i].cy;
    // candidate rows/cols limited to the window's bounding range
    const int y_lo = std::max(0, static_cast<int>(std::ceil(cy - half)));
    const int y_hi = std::min(g.height - 1, static_cast<int>(std::floor(cy + half)));
    const int x_lo = std::max(0, static_cast<int>(std::ceil(cx - half)));
    const int x_hi = std::min(g.width - 1, static_cast<int>(std::floor(cx + half)));
    for (int y = y_lo; y <= y_hi; ++y)
      for (int x = x_lo; x <= x_hi; ++x)
        if (std::max(std::fabs(x - cx), std::fabs(y - cy)) < half) {
          g.edge_k.push_back(static_cast<int>(i));
          g.edge_t.push_back(y * g.width + x);
        }
  }
  if (g.edge_count() == 0) {
    g.edge_feats = Tensor({0, g.feat_dim});
  } else {
    g.edge_feats = abs(sub(gather_rows(g.k_feats, g.edge_k), gather_rows(g.t_feats, g.edge_t)));
  }
  return g;
}

FrameGraph message_pass(const FrameGraph& g, const MlpParams& n_e, const MlpParams& n_v, int L) {
  if (L < 1) throw std::invalid_argument("message_pass: L must be >= 1");
  FrameGraph out = g;
  out.iterations_run = L;
  if (g.edge_count() == 0) return out;  // every node keeps its feature exactly

  Tensor k = out.k_feats, t = out.t_feats, e = out.edge_feats;
  for (int l = 0; l < L; ++l) {
    Tensor k_end = gather_rows(k, out.edge_k);  // endpoint features at l-1
    Tensor t_end = gather_rows(t, out.edge_t);
    e = mlp_rows(n_e, concat({e, k_end, t_end}, 1));
    Tensor msg_k = mlp_rows(n_v, concat({e, k_end}, 1));
    Tensor msg_t = mlp_rows(n_v, concat({e, t_end}, 1));
    k = index_add_rows(k, out.edge_k, msg_k);
    t = index_add_rows(t, out.edge_t, msg_t);
  }
  out.k_feats = k;
  out.t_feats = t;
  out.edge_feats = e;
  return out;
}

Tensor aggregate_feature(const FrameGraph& g) {
  return rows_to_channels(g.t_feats, g.height, g.width);
}

std::string graph_debug_json(const FrameGraph& g) {
  nlohmann::json j;
  j["height"] = g.height;
  j["width"] = g.width;
  j["feat_dim"] = g.feat_dim;
  j["window"] = g.window;
  j["iterations_run"] = g.iterations_run;
  j["k_nodes"] = nlohmann::json::array();
  for (const auto& kn : g.k_nodes)
    j["k_nodes"].push_back({{"instance_id", kn.instance_id},
                            {"class_id", kn.class_id},
                            {"cx", kn.cx},
                            {"cy", kn.cy}});
  auto row_norm = [](const Tensor& m, int row) {
    double s = 0;
    for (int c = 0; c < m.dim(1); ++c) s += m.at({row, c}) * m.at({row, c});
    return std::sqrt(s);
  };
  j["edges"] = nlohmann::json::array();
  for (int i = 0; i < g.edge_count(); ++i)
    j["edges"].push_back({{"k", g.edge_k[i]},
                          {"t_x", g.edge_t[i] % g.width},
                          {"t_y", g.edge_t[i] / g.width},
                          {"feature_norm", row_norm(g.edge_feats, i)}});
  return j.dump(2);
}

}  // namespace vistrack
