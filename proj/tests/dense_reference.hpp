#pragma once

// Literal per-edge implementation of the graph update equations, written with
// plain scalar loops over dense adjacency. Deliberately independent of the
// batched Tensor implementation so it can serve as its oracle.

#include <cmath>
#include <vector>

#include "vistrack/graph.hpp"
#include "vistrack/nn.hpp"

namespace vistrack::testing {

using Vec = std::vector<double>;

// y = relu(x.W1 + b1).W2 + b2 over raw parameter storage
inline Vec mlp_eval(const MlpParams& p, const Vec& x) {
  const int in = p.w1.dim(0), hidden = p.w1.dim(1), out = p.w2.dim(1);
  Vec h(hidden);
  for (int j = 0; j < hidden; ++j) {
    double acc = p.b1.data()[j];
    for (int i = 0; i < in; ++i) acc += x[i] * p.w1.data()[i * hidden + j];
    h[j] = acc > 0 ? acc : 0.0;
  }
  Vec y(out);
  for (int j = 0; j < out; ++j) {
    double acc = p.b2.data()[j];
    for (int i = 0; i < hidden; ++i) acc += h[i] * p.w2.data()[i * out + j];
    y[j] = acc;
  }
  return y;
}

inline Vec vec_concat(const Vec& a, const Vec& b) {
  Vec r = a;
  r.insert(r.end(), b.begin(), b.end());
  return r;
}

inline Vec vec_concat(const Vec& a, const Vec& b, const Vec& c) {
  return vec_concat(vec_concat(a, b), c);
}

struct DenseGraph {
  std::vector<Vec> k, t;                   // node features
  std::vector<std::vector<bool>> adj;      // [m][n_t]
  std::vector<std::vector<Vec>> e;         // [m][n_t], meaningful where adj
};

inline Vec tensor_row(const Tensor& m, int row) {
  const int d = m.dim(1);
  return Vec(m.data() + row * d, m.data() + (row + 1) * d);
}

inline DenseGraph dense_from(const FrameGraph& g) {
  DenseGraph d;
  const int m = static_cast<int>(g.k_nodes.size());
  const int nt = g.height * g.width;
  for (int i = 0; i < m; ++i) d.k.push_back(tensor_row(g.k_feats, i));
  for (int j = 0; j < nt; ++j) d.t.push_back(tensor_row(g.t_feats, j));
  d.adj.assign(m, std::vector<bool>(nt, false));
  d.e.assign(m, std::vector<Vec>(nt));
  for (int idx = 0; idx < g.edge_count(); ++idx) {
    d.adj[g.edge_k[idx]][g.edge_t[idx]] = true;
    d.e[g.edge_k[idx]][g.edge_t[idx]] = tensor_row(g.edge_feats, idx);
  }
  return d;
}

inline void dense_message_pass(DenseGraph& d, const MlpParams& n_e, const MlpParams& n_v, int L) {
  const int m = static_cast<int>(d.k.size());
  const int nt = static_cast<int>(d.t.size());
  for (int l = 0; l < L; ++l) {
    // 1) every edge from its previous feature and both endpoints' previous features
    std::vector<std::vector<Vec>> e_new(m, std::vector<Vec>(nt));
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < nt; ++j)
        if (d.adj[i][j]) e_new[i][j] = mlp_eval(n_e, vec_concat(d.e[i][j], d.k[i], d.t[j]));
    // 2) every node: previous feature plus the sum of its incident messages
    std::vector<Vec> k_new = d.k, t_new = d.t;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < nt; ++j)
        if (d.adj[i][j]) {
          const Vec mk = mlp_eval(n_v, vec_concat(e_new[i][j], d.k[i]));
          for (std::size_t c = 0; c < mk.size(); ++c) k_new[i][c] += mk[c];
        }
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < nt; ++j)
        if (d.adj[i][j]) {
          const Vec mt = mlp_eval(n_v, vec_concat(e_new[i][j], d.t[j]));
          for (std::size_t c = 0; c < mt.size(); ++c) t_new[j][c] += mt[c];
        }
    d.k = k_new;
    d.t = t_new;
    d.e = e_new;
  }
}

// Largest absolute difference between the batched result and the dense one.
inline double dense_max_diff(const FrameGraph& got, const DenseGraph& want) {
  double worst = 0.0;
  auto upd = [&](double a, double b) { worst = std::max(worst, std::fabs(a - b)); };
  for (std::size_t i = 0; i < want.k.size(); ++i) {
    const Vec row = tensor_row(got.k_feats, static_cast<int>(i));
    for (std::size_t c = 0; c < row.size(); ++c) upd(row[c], want.k[i][c]);
  }
  for (std::size_t j = 0; j < want.t.size(); ++j) {
    const Vec row = tensor_row(got.t_feats, static_cast<int>(j));
    for (std::size_t c = 0; c < row.size(); ++c) upd(row[c], want.t[j][c]);
  }
  for (int idx = 0; idx < got.edge_count(); ++idx) {
    const Vec row = tensor_row(got.edge_feats, idx);
    const Vec& ref = want.e[got.edge_k[idx]][got.edge_t[idx]];
    for (std::size_t c = 0; c < row.size(); ++c) upd(row[c], ref[c]);
  }
  return worst;
}

}  // namespace vistrack::testing
