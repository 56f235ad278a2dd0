#include <doctest.h>

#include <json.hpp>
#include <vector>

#include "dense_reference.hpp"
#include "gradcheck.hpp"
#include "vistrack/graph.hpp"
#include "vistrack/rng.hpp"

using namespace vistrack;
using vistrack::testing::check_gradients;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (int i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

Instance boxed_instance(int id, int class_id, Box b) {
  Instance inst;
  inst.id = id;
  inst.class_id = class_id;
  inst.box = b;
  inst.cx = b.cx();
  inst.cy = b.cy();
  return inst;
}

// Random graph over an h x w grid with m instances, plus MLPs sized for it.
struct GraphFixture {
  Tensor f_k, f_t;
  InstanceSet instances;
  MlpParams n_e, n_v;
};

GraphFixture make_fixture(int d, int h, int w, int m, Rng& rng) {
  GraphFixture fx;
  fx.f_k = random_tensor({d, h, w}, rng);
  fx.f_t = random_tensor({d, h, w}, rng);
  for (int i = 0; i < m; ++i) {
    const double cx = rng.uniform(1.0, w - 1.0);
    const double cy = rng.uniform(1.0, h - 1.0);
    const double half_w = rng.uniform(0.5, 1.5), half_h = rng.uniform(0.5, 1.5);
    fx.instances.push_back(
        boxed_instance(i, i % 3, {cx - half_w, cy - half_h, cx + half_w, cy + half_h}));
  }
  fx.n_e = make_mlp(3 * d, 2 * d, d, rng);
  fx.n_v = make_mlp(2 * d, 2 * d, d, rng);
  return fx;
}

}  // namespace

TEST_SUITE("graph") {
  TEST_CASE("window of 3 around an integral center yields 9 edges") {
    Tensor f({4, 8, 8}, 0.1);
    InstanceSet one = {boxed_instance(0, 0, {3, 3, 5, 5})};  // center (4,4)
    FrameGraph g = build_graph(one, f, f, 3);
    CHECK(g.edge_count() == 9);
    // all endpoints within Chebyshev distance < 1.5 of (4,4)
    for (int i = 0; i < g.edge_count(); ++i) {
      const int x = g.edge_t[i] % g.width, y = g.edge_t[i] / g.width;
      CHECK(std::max(std::abs(x - 4), std::abs(y - 4)) <= 1);
    }
  }

  TEST_CASE("two instances with disjoint windows produce 2*w^2 edges") {
    Tensor f({4, 16, 16}, 0.1);
    InstanceSet two = {boxed_instance(0, 0, {2, 2, 4, 4}),     // center (3,3)
                       boxed_instance(1, 1, {11, 11, 13, 13})}; // center (12,12)
    FrameGraph g = build_graph(two, f, f, 3);
    CHECK(g.edge_count() == 18);
  }

  TEST_CASE("window is clipped at the grid border") {
    Tensor f({4, 8, 8}, 0.1);
    InstanceSet corner = {boxed_instance(0, 0, {-0.5, -0.5, 0.5, 0.5})};  // center (0,0)
    FrameGraph g = build_graph(corner, f, f, 3);
    CHECK(g.edge_count() == 4);  // cells (0,0),(1,0),(0,1),(1,1)
  }

  TEST_CASE("identical endpoint features give all-zero initial edges") {
    // pixel-aligned box and power-of-two constant keep the sampling exact
    Tensor f({4, 8, 8}, 0.5);
    InstanceSet one = {boxed_instance(0, 0, {3, 3, 6, 6})};
    FrameGraph g = build_graph(one, f, f, 5);
    REQUIRE(g.edge_count() > 0);
    for (int i = 0; i < g.edge_feats.numel(); ++i) CHECK(g.edge_feats.data()[i] == 0.0);
    // arbitrary box: equal only up to interpolation rounding
    Tensor f2({4, 8, 8}, 0.37);
    FrameGraph g2 = build_graph({boxed_instance(0, 0, {3.1, 2.8, 5.2, 5.4})}, f2, f2, 5);
    for (int i = 0; i < g2.edge_feats.numel(); ++i) CHECK(g2.edge_feats.data()[i] < 1e-14);
  }

  TEST_CASE("empty instance set yields a valid zero-edge graph") {
    Rng rng(21);
    Tensor f_k = random_tensor({4, 6, 6}, rng), f_t = random_tensor({4, 6, 6}, rng);
    FrameGraph g = build_graph({}, f_k, f_t, 5);
    CHECK(g.edge_count() == 0);
    CHECK(g.k_feats.shape() == Shape{0, 4});
    MlpParams n_e = make_mlp(12, 8, 4, rng), n_v = make_mlp(8, 8, 4, rng);
    FrameGraph after = message_pass(g, n_e, n_v, 3);
    CHECK(aggregate_feature(after).values() == f_t.values());  // exact
  }

  TEST_CASE("build_graph rejects mismatched feature maps") {
    CHECK_THROWS(build_graph({}, Tensor({4, 6, 6}), Tensor({4, 6, 8}), 5));
  }

  TEST_CASE("t-nodes outside every window are fixed points") {
    Rng rng(22);
    GraphFixture fx = make_fixture(4, 8, 8, 1, rng);
    fx.instances[0].box = {1, 1, 3, 3};  // center (2,2), window 3 covers cells 1..3
    FrameGraph g = build_graph(fx.instances, fx.f_k, fx.f_t, 3);
    FrameGraph after = message_pass(g, fx.n_e, fx.n_v, 3);
    const int far = 7 * 8 + 7;  // cell (7,7)
    for (int c = 0; c < 4; ++c) CHECK(after.t_feats.at({far, c}) == g.t_feats.at({far, c}));
  }

  TEST_CASE("zero message head makes every node a fixed point") {
    Rng rng(23);
    GraphFixture fx = make_fixture(4, 8, 8, 2, rng);
    std::fill(fx.n_v.w2.values().begin(), fx.n_v.w2.values().end(), 0.0);
    std::fill(fx.n_v.b2.values().begin(), fx.n_v.b2.values().end(), 0.0);
    FrameGraph g = build_graph(fx.instances, fx.f_k, fx.f_t, 5);
    FrameGraph after = message_pass(g, fx.n_e, fx.n_v, 2);
    CHECK(after.t_feats.values() == g.t_feats.values());
    CHECK(after.k_feats.values() == g.k_feats.values());
  }

  TEST_CASE("L=1: a perturbed t-node cannot reach any other t-node") {
    Rng rng(24);
    GraphFixture fx = make_fixture(4, 8, 8, 2, rng);
    FrameGraph base = message_pass(build_graph(fx.instances, fx.f_k, fx.f_t, 5), fx.n_e, fx.n_v, 1);

    Tensor f_t2 = Tensor::from(fx.f_t.shape(), fx.f_t.values());
    const int px = 3, py = 3;
    for (int c = 0; c < 4; ++c) f_t2.at({c, py, px}) += 0.5;
    FrameGraph bumped =
        message_pass(build_graph(fx.instances, fx.f_k, f_t2, 5), fx.n_e, fx.n_v, 1);

    for (int j = 0; j < 64; ++j) {
      if (j == py * 8 + px) continue;
      for (int c = 0; c < 4; ++c) CHECK(bumped.t_feats.at({j, c}) == base.t_feats.at({j, c}));
    }
  }

  TEST_CASE("L=2 influence flows exactly through shared k-neighbors") {
    Rng rng(25);
    const int d = 4, h = 12, wdt = 12;
    GraphFixture fx = make_fixture(d, h, wdt, 0, rng);
    // instance 0's window covers A=(2,2) and B=(3,2); instance 1's window is disjoint,, covers C=(9,9)
    fx.instances = {boxed_instance(0, 0, {1.5, 1.5, 3.5, 3.5}),
                    boxed_instance(1, 0, {8.5, 8.5, 10.5, 10.5})};
    const int a = 2 * wdt + 2, b = 2 * wdt + 3, c_cell = 9 * wdt + 9;

    auto run = [&](const Tensor& ft) {
      return message_pass(build_graph(fx.instances, fx.f_k, ft, 3), fx.n_e, fx.n_v, 2);
    };
    FrameGraph base = run(fx.f_t);
    Tensor f_t2 = Tensor::from(fx.f_t.shape(), fx.f_t.values());
    for (int c = 0; c < d; ++c) f_t2.at({c, 2, 2}) += 0.5;  // perturb A
    FrameGraph bumped = run(f_t2);

    double diff_b = 0, diff_c = 0;
    for (int c = 0; c < d; ++c) {
      diff_b += std::fabs(bumped.t_feats.at({b, c}) - base.t_feats.at({b, c}));
      diff_c += std::fabs(bumped.t_feats.at({c_cell, c}) - base.t_feats.at({c_cell, c}));
    }
    CHECK(diff_b > 1e-8);   // B shares k-node 0 with A
    CHECK(diff_c == 0.0);   // C reaches only k-node 1, which never saw A
  }

  TEST_CASE("batched message passing matches the dense per-edge reference") {
    for (int trial = 0; trial < 5; ++trial) {
      Rng rng(100 + trial);
      const int d = 4 + 2 * (trial % 2);
      GraphFixture fx = make_fixture(d, 6, 6, 4, rng);
      FrameGraph g = build_graph(fx.instances, fx.f_k, fx.f_t, 5);
      testing::DenseGraph ref = testing::dense_from(g);
      testing::dense_message_pass(ref, fx.n_e, fx.n_v, 3);
      FrameGraph got = message_pass(g, fx.n_e, fx.n_v, 3);
      CHECK(testing::dense_max_diff(got, ref) < 1e-9);
    }
  }

  TEST_CASE("edge order does not change the result") {
    Rng rng(26);
    GraphFixture fx = make_fixture(4, 6, 6, 2, rng);
    FrameGraph g = build_graph(fx.instances, fx.f_k, fx.f_t, 5);
    REQUIRE(g.edge_count() > 10);

    FrameGraph shuffled = g;
    std::vector<int> perm(g.edge_count());
    for (int i = 0; i < g.edge_count(); ++i) perm[i] = i;
    for (int i = g.edge_count() - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.uniform_int(0, i)]);
    shuffled.edge_k.clear();
    shuffled.edge_t.clear();
    for (int i : perm) {
      shuffled.edge_k.push_back(g.edge_k[i]);
      shuffled.edge_t.push_back(g.edge_t[i]);
    }
    shuffled.edge_feats = gather_rows(g.edge_feats, perm);

    FrameGraph a = message_pass(g, fx.n_e, fx.n_v, 3);
    FrameGraph b = message_pass(shuffled, fx.n_e, fx.n_v, 3);
    for (int i = 0; i < a.t_feats.numel(); ++i)
      CHECK(a.t_feats.data()[i] == doctest::Approx(b.t_feats.data()[i]).epsilon(1e-10));
    for (int i = 0; i < a.k_feats.numel(); ++i)
      CHECK(a.k_feats.data()[i] == doctest::Approx(b.k_feats.data()[i]).epsilon(1e-10));
  }

  TEST_CASE("aggregate_feature shape and inverse") {
    Rng rng(27);
    Tensor f_t = random_tensor({16, 8, 8}, rng);
    FrameGraph g = build_graph({}, f_t, f_t, 3);
    Tensor agg = aggregate_feature(g);
    CHECK(agg.shape() == Shape{16, 8, 8});
    CHECK(agg.values() == f_t.values());
  }

  TEST_CASE("gradients: build_graph + message_pass end to end") {
    Rng rng(28);
    const int d = 3;
    GraphFixture fx = make_fixture(d, 4, 4, 1, rng);
    fx.instances[0].box = {0.8, 1.1, 2.9, 3.2};
    check_gradients(
        {fx.f_k, fx.f_t, fx.n_e.w1, fx.n_e.b1, fx.n_e.w2, fx.n_e.b2, fx.n_v.w1, fx.n_v.b1,
         fx.n_v.w2, fx.n_v.b2},
        [&] {
          FrameGraph g = build_graph(fx.instances, fx.f_k, fx.f_t, 3);
          FrameGraph after = message_pass(g, fx.n_e, fx.n_v, 2);
          Tensor agg = aggregate_feature(after);
          Tensor both = concat({reshape(agg, {agg.numel()}),
                                reshape(after.edge_feats, {after.edge_feats.numel()}),
                                reshape(after.k_feats, {after.k_feats.numel()})},
                               0);
          return sum(mul(both, both));
        },
        5e-4);
  }

  TEST_CASE("debug dump is valid json with one entry per edge") {
    Rng rng(29);
    GraphFixture fx = make_fixture(4, 6, 6, 2, rng);
    FrameGraph g = build_graph(fx.instances, fx.f_k, fx.f_t, 3);
    auto j = nlohmann::json::parse(graph_debug_json(g));
    CHECK(j["edges"].size() == static_cast<std::size_t>(g.edge_count()));
    CHECK(j["k_nodes"].size() == 2);
    CHECK(j["width"] == 6);
  }
}
