#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "vistrack/detect.hpp"
#include "vistrack/rng.hpp"

using namespace vistrack;
using vistrack::testing::check_gradients;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (int i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

Instance gt_instance(int class_id, Box b) {
  Instance inst;
  inst.class_id = class_id;
  inst.box = b;
  inst.cx = b.cx();
  inst.cy = b.cy();
  return inst;
}

// Scalar reference for the detection loss, written independently of the
// tensor ops: plain loops over raw arrays.
double detect_loss_reference(const DetMaps& maps, const InstanceSet& gt, double lambda_size,
                             double lambda_offset) {
  const int c = maps.heat.dim(0), h = maps.heat.dim(1), w = maps.heat.dim(2);
  Tensor target = encode_heat_targets(gt, c, h, w);
  const double n = std::max<std::size_t>(gt.size(), 1);
  double acc = 0.0;
  for (int i = 0; i < target.numel(); ++i) {
    const double p = std::min(std::max(maps.heat.data()[i], 1e-4), 1.0 - 1e-4);
    const double y = target.data()[i];
    if (y == 1.0)
      acc += (1 - p) * (1 - p) * std::log(p);
    else
      acc += std::pow(1 - y, 4.0) * p * p * std::log(1 - p);
  }
  double loss = -acc / n;
  double l_size = 0.0, l_off = 0.0;
  for (const Instance& inst : gt) {
    const int ix = static_cast<int>(inst.box.cx()), iy = static_cast<int>(inst.box.cy());
    const int cell = iy * w + ix;
    l_size += std::fabs(maps.size.data()[cell] - inst.box.width());
    l_size += std::fabs(maps.size.data()[h * w + cell] - inst.box.height());
    l_off += std::fabs(maps.offset.data()[cell] - (inst.box.cx() - ix));
    l_off += std::fabs(maps.offset.data()[h * w + cell] - (inst.box.cy() - iy));
  }
  return loss + lambda_size * l_size / n + lambda_offset * l_off / n;
}

// DetMaps that exactly encode the given instances.
DetMaps encode_exact(const InstanceSet& gt, int num_classes, int h, int w) {
  DetMaps m;
  m.heat = encode_heat_targets(gt, num_classes, h, w);
  m.size = Tensor({2, h, w});
  m.offset = Tensor({2, h, w});
  for (const Instance& inst : gt) {
    const int ix = static_cast<int>(inst.box.cx()), iy = static_cast<int>(inst.box.cy());
    m.size.at({0, iy, ix}) = inst.box.width();
    m.size.at({1, iy, ix}) = inst.box.height();
    m.offset.at({0, iy, ix}) = inst.box.cx() - ix;
    m.offset.at({1, iy, ix}) = inst.box.cy() - iy;
  }
  return m;
}

}  // namespace

TEST_SUITE("detect") {
  TEST_CASE("forward shapes and zero-weight heat") {
    Rng rng(31);
    DetHeadParams p = make_detect_head(8, 3, rng);
    Tensor f = random_tensor({8, 6, 6}, rng);
    DetMaps m = detect_forward(p, f);
    CHECK(m.heat.shape() == Shape{3, 6, 6});
    CHECK(m.size.shape() == Shape{2, 6, 6});
    CHECK(m.offset.shape() == Shape{2, 6, 6});
    for (int i = 0; i < m.heat.numel(); ++i) {
      CHECK(m.heat.data()[i] > 0.0);
      CHECK(m.heat.data()[i] < 1.0);
    }

    std::fill(p.heat.k2.values().begin(), p.heat.k2.values().end(), 0.0);
    std::fill(p.heat.b2.values().begin(), p.heat.b2.values().end(), 0.0);
    DetMaps flat = detect_forward(p, f);
    for (int i = 0; i < flat.heat.numel(); ++i) CHECK(flat.heat.data()[i] == 0.5);
  }

  TEST_CASE("forward gradient reaches the input map") {
    Rng rng(32);
    DetHeadParams p = make_detect_head(8, 3, rng);
    Tensor f = random_tensor({8, 6, 6}, rng);
    Tape tape;
    DetMaps m = detect_forward(p, f);
    tape.backward(add(sum(m.heat), add(sum(m.size), sum(m.offset))));
    REQUIRE(f.has_grad());
    double norm = 0;
    for (double g : f.grad()) norm += g * g;
    CHECK(norm > 0);
  }

  TEST_CASE("gaussian radius matches the three-case formula") {
    CHECK(gaussian_radius(4, 4) == doctest::Approx(1.0932802).epsilon(1e-6));
    CHECK(gaussian_radius(10, 10) == doctest::Approx(2.7332006).epsilon(1e-6));
    // small boxes round down to radius 0
    CHECK(static_cast<int>(gaussian_radius(1.5, 1.5)) == 0);
  }

  TEST_CASE("heat targets: small instance is a single-cell spike") {
    InstanceSet gt = {gt_instance(1, {3.5, 2.5, 5.5, 3.5})};  // center (4.5, 3), size 2x1
    Tensor t = encode_heat_targets(gt, 3, 8, 8);
    CHECK(t.at({1, 3, 4}) == 1.0);
    double total = 0;
    for (double v : t.values()) total += v;
    CHECK(total == 1.0);  // nothing else written, channels 0/2 empty
  }

  TEST_CASE("heat targets: large instance decays as a gaussian") {
    InstanceSet gt = {gt_instance(0, {0, 0, 10, 10})};  // center (5,5), radius 2
    Tensor t = encode_heat_targets(gt, 1, 12, 12);
    CHECK(t.at({0, 5, 5}) == 1.0);
    const double sigma = 5.0 / 6.0;
    CHECK(t.at({0, 5, 6}) == doctest::Approx(std::exp(-1.0 / (2 * sigma * sigma))));
    CHECK(t.at({0, 6, 6}) == doctest::Approx(std::exp(-2.0 / (2 * sigma * sigma))));
    CHECK(t.at({0, 5, 8}) == 0.0);  // outside the radius
    // two overlapping instances merge by max
    InstanceSet two = {gt_instance(0, {0, 0, 10, 10}), gt_instance(0, {2, 0, 12, 10})};
    Tensor t2 = encode_heat_targets(two, 1, 12, 12);
    CHECK(t2.at({0, 5, 5}) == 1.0);
    CHECK(t2.at({0, 5, 7}) == 1.0);
    CHECK(t2.at({0, 5, 6}) == doctest::Approx(std::exp(-1.0 / (2 * sigma * sigma))));
  }

  TEST_CASE("heat targets reject out-of-grid centers") {
    CHECK_THROWS(encode_heat_targets({gt_instance(0, {7, 7, 10, 10})}, 1, 8, 8));
    CHECK_THROWS(encode_heat_targets({gt_instance(5, {1, 1, 2, 2})}, 3, 8, 8));
  }

  TEST_CASE("perfect prediction has near-zero loss") {
    InstanceSet gt = {gt_instance(0, {2.2, 3.1, 3.7, 4.3}),
                      gt_instance(2, {5.5, 1.5, 7.0, 3.0})};  // radius-0 sizes
    DetMaps m = encode_exact(gt, 3, 8, 8);
    const double loss = detect_loss(m, gt, 0.1, 1.0).scalar_value();
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-6);
  }

  TEST_CASE("zero lambdas reduce to the center term") {
    Rng rng(33);
    DetMaps m;
    m.heat = random_tensor({2, 4, 4}, rng, 0.05, 0.95);
    m.size = random_tensor({2, 4, 4}, rng, 0, 3);
    m.offset = random_tensor({2, 4, 4}, rng, 0, 1);
    InstanceSet gt = {gt_instance(0, {0.5, 0.5, 2.5, 2.5})};
    const double got = detect_loss(m, gt, 0, 0).scalar_value();
    DetMaps center_only = m;
    const double want = detect_loss_reference(m, gt, 0, 0);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    // size/offset maps cannot influence the value
    m.size = random_tensor({2, 4, 4}, rng, 0, 3);
    CHECK(detect_loss(m, gt, 0, 0).scalar_value() == doctest::Approx(got).epsilon(1e-12));
    (void)center_only;
  }

  TEST_CASE("loss matches the scalar reference on random maps") {
    for (int trial = 0; trial < 10; ++trial) {
      Rng rng(200 + trial);
      DetMaps m;
      m.heat = random_tensor({2, 4, 4}, rng, 0.05, 0.95);
      m.size = random_tensor({2, 4, 4}, rng, 0, 3);
      m.offset = random_tensor({2, 4, 4}, rng, 0, 1);
      InstanceSet gt = {gt_instance(trial % 2, {0.5, 0.5, 2.5, 2.5}),
                        gt_instance(1, {1.2, 2.1, 3.4, 3.9})};
      const double got = detect_loss(m, gt, 0.1, 1.0).scalar_value();
      const double want = detect_loss_reference(m, gt, 0.1, 1.0);
      CHECK(std::fabs(got - want) < 1e-9);
    }
  }

  TEST_CASE("empty ground truth leaves a pure background loss") {
    Rng rng(34);
    DetMaps m;
    m.heat = random_tensor({2, 4, 4}, rng, 0.05, 0.95);
    m.size = random_tensor({2, 4, 4}, rng);
    m.offset = random_tensor({2, 4, 4}, rng);
    const double got = detect_loss(m, {}, 0.1, 1.0).scalar_value();
    CHECK(got > 0.0);
    CHECK(got == doctest::Approx(detect_loss_reference(m, {}, 0.1, 1.0)).epsilon(1e-12));
  }

  TEST_CASE("gradients: detect_loss w.r.t. all three maps") {
    Rng rng(35);
    DetMaps m;
    m.heat = random_tensor({2, 4, 4}, rng, 0.1, 0.9);
    m.size = random_tensor({2, 4, 4}, rng, 0.5, 3);
    m.offset = random_tensor({2, 4, 4}, rng, 0.1, 0.9);
    InstanceSet gt = {gt_instance(0, {0.6, 0.7, 2.4, 2.8}), gt_instance(1, {1.3, 2.2, 3.1, 3.8})};
    check_gradients({m.heat, m.size, m.offset},
                    [&] { return detect_loss(m, gt, 0.1, 1.0); }, 2e-4);
  }

  TEST_CASE("decode finds a constructed peak with refined center and size") {
    DetMaps m;
    m.heat = Tensor({2, 8, 8});
    m.size = Tensor({2, 8, 8});
    m.offset = Tensor({2, 8, 8});
    m.heat.at({1, 3, 5}) = 0.9;
    m.size.at({0, 3, 5}) = 4.0;
    m.size.at({1, 3, 5}) = 2.0;
    m.offset.at({0, 3, 5}) = 0.25;
    m.offset.at({1, 3, 5}) = 0.5;
    InstanceSet dets = decode_detections(m, 10, 0.3);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].class_id == 1);
    CHECK(dets[0].score == doctest::Approx(0.9));
    CHECK(dets[0].cx == doctest::Approx(5.25));
    CHECK(dets[0].cy == doctest::Approx(3.5));
    CHECK(dets[0].cell_x == 5);
    CHECK(dets[0].cell_y == 3);
    CHECK(dets[0].box.width() == doctest::Approx(4.0));
    CHECK(dets[0].box.height() == doctest::Approx(2.0));
    CHECK(dets[0].box.x1 == doctest::Approx(3.25));

    CHECK(decode_detections(m, 10, 1.0).empty());
  }

  TEST_CASE("decode threshold and top_k filtering") {
    DetMaps m;
    m.heat = Tensor({1, 8, 8});
    m.size = Tensor({2, 8, 8}, 1.0);
    m.offset = Tensor({2, 8, 8});
    m.heat.at({0, 2, 2}) = 0.9;
    m.heat.at({0, 6, 6}) = 0.4;
    CHECK(decode_detections(m, 10, 0.5).size() == 1);
    CHECK(decode_detections(m, 10, 0.3).size() == 2);
    InstanceSet one = decode_detections(m, 1, 0.3);
    REQUIRE(one.size() == 1);
    CHECK(one[0].score == doctest::Approx(0.9));
  }

  TEST_CASE("adjacent equal peaks both survive") {
    DetMaps m;
    m.heat = Tensor({1, 8, 8});
    m.size = Tensor({2, 8, 8}, 1.0);
    m.offset = Tensor({2, 8, 8});
    m.heat.at({0, 4, 3}) = 1.0;
    m.heat.at({0, 4, 4}) = 1.0;
    InstanceSet dets = decode_detections(m, 10, 0.3);
    CHECK(dets.size() == 2);
  }

  TEST_CASE("raising the background below threshold changes nothing") {
    DetMaps m;
    m.heat = Tensor({1, 8, 8});
    m.size = Tensor({2, 8, 8}, 2.0);
    m.offset = Tensor({2, 8, 8});
    m.heat.at({0, 2, 2}) = 1.0;
    m.heat.at({0, 5, 6}) = 0.8;
    InstanceSet base = decode_detections(m, 10, 0.3);
    for (int i = 0; i < m.heat.numel(); ++i)
      if (m.heat.data()[i] == 0.0) m.heat.data()[i] = 0.2;
    InstanceSet raised = decode_detections(m, 10, 0.3);
    REQUIRE(base.size() == raised.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(base[i].cell_x == raised[i].cell_x);
      CHECK(base[i].cell_y == raised[i].cell_y);
      CHECK(base[i].score == raised[i].score);
    }
  }

  TEST_CASE("encode-decode round trip recovers random layouts") {
    for (int trial = 0; trial < 20; ++trial) {
      Rng rng(300 + trial);
      const int h = 16, w = 16, classes = 3;
      InstanceSet gt;
      std::vector<int> used;
      const int count = rng.uniform_int(1, 5);
      while (static_cast<int>(gt.size()) < count) {
        const double bw = rng.uniform(1.0, 6.0), bh = rng.uniform(1.0, 6.0);
        const double cx = rng.uniform(bw / 2 + 0.1, w - bw / 2 - 0.1);
        const double cy = rng.uniform(bh / 2 + 0.1, h - bh / 2 - 0.1);
        const int cls = rng.uniform_int(0, classes - 1);
        const int cell = static_cast<int>(cy) * w + static_cast<int>(cx);
        // one center per cell: size and offset are shared across classes
        if (std::find(used.begin(), used.end(), cell) != used.end()) continue;
        used.push_back(cell);
        gt.push_back(gt_instance(cls, {cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2}));
      }
      DetMaps m = encode_exact(gt, classes, h, w);
      InstanceSet dets = decode_detections(m, 32, 0.3);
      REQUIRE(dets.size() == gt.size());
      for (const Instance& inst : gt) {
        bool matched = false;
        for (const Instance& det : dets) {
          if (det.class_id != inst.class_id) continue;
          if (std::fabs(det.cx - inst.box.cx()) < 0.5 && std::fabs(det.cy - inst.box.cy()) < 0.5 &&
              std::fabs(det.box.width() - inst.box.width()) < 1e-9 &&
              std::fabs(det.box.height() - inst.box.height()) < 1e-9) {
            matched = true;
            break;
          }
        }
        CHECK(matched);
      }
    }
  }
}
