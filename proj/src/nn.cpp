#include "vistrack/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vistrack {

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor t(shape);
  const double stddev = std::sqrt(2.0 / fan_in);
  for (int i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, stddev);
  return t;
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor t(shape);
  for (int i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, stddev);
  return t;
}

// ---- MLP ----

MlpParams make_mlp(int in, int hidden, int out, Rng& rng, double final_std) {
  MlpParams p;
  p.w1 = he_normal({in, hidden}, in, rng);
  p.b1 = Tensor({hidden});
  p.w2 = final_std < 0 ? he_normal({hidden, out}, hidden, rng)
                       : normal_init({hidden, out}, final_std, rng);
  p.b2 = Tensor({out});
  return p;
}

Tensor mlp_rows(const MlpParams& p, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != p.w1.dim(0))
    throw std::invalid_argument("mlp: input " + shape_str(x.shape()) + " does not match layer " +
                                shape_str(p.w1.shape()));
  Tensor h = relu(bias_add(matmul(x, p.w1), p.b1));
  return bias_add(matmul(h, p.w2), p.b2);
}

Tensor mlp_forward(const MlpParams& p, const Tensor& x) {
  if (x.rank() != 1)
    throw std::invalid_argument("mlp_forward: vector input required, got " +
                                shape_str(x.shape()));
  return reshape(mlp_rows(p, reshape(x, {1, x.dim(0)})), {p.b2.dim(0)});
}

void append_mlp_params(const std::string& prefix, const MlpParams& p,
                       std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".w1", p.w1});
  out.push_back({prefix + ".b1", p.b1});
  out.push_back({prefix + ".w2", p.w2});
  out.push_back({prefix + ".b2", p.b2});
}

// ---- backbone ----

BackboneParams make_backbone(int d, Rng& rng) {
  const int channels[5] = {3, 16, 32, 64, d};
  const int strides[4] = {1, 2, 1, 2};
  BackboneParams p;
  for (int i = 0; i < 4; ++i) {
    ConvBlock b;
    b.kernel = he_normal({channels[i + 1], channels[i], 3, 3}, channels[i] * 9, rng);
    b.bias = Tensor({channels[i + 1]});
    b.stride = strides[i];
    p.blocks.push_back(b);
  }
  return p;
}

Tensor backbone_forward(const BackboneParams& p, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("backbone_forward: expected [3xHxW] image, got " +
                                shape_str(image.shape()));
  if (image.dim(1) % 4 != 0 || image.dim(2) % 4 != 0)
    throw std::invalid_argument("backbone_forward: spatial size " + shape_str(image.shape()) +
                                " not divisible by 4");
  Tensor x = image;
  for (const ConvBlock& b : p.blocks) x = relu(bias_add(conv2d(x, b.kernel, b.stride, 1), b.bias));
  return x;
}

void append_backbone_params(const std::string& prefix, const BackboneParams& p,
                            std::vector<NamedTensor>& out) {
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string base = prefix + ".conv" + std::to_string(i + 1);
    out.push_back({base + ".kernel", p.blocks[i].kernel});
    out.push_back({base + ".bias", p.blocks[i].bias});
  }
}

// ---- roi_align ----

Tensor roi_align(const Tensor& feature, const Box& box, int out) {
  if (feature.rank() != 3)
    throw std::invalid_argument("roi_align: feature must be [DxHxW], got " +
                                shape_str(feature.shape()));
  if (out < 1) throw std::invalid_argument("roi_align: out must be >= 1");
  if (!(box.width() > 0) || !(box.height() > 0))
    throw std::invalid_argument("roi_align: box " + std::to_string(box.x1) + "," +
                                std::to_string(box.y1) + "," + std::to_string(box.x2) + "," +
                                std::to_string(box.y2) + " has nonpositive size");
  const int d = feature.dim(0), h = feature.dim(1), w = feature.dim(2);
  const double x1 = std::clamp(box.x1, 0.0, double(w));
  const double x2 = std::clamp(box.x2, 0.0, double(w));
  const double y1 = std::clamp(box.y1, 0.0, double(h));
  const double y2 = std::clamp(box.y2, 0.0, double(h));
  const double bw = std::max(x2 - x1, 1e-6);
  const double bh = std::max(y2 - y1, 1e-6);

  // Per sample: 4 corner flat indices (within one channel plane) + weights.
  const int cells = out * out;
  std::vector<int> c00(cells), c01(cells), c10(cells), c11(cells);
  std::vector<double> w00(cells), w01(cells), w10(cells), w11(cells);
  for (int i = 0; i < out; ++i)
    for (int j = 0; j < out; ++j) {
      const double sx = x1 + (j + 0.5) * bw / out;
      const double sy = y1 + (i + 0.5) * bh / out;
      // pixel (ix,iy) has its center at (ix+0.5, iy+0.5)
      const double u = std::clamp(sx - 0.5, 0.0, double(w - 1));
      const double v = std::clamp(sy - 0.5, 0.0, double(h - 1));
      const int x0 = std::min(int(u), w - 1), y0 = std::min(int(v), h - 1);
      const int xp = std::min(x0 + 1, w - 1), yp = std::min(y0 + 1, h - 1);
      const double fx = u - x0, fy = v - y0;
      const int cell = i * out + j;
      c00[cell] = y0 * w + x0;
      c01[cell] = y0 * w + xp;
      c10[cell] = yp * w + x0;
      c11[cell] = yp * w + xp;
      w00[cell] = (1 - fx) * (1 - fy);
      w01[cell] = fx * (1 - fy);
      w10[cell] = (1 - fx) * fy;
      w11[cell] = fx * fy;
    }

  Tensor result({d, out, out});
  const double* f = feature.data();
  double* r = result.data();
  for (int c = 0; c < d; ++c) {
    const double* plane = f + c * h * w;
    for (int cell = 0; cell < cells; ++cell)
      r[c * cells + cell] = w00[cell] * plane[c00[cell]] + w01[cell] * plane[c01[cell]] +
                            w10[cell] * plane[c10[cell]] + w11[cell] * plane[c11[cell]];
  }
  if (Tape* tape = Tape::current()) {
    Tensor fc = feature, oc = result;
    tape->record({feature.node_id()}, result,
                 [fc, oc, c00, c01, c10, c11, w00, w01, w10, w11, d, h, w, cells]() mutable {
                   if (!oc.has_grad()) return;
                   const double* g = oc.grad().data();
                   double* gf = fc.ensure_grad().data();
                   for (int c = 0; c < d; ++c) {
                     double* plane = gf + c * h * w;
                     for (int cell = 0; cell < cells; ++cell) {
                       const double gv = g[c * cells + cell];
                       plane[c00[cell]] += w00[cell] * gv;
                       plane[c01[cell]] += w01[cell] * gv;
                       plane[c10[cell]] += w10[cell] * gv;
                       plane[c11[cell]] += w11[cell] * gv;
                     }
                   }
                 });
  }
  return result;
}

Tensor flatten_node_feature(const Tensor& patch) { return spatial_mean(patch); }

// ---- deformable convolution ----

namespace {

// Bilinear sample with zero outside the image; also returns the spatial
// derivatives needed for offset gradients.
struct BilinearTap {
  int x0, y0;
  double fx, fy;
};

inline BilinearTap make_tap(double sx, double sy) {
  BilinearTap t;
  t.x0 = static_cast<int>(std::floor(sx));
  t.y0 = static_cast<int>(std::floor(sy));
  t.fx = sx - t.x0;
  t.fy = sy - t.y0;
  return t;
}

inline double corner(const double* plane, int h, int w, int y, int x) {
  if (x < 0 || x >= w || y < 0 || y >= h) return 0.0;
  return plane[y * w + x];
}

inline double sample(const double* plane, int h, int w, const BilinearTap& t) {
  const double v00 = corner(plane, h, w, t.y0, t.x0);
  const double v01 = corner(plane, h, w, t.y0, t.x0 + 1);
  const double v10 = corner(plane, h, w, t.y0 + 1, t.x0);
  const double v11 = corner(plane, h, w, t.y0 + 1, t.x0 + 1);
  return (1 - t.fx) * (1 - t.fy) * v00 + t.fx * (1 - t.fy) * v01 + (1 - t.fx) * t.fy * v10 +
         t.fx * t.fy * v11;
}

inline void sample_grads(const double* plane, int h, int w, const BilinearTap& t, double& d_dx,
                         double& d_dy) {
  const double v00 = corner(plane, h, w, t.y0, t.x0);
  const double v01 = corner(plane, h, w, t.y0, t.x0 + 1);
  const double v10 = corner(plane, h, w, t.y0 + 1, t.x0);
  const double v11 = corner(plane, h, w, t.y0 + 1, t.x0 + 1);
  d_dx = (1 - t.fy) * (v01 - v00) + t.fy * (v11 - v10);
  d_dy = (1 - t.fx) * (v10 - v00) + t.fx * (v11 - v01);
}

inline void scatter(double* gplane, int h, int w, const BilinearTap& t, double g) {
  auto put = [&](int y, int x, double v) {
    if (x >= 0 && x < w && y >= 0 && y < h) gplane[y * w + x] += v;
  };
  put(t.y0, t.x0, (1 - t.fx) * (1 - t.fy) * g);
  put(t.y0, t.x0 + 1, t.fx * (1 - t.fy) * g);
  put(t.y0 + 1, t.x0, (1 - t.fx) * t.fy * g);
  put(t.y0 + 1, t.x0 + 1, t.fx * t.fy * g);
}

void check_offsets(const Tensor& input, const Tensor& offsets) {
  if (offsets.rank() != 3 || offsets.dim(0) != 18 || offsets.dim(1) != input.dim(1) ||
      offsets.dim(2) != input.dim(2))
    throw std::invalid_argument("deformable_conv: offsets " + shape_str(offsets.shape()) +
                                " do not match input " + shape_str(input.shape()) +
                                " (need [18xHxW])");
}

}  // namespace

Tensor deformable_conv(const Tensor& input, const Tensor& weights, const Tensor& offsets) {
  if (input.rank() != 3)
    throw std::invalid_argument("deformable_conv: input must be [CxHxW], got " +
                                shape_str(input.shape()));
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (weights.rank() != 4 || weights.dim(1) != cin || weights.dim(2) != 3 || weights.dim(3) != 3)
    throw std::invalid_argument("deformable_conv: weights " + shape_str(weights.shape()) +
                                " do not match input " + shape_str(input.shape()));
  check_offsets(input, offsets);
  const int cout = weights.dim(0);

  Tensor out({cout, h, w});
  const double* in = input.data();
  const double* wv = weights.data();
  const double* off = offsets.data();
  double* ov = out.data();
  const int hw = h * w;
  std::vector<double> s(static_cast<std::size_t>(cin) * 9);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      BilinearTap taps[9];
      for (int t = 0; t < 9; ++t) {
        const double dx = off[(2 * t) * hw + y * w + x];
        const double dy = off[(2 * t + 1) * hw + y * w + x];
        taps[t] = make_tap(x + t % 3 - 1 + dx, y + t / 3 - 1 + dy);
      }
      for (int ci = 0; ci < cin; ++ci)
        for (int t = 0; t < 9; ++t) s[ci * 9 + t] = sample(in + ci * hw, h, w, taps[t]);
      for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        const double* wbase = wv + co * cin * 9;
        for (int ci = 0; ci < cin; ++ci)
          for (int t = 0; t < 9; ++t) acc += wbase[ci * 9 + t] * s[ci * 9 + t];
        ov[co * hw + y * w + x] = acc;
      }
    }

  if (Tape* tape = Tape::current()) {
    Tensor ic = input, wc = weights, fc = offsets, oc = out;
    tape->record(
        {input.node_id(), weights.node_id(), offsets.node_id()}, out,
        [ic, wc, fc, oc, cin, cout, h, w]() mutable {
          if (!oc.has_grad()) return;
          const int hw = h * w;
          const double* g = oc.grad().data();
          const double* in2 = ic.data();
          const double* wv2 = wc.data();
          const double* off2 = fc.data();
          double* gi = ic.ensure_grad().data();
          double* gw = wc.ensure_grad().data();
          double* gf = fc.ensure_grad().data();
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              BilinearTap taps[9];
              for (int t = 0; t < 9; ++t) {
                const double dx = off2[(2 * t) * hw + y * w + x];
                const double dy = off2[(2 * t + 1) * hw + y * w + x];
                taps[t] = make_tap(x + t % 3 - 1 + dx, y + t / 3 - 1 + dy);
              }
              for (int ci = 0; ci < cin; ++ci) {
                const double* plane = in2 + ci * hw;
                double* gplane = gi + ci * hw;
                for (int t = 0; t < 9; ++t) {
                  // ds = d(loss)/d(sample value for this channel+tap)
                  double ds = 0.0;
                  for (int co = 0; co < cout; ++co)
                    ds += g[co * hw + y * w + x] * wv2[(co * cin + ci) * 9 + t];
                  if (ds == 0.0) continue;
                  scatter(gplane, h, w, taps[t], ds);
                  double ddx, ddy;
                  sample_grads(plane, h, w, taps[t], ddx, ddy);
                  gf[(2 * t) * hw + y * w + x] += ds * ddx;
                  gf[(2 * t + 1) * hw + y * w + x] += ds * ddy;
                }
              }
              for (int co = 0; co < cout; ++co) {
                const double gv = g[co * hw + y * w + x];
                if (gv == 0.0) continue;
                for (int ci = 0; ci < cin; ++ci) {
                  const double* plane = in2 + ci * hw;
                  for (int t = 0; t < 9; ++t)
                    gw[(co * cin + ci) * 9 + t] += gv * sample(plane, h, w, taps[t]);
                }
              }
            }
        });
  }
  return out;
}

Tensor deformable_conv_shared(const Tensor& input, const Tensor& kernel, const Tensor& offsets) {
  if (input.rank() != 3)
    throw std::invalid_argument("deformable_conv_shared: input must be [CxHxW], got " +
                                shape_str(input.shape()));
  if (kernel.rank() != 2 || kernel.dim(0) != 3 || kernel.dim(1) != 3)
    throw std::invalid_argument("deformable_conv_shared: kernel must be [3x3], got " +
                                shape_str(kernel.shape()));
  check_offsets(input, offsets);
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int hw = h * w;

  Tensor out({c, h, w});
  const double* in = input.data();
  const double* kv = kernel.data();
  const double* off = offsets.data();
  double* ov = out.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      BilinearTap taps[9];
      for (int t = 0; t < 9; ++t) {
        const double dx = off[(2 * t) * hw + y * w + x];
        const double dy = off[(2 * t + 1) * hw + y * w + x];
        taps[t] = make_tap(x + t % 3 - 1 + dx, y + t / 3 - 1 + dy);
      }
      for (int ci = 0; ci < c; ++ci) {
        const double* plane = in + ci * hw;
        double acc = 0.0;
        for (int t = 0; t < 9; ++t) acc += kv[t] * sample(plane, h, w, taps[t]);
        ov[ci * hw + y * w + x] = acc;
      }
    }

  if (Tape* tape = Tape::current()) {
    Tensor ic = input, kc = kernel, fc = offsets, oc = out;
    tape->record({input.node_id(), kernel.node_id(), offsets.node_id()}, out,
                 [ic, kc, fc, oc, c, h, w]() mutable {
                   if (!oc.has_grad()) return;
                   const int hw = h * w;
                   const double* g = oc.grad().data();
                   const double* in2 = ic.data();
                   const double* kv2 = kc.data();
                   const double* off2 = fc.data();
                   double* gi = ic.ensure_grad().data();
                   double* gk = kc.ensure_grad().data();
                   double* gf = fc.ensure_grad().data();
                   for (int y = 0; y < h; ++y)
                     for (int x = 0; x < w; ++x) {
                       BilinearTap taps[9];
                       for (int t = 0; t < 9; ++t) {
                         const double dx = off2[(2 * t) * hw + y * w + x];
                         const double dy = off2[(2 * t + 1) * hw + y * w + x];
                         taps[t] = make_tap(x + t % 3 - 1 + dx, y + t / 3 - 1 + dy);
                       }
                       for (int ci = 0; ci < c; ++ci) {
                         const double gv = g[ci * hw + y * w + x];
                         if (gv == 0.0) continue;
                         const double* plane = in2 + ci * hw;
                         double* gplane = gi + ci * hw;
                         for (int t = 0; t < 9; ++t) {
                           gk[t] += gv * sample(plane, h, w, taps[t]);
                           const double ds = gv * kv2[t];
                           scatter(gplane, h, w, taps[t], ds);
                           double ddx, ddy;
                           sample_grads(plane, h, w, taps[t], ddx, ddy);
                           gf[(2 * t) * hw + y * w + x] += ds * ddx;
                           gf[(2 * t + 1) * hw + y * w + x] += ds * ddy;
                         }
                       }
                     }
                 });
  }
  return out;
}

}  // namespace vistrack
