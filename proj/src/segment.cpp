#include "vistrack/segment.hpp"

#include <algorithm>
#include <stdexcept>

#include "vistrack/nn.hpp"
#include "vistrack/rng.hpp"

namespace vistrack {

SegParams make_seg_params(int d, Rng& rng) {
  if (d < 1) throw std::invalid_argument("make_seg_params: feature dim must be positive");
  SegParams p;
  p.ctrl_k1 = he_normal({d, d, 3, 3}, d * 9, rng);
  p.ctrl_b1 = Tensor({d});
  p.ctrl_k2 = normal_init({kFilterChannels, d, 1, 1}, 0.01, rng);
  p.ctrl_b2 = Tensor({kFilterChannels});
  p.reduce_k = he_normal({8, d, 1, 1}, d, rng);
  p.reduce_b = Tensor({8});
  const int hidden = std::max(d / 2, 4);
  p.off_k1 = he_normal({hidden, d, 3, 3}, d * 9, rng);
  p.off_b1 = Tensor({hidden});
  p.off_k2 = normal_init({18, hidden, 3, 3}, 0.01, rng);
  p.off_b2 = Tensor({18});
  // start as the identity warp: center tap only, offsets near zero
  p.warp_kernel = Tensor({3, 3});
  p.warp_kernel.at({1, 1}) = 1.0;
  return p;
}

void append_seg_params(const std::string& prefix, const SegParams& p,
                       std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".ctrl_k1", p.ctrl_k1});
  out.push_back({prefix + ".ctrl_b1", p.ctrl_b1});
  out.push_back({prefix + ".ctrl_k2", p.ctrl_k2});
  out.push_back({prefix + ".ctrl_b2", p.ctrl_b2});
  out.push_back({prefix + ".reduce_k", p.reduce_k});
  out.push_back({prefix + ".reduce_b", p.reduce_b});
  out.push_back({prefix + ".off_k1", p.off_k1});
  out.push_back({prefix + ".off_b1", p.off_b1});
  out.push_back({prefix + ".off_k2", p.off_k2});
  out.push_back({prefix + ".off_b2", p.off_b2});
  out.push_back({prefix + ".warp_kernel", p.warp_kernel});
}

FilterMap controller_forward(const SegParams& p, const Tensor& feature) {
  Tensor h = relu(bias_add(conv2d(feature, p.ctrl_k1, 1, 1), p.ctrl_b1));
  return {bias_add(conv2d(h, p.ctrl_k2, 1, 0), p.ctrl_b2)};
}

Tensor reduce_channels(const SegParams& p, const Tensor& feature) {
  return bias_add(conv2d(feature, p.reduce_k, 1, 0), p.reduce_b);
}

Tensor position_map(double x, double y, int height, int width) {
  if (height < 1 || width < 1) throw std::invalid_argument("position_map: empty grid");
  if (x < 0 || x >= width || y < 0 || y >= height)
    throw std::invalid_argument("position_map: center outside the grid");
  const double s = std::max(height, width);
  Tensor out({2, height, width});
  for (int row = 0; row < height; ++row)
    for (int col = 0; col < width; ++col) {
      out.at({0, row, col}) = (col - x) / s;
      out.at({1, row, col}) = (row - y) / s;
    }
  return out;
}

Tensor filters_at(const FilterMap& map, int x, int y) {
  if (map.params.rank() != 3 || map.params.dim(0) != kFilterChannels)
    throw std::invalid_argument("filters_at: expected a [169 x H x W] filter map");
  const int h = map.params.dim(1), w = map.params.dim(2);
  if (x < 0 || x >= w || y < 0 || y >= h)
    throw std::invalid_argument("filters_at: cell outside the grid");
  Tensor rows = channels_to_rows(map.params);  // [(H*W) x 169]
  Tensor picked = gather_rows(rows, {y * w + x});
  return reshape(picked, {kFilterChannels});
}

MaskFilters unpack_filters(const Tensor& theta) {
  if (theta.rank() != 1 || theta.dim(0) != kFilterChannels)
    throw std::invalid_argument("unpack_filters: expected a [169] vector");
  MaskFilters f;
  f.w1 = reshape(slice1d(theta, 0, 80), {8, 10, 1, 1});
  f.b1 = slice1d(theta, 80, 8);
  f.w2 = reshape(slice1d(theta, 88, 64), {8, 8, 1, 1});
  f.b2 = slice1d(theta, 152, 8);
  f.w3 = reshape(slice1d(theta, 160, 8), {1, 8, 1, 1});
  f.b3 = slice1d(theta, 168, 1);
  return f;
}

Tensor pack_filters(const MaskFilters& f) {
  return concat({reshape(f.w1, {80}), f.b1, reshape(f.w2, {64}), f.b2, reshape(f.w3, {8}), f.b3},
                0);
}

Tensor mask_forward(const Tensor& reduced, const Tensor& position, const Tensor& theta) {
  if (reduced.rank() != 3 || reduced.dim(0) != 8)
    throw std::invalid_argument("mask_forward: reduced feature must be [8 x H x W]");
  if (position.rank() != 3 || position.dim(0) != 2 || position.dim(1) != reduced.dim(1) ||
      position.dim(2) != reduced.dim(2))
    throw std::invalid_argument("mask_forward: position map must be [2 x H x W]");
  MaskFilters f = unpack_filters(theta);
  Tensor x = concat({reduced, position}, 0);  // [10 x H x W]
  x = relu(bias_add(conv2d(x, f.w1, 1, 0), f.b1));
  x = relu(bias_add(conv2d(x, f.w2, 1, 0), f.b2));
  x = bias_add(conv2d(x, f.w3, 1, 0), f.b3);
  return reshape(x, {reduced.dim(1), reduced.dim(2)});
}

FilterMap warp_filters(const SegParams& p, const Tensor& feat_k, const Tensor& feat_t,
                       const FilterMap& theta_k) {
  if (feat_k.shape() != feat_t.shape())
    throw std::invalid_argument("warp_filters: frame features must share a shape");
  if (theta_k.params.rank() != 3 || theta_k.params.dim(0) != kFilterChannels ||
      theta_k.params.dim(1) != feat_k.dim(1) || theta_k.params.dim(2) != feat_k.dim(2))
    throw std::invalid_argument("warp_filters: filter map does not match the feature grid");
  Tensor diff = sub(feat_t, feat_k);
  Tensor hidden = relu(bias_add(conv2d(diff, p.off_k1, 1, 1), p.off_b1));
  Tensor offsets = bias_add(conv2d(hidden, p.off_k2, 1, 1), p.off_b2);  // [18 x H x W]
  return {deformable_conv_shared(theta_k.params, p.warp_kernel, offsets)};
}

Tensor dice_loss(const Tensor& pred_soft, const Tensor& gt_mask) {
  if (pred_soft.shape() != gt_mask.shape())
    throw std::invalid_argument("dice_loss: prediction and target shapes differ");
  constexpr double eps = 1e-5;
  Tensor inter = sum(mul(pred_soft, gt_mask));
  Tensor denom = add(sum(mul(pred_soft, pred_soft)), sum(mul(gt_mask, gt_mask)));
  Tensor ratio = divide(add_scalar(scale(inter, 2.0), eps), add_scalar(denom, eps));
  return add_scalar(scale(ratio, -1.0), 1.0);
}

}  // namespace vistrack
