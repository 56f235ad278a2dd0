#pragma once

#include "vistrack/tensor.hpp"
#include "vistrack/types.hpp"

namespace vistrack {

class Rng;

// Per-location dynamic filter bank: the 169 values at each (x,y) parameterize
// a three-layer 1x1-conv mask head for the instance centered there.
struct FilterMap {
  Tensor params;  // [169 x H x W]
};

// The 169-value vector split into the head's layers.
// Layout: w1 [8x10] | b1 [8] | w2 [8x8] | b2 [8] | w3 [1x8] | b3 [1].
struct MaskFilters {
  Tensor w1, b1;  // 10 -> 8
  Tensor w2, b2;  // 8 -> 8
  Tensor w3, b3;  // 8 -> 1
};

constexpr int kFilterChannels = 169;

struct SegParams {
  // controller: 3x3 conv (D -> D) + relu, then 1x1 conv (D -> 169)
  Tensor ctrl_k1, ctrl_b1, ctrl_k2, ctrl_b2;
  // 1x1 conv (D -> 8) producing the reduced mask feature
  Tensor reduce_k, reduce_b;
  // offset head on the frame difference: 3x3 (D -> hidden) + relu, 3x3 (hidden -> 18)
  Tensor off_k1, off_b1, off_k2, off_b2;
  // shared 3x3 kernel of the filter-warping deformable conv
  Tensor warp_kernel;
};

SegParams make_seg_params(int d, Rng& rng);
void append_seg_params(const std::string& prefix, const SegParams& p,
                       std::vector<NamedTensor>& out);

// Dynamic-filter controller: emits the per-location filter bank from the
// aggregated feature map [D x H x W].
FilterMap controller_forward(const SegParams& p, const Tensor& feature);

// 1x1 projection of the aggregated feature down to the 8 mask-head channels.
Tensor reduce_channels(const SegParams& p, const Tensor& feature);

// Two-channel map of (column - x)/S, (row - y)/S with S = max(H, W).
Tensor position_map(double x, double y, int height, int width);

// Differentiable extraction of the 169-vector at grid cell (x, y).
Tensor filters_at(const FilterMap& map, int x, int y);

MaskFilters unpack_filters(const Tensor& theta);  // [169] -> layers
Tensor pack_filters(const MaskFilters& f);        // layers -> [169]

// Runs the dynamic head: concat(reduced [8xHxW], position [2xHxW]) through
// three 1x1 convs (10->8->8->1, relu between) parameterized by theta.
// Returns raw logits [H x W]; sigmoid gives the soft mask.
Tensor mask_forward(const Tensor& reduced, const Tensor& position, const Tensor& theta);

// Warps the reference frame's filter bank toward the target frame: the
// feature difference drives an offset field consumed by a deformable conv
// over every filter channel.
FilterMap warp_filters(const SegParams& p, const Tensor& feat_k, const Tensor& feat_t,
                       const FilterMap& theta_k);

// 1 - (2*sum(p*g) + eps) / (sum(p^2) + sum(g^2) + eps), eps = 1e-5.
Tensor dice_loss(const Tensor& pred_soft, const Tensor& gt_mask);

}  // namespace vistrack
