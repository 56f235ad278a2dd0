#pragma once

#include <string>
#include <vector>

#include "vistrack/rng.hpp"
#include "vistrack/tensor.hpp"
#include "vistrack/types.hpp"

namespace vistrack {

// ---- initialization ----

Tensor he_normal(Shape shape, int fan_in, Rng& rng);
Tensor normal_init(Shape shape, double stddev, Rng& rng);

// ---- two-layer MLP, relu between the affine layers ----

struct MlpParams {
  Tensor w1, b1;  // [in x hidden], [hidden]
  Tensor w2, b2;  // [hidden x out], [out]
};

// final_std < 0 uses He initialization for the output layer too; a small
// positive value starts the MLP near zero output (used where the surrounding
// computation should begin close to an identity map).
MlpParams make_mlp(int in, int hidden, int out, Rng& rng, double final_std = -1.0);

Tensor mlp_forward(const MlpParams& p, const Tensor& x);  // [in] -> [out]
Tensor mlp_rows(const MlpParams& p, const Tensor& x);     // [n x in] -> [n x out]

void append_mlp_params(const std::string& prefix, const MlpParams& p,
                       std::vector<NamedTensor>& out);

// ---- backbone CNN: four 3x3 conv+relu blocks at strides 1,2,1,2 ----

struct ConvBlock {
  Tensor kernel;  // [c_out x c_in x 3 x 3]
  Tensor bias;    // [c_out]
  int stride = 1;
};

struct BackboneParams {
  std::vector<ConvBlock> blocks;  // channels 3 -> 16 -> 32 -> 64 -> D
};

BackboneParams make_backbone(int d, Rng& rng);
Tensor backbone_forward(const BackboneParams& p, const Tensor& image);  // [3xHxW] -> [DxH/4xW/4]

void append_backbone_params(const std::string& prefix, const BackboneParams& p,
                            std::vector<NamedTensor>& out);

// ---- region feature extraction ----

// out x out bilinear samples at cell centers inside the box (one sample per
// cell). The box is clamped to the feature rectangle, never rejected; sample
// coordinates are border-clamped. Differentiable w.r.t. the feature map.
Tensor roi_align(const Tensor& feature, const Box& box, int out);

// Per-channel spatial average of an roi_align patch -> length-D vector.
Tensor flatten_node_feature(const Tensor& patch);

// ---- deformable 3x3 convolution ----
// offsets: [18 x H x W]; channels (2t, 2t+1) hold the (dx, dy) displacement of
// kernel tap t = ky*3 + kx at each output location. Each tap samples the input
// bilinearly at (x + kx - 1 + dx, y + ky - 1 + dy); samples outside the image
// read zero. Zero offsets reduce to conv2d(stride 1, pad 1).

// Full cross-channel weights [C_out x C_in x 3 x 3].
Tensor deformable_conv(const Tensor& input, const Tensor& weights, const Tensor& offsets);

// Channel-grouped: one shared 3x3 spatial kernel applied to every channel
// independently (C_out == C_in). kernel shape [3 x 3].
Tensor deformable_conv_shared(const Tensor& input, const Tensor& kernel, const Tensor& offsets);

}  // namespace vistrack
