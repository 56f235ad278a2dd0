#pragma once

#include <string>
#include <vector>

#include "vistrack/rng.hpp"
#include "vistrack/tensor.hpp"
#include "vistrack/types.hpp"

namespace vistrack {

// Three parallel heads over the aggregated feature map, each 3x3 conv + relu
// followed by a 1x1 projection: class heatmap (sigmoid), box size (w,h in
// feature units) and sub-cell center offset.
struct DetHeadParams {
  struct Head {
    Tensor k1, b1;  // [D x D x 3 x 3], [D]
    Tensor k2, b2;  // [out x D x 1 x 1], [out]
  };
  Head heat, size, offset;
  int num_classes = 0;
};

struct DetMaps {
  Tensor heat;    // [C x H x W], after sigmoid
  Tensor size;    // [2 x H x W]
  Tensor offset;  // [2 x H x W]
};

DetHeadParams make_detect_head(int d, int num_classes, Rng& rng);
void append_detect_params(const std::string& prefix, const DetHeadParams& p,
                          std::vector<NamedTensor>& out);

DetMaps detect_forward(const DetHeadParams& p, const Tensor& f_hat);

// CenterNet-style gaussian target splatting. gaussian_radius picks the largest
// radius keeping a shifted box above the overlap threshold (the three standard
// corner/inscribed/enclosing cases); the splat writes exp(-d^2/(2s^2)) with
// s = (2r+1)/6, merged by max, center cell exactly 1.
double gaussian_radius(double height, double width, double min_overlap = 0.7);
Tensor encode_heat_targets(const InstanceSet& gt, int num_classes, int h, int w);

// Penalty-reduced focal loss over the heatmap (alpha=2, beta=4, predictions
// clamped to [1e-4, 1-1e-4]) plus L1 size/offset terms at ground-truth center
// cells, each normalized by max(instance count, 1). Instances carry boxes in
// feature coordinates; their center cell and sub-cell offsets are derived from
// the box center.
Tensor detect_loss(const DetMaps& maps, const InstanceSet& gt, double lambda_size,
                   double lambda_offset);

// 3x3 local maxima per class (ties count as peaks), sorted by score then
// class/row/col, truncated to top_k, filtered by score >= tau_det. Centers are
// refined by the offset map; boxes are built from the size map and clamped to
// the grid.
InstanceSet decode_detections(const DetMaps& maps, int top_k, double tau_det);

}  // namespace vistrack
