#include "vistrack/detect.hpp"

#include <algorithm>

#include "vistrack/nn.hpp"
#include <cmath>
#include <stdexcept>

namespace vistrack {

namespace {

DetHeadParams::Head make_head(int d, int out, double final_std, double final_bias, Rng& rng) {
  DetHeadParams::Head h;
  h.k1 = he_normal({d, d, 3, 3}, d * 9, rng);
  h.b1 = Tensor({d});
  h.k2 = normal_init({out, d, 1, 1}, final_std, rng);
  h.b2 = Tensor({out}, final_bias);
  return h;
}

Tensor head_forward(const DetHeadParams::Head& h, const Tensor& x) {
  Tensor hidden = relu(bias_add(conv2d(x, h.k1, 1, 1), h.b1));
  return bias_add(conv2d(hidden, h.k2, 1, 0), h.b2);
}

}  // namespace

DetHeadParams make_detect_head(int d, int num_classes, Rng& rng) {
  DetHeadParams p;
  // heat bias starts at sigmoid^-1(0.1) so the background is not swamped by
  // early focal gradients
  p.heat = make_head(d, num_classes, 0.01, -2.19, rng);
  p.size = make_head(d, 2, 0.01, 0.0, rng);
  p.offset = make_head(d, 2, 0.01, 0.0, rng);
  p.num_classes = num_classes;
  return p;
}

void append_detect_params(const std::string& prefix, const DetHeadParams& p,
                          std::vector<NamedTensor>& out) {
  auto one = [&](const char* name, const DetHeadParams::Head& h) {
    const std::string base = prefix + "." + name;
    out.push_back({base + ".k1", h.k1});
    out.push_back({base + ".b1", h.b1});
    out.push_back({base + ".k2", h.k2});
    out.push_back({base + ".b2", h.b2});
  };
  one("heat", p.heat);
  one("size", p.size);
  one("offset", p.offset);
}

DetMaps detect_forward(const DetHeadParams& p, const Tensor& f_hat) {
  DetMaps m;
  m.heat = sigmoid(head_forward(p.heat, f_hat));
  m.size = head_forward(p.size, f_hat);
  m.offset = head_forward(p.offset, f_hat);
  return m;
}

double gaussian_radius(double height, double width, double min_overlap) {
  const double o = min_overlap;
  const double b1 = height + width;
  const double c1 = width * height * (1 - o) / (1 + o);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4 * c1)) / 2;

  const double b2 = 2 * (height + width);
  const double c2 = (1 - o) * width * height;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 16 * c2)) / 2;

  const double a3 = 4 * o;
  const double b3 = -2 * o * (height + width);
  const double c3 = (o - 1) * width * height;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4 * a3 * c3)) / 2;
  return std::min({r1, r2, r3});
}

Tensor encode_heat_targets(const InstanceSet& gt, int num_classes, int h, int w) {
  Tensor target({num_classes, h, w});
  for (const Instance& inst : gt) {
    if (inst.class_id < 0 || inst.class_id >= num_classes)
      throw std::invalid_argument("encode_heat_targets: class " + std::to_string(inst.class_id) +
                                  " outside [0, " + std::to_string(num_classes) + ")");
    const int cx = static_cast<int>(inst.box.cx());
    const int cy = static_cast<int>(inst.box.cy());
    if (cx < 0 || cx >= w || cy < 0 || cy >= h)
      throw std::invalid_argument("encode_heat_targets: center cell (" + std::to_string(cx) +
                                  "," + std::to_string(cy) + ") outside " + std::to_string(w) +
                                  "x" + std::to_string(h) + " grid");
    const int r = std::max(0, static_cast<int>(gaussian_radius(inst.box.height(), inst.box.width())));
    const double sigma = (2.0 * r + 1.0) / 6.0;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        const int x = cx + dx, y = cy + dy;
        if (x < 0 || x >= w || y < 0 || y >= h) continue;
        const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        double& cell = target.at({inst.class_id, y, x});
        cell = std::max(cell, v);
      }
  }
  return target;
}

Tensor detect_loss(const DetMaps& maps, const InstanceSet& gt, double lambda_size,
                   double lambda_offset) {
  const int c = maps.heat.dim(0), h = maps.heat.dim(1), w = maps.heat.dim(2);
  Tensor y;
  {
    NoTape guard;  // targets are constants
    y = encode_heat_targets(gt, c, h, w);
  }
  // focal weights as constant maps: positives are exact-1 target cells, the
  // rest get the (1-y)^4 penalty reduction
  Tensor pos_mask(y.shape()), neg_weight(y.shape());
  for (int i = 0; i < y.numel(); ++i) {
    if (y.data()[i] == 1.0)
      pos_mask.data()[i] = 1.0;
    else
      neg_weight.data()[i] = std::pow(1.0 - y.data()[i], 4.0);
  }
  const double n = std::max<std::size_t>(gt.size(), 1);

  Tensor p = clamp(maps.heat, 1e-4, 1.0 - 1e-4);
  Tensor one_minus = sub(Tensor::scalar(1.0), p);
  Tensor pos = mul(pos_mask, mul(mul(one_minus, one_minus), log(p)));
  Tensor neg = mul(neg_weight, mul(mul(p, p), log(one_minus)));
  Tensor loss = scale(sum(add(pos, neg)), -1.0 / n);

  if (!gt.empty()) {
    std::vector<int> cells;
    std::vector<double> size_targets, offset_targets;
    for (const Instance& inst : gt) {
      const double cx = inst.box.cx(), cy = inst.box.cy();
      const int ix = static_cast<int>(cx), iy = static_cast<int>(cy);
      cells.push_back(iy * w + ix);
      size_targets.push_back(inst.box.width());
      size_targets.push_back(inst.box.height());
      offset_targets.push_back(cx - ix);
      offset_targets.push_back(cy - iy);
    }
    const int m = static_cast<int>(gt.size());
    Tensor size_rows = gather_rows(channels_to_rows(maps.size), cells);
    Tensor offset_rows = gather_rows(channels_to_rows(maps.offset), cells);
    Tensor l_size = scale(sum(abs(sub(size_rows, Tensor::from({m, 2}, size_targets)))), 1.0 / n);
    Tensor l_off =
        scale(sum(abs(sub(offset_rows, Tensor::from({m, 2}, offset_targets)))), 1.0 / n);
    loss = add(loss, add(scale(l_size, lambda_size), scale(l_off, lambda_offset)));
  }
  return loss;
}

InstanceSet decode_detections(const DetMaps& maps, int top_k, double tau_det) {
  NoTape guard;
  const int c = maps.heat.dim(0), h = maps.heat.dim(1), w = maps.heat.dim(2);
  const double* heat = maps.heat.data();

  struct Peak {
    double score;
    int class_id, x, y;
  };
  std::vector<Peak> peaks;
  for (int ci = 0; ci < c; ++ci) {
    const double* plane = heat + ci * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = plane[y * w + x];
        bool is_peak = true;
        for (int dy = -1; dy <= 1 && is_peak; ++dy)
          for (int dx = -1; dx <= 1 && is_peak; ++dx) {
            if (dx == 0 && dy == 0) continue;
            const int nx = x + dx, ny = y + dy;
            if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
            if (plane[ny * w + nx] > v) is_peak = false;
          }
        if (is_peak) peaks.push_back({v, ci, x, y});
      }
  }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  if (static_cast<int>(peaks.size()) > top_k) peaks.resize(top_k);

  InstanceSet result;
  for (const Peak& pk : peaks) {
    if (pk.score < tau_det) continue;
    Instance det;
    det.class_id = pk.class_id;
    det.score = pk.score;
    det.cell_x = pk.x;
    det.cell_y = pk.y;
    const int cell = pk.y * w + pk.x;
    det.cx = std::clamp(pk.x + maps.offset.data()[cell], 0.0, w - 1e-9);
    det.cy = std::clamp(pk.y + maps.offset.data()[h * w + cell], 0.0, h - 1e-9);
    const double bw = std::max(maps.size.data()[cell], 1e-3);
    const double bh = std::max(maps.size.data()[h * w + cell], 1e-3);
    det.box.x1 = std::max(0.0, det.cx - bw / 2);
    det.box.x2 = std::min(double(w), det.cx + bw / 2);
    det.box.y1 = std::max(0.0, det.cy - bh / 2);
    det.box.y2 = std::min(double(h), det.cy + bh / 2);
    result.push_back(det);
  }
  return result;
}

}  // namespace vistrack
