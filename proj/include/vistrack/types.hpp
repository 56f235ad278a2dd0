#pragma once

#include <cstdint>
#include <vector>

namespace vistrack {

// Axis-aligned box, (x1,y1) top-left inclusive, (x2,y2) exclusive. A box
// covering exactly pixel (3,2) is {3,2,4,3}.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

// Row-major binary mask.
struct Mask {
  int height = 0, width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  void set(int y, int x, std::uint8_t v) { data[static_cast<std::size_t>(y) * width + x] = v; }
  int area() const {
    int n = 0;
    for (std::uint8_t v : data) n += v != 0;
    return n;
  }
};

// One detected or annotated instance. Boxes and centers are in whatever
// coordinate frame the producing stage documents (decode and the graph work in
// feature-grid coordinates; dataset annotations are in image pixels).
struct Instance {
  int id = -1;       // identity or track id, -1 when unassigned
  int class_id = 0;
  double score = 1.0;
  Box box;
  double cx = 0, cy = 0;      // refined center
  int cell_x = 0, cell_y = 0; // grid cell the center falls in
};

using InstanceSet = std::vector<Instance>;

}  // namespace vistrack
