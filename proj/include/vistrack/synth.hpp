#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vistrack/metrics.hpp"
#include "vistrack/tensor.hpp"
#include "vistrack/types.hpp"

namespace vistrack {

class Rng;

// Geometry classes the generator can draw.
enum ShapeClass : int { kDisc = 0, kSquare = 1, kTriangle = 2 };
constexpr int kNumClasses = 3;

struct ShapeSpec {
  int class_id = kDisc;
  double size = 4.0;  // radius / half-side / half-height, >= 1
  double x = 0.0, y = 0.0;
  double vx = 0.0, vy = 0.0;
  std::array<double, 3> color = {1.0, 1.0, 1.0};
  // [start, end) frame intervals where the shape vanishes entirely
  std::vector<std::pair<int, int>> hidden;
};

struct SceneSpec {
  int height = 64;
  int width = 64;
  int frames = 8;
  std::uint64_t seed = 0;
  std::vector<ShapeSpec> shapes;  // draw order = z-order, later on top
};

struct FrameAnnotation {
  int id = 0;
  int class_id = 0;
  Box box;
  Mask mask;
};

struct VideoFrame {
  Tensor image;  // [3 x H x W], intensities in [0, 1]
  std::vector<FrameAnnotation> instances;
};

struct Video {
  int id = 0;
  std::vector<VideoFrame> frames;
};

struct VideoDataset {
  std::vector<Video> videos;
};

// Draws a random scene: 2-4 shapes with random class, size, motion, and
// color, sometimes with a scripted hidden interval that never covers frame 0.
// Sizes are half-extents in pixels, sampled uniformly from [min_size, max_size].
SceneSpec make_scene(std::uint64_t seed, int height = 64, int width = 64, int frames = 8,
                     int min_shapes = 2, int max_shapes = 4, int num_classes = kNumClasses,
                     double min_size = 3.0, double max_size = 6.0);

// Rasterizes the scene: flat-colored shapes over a black background, later
// list entries on top, velocities reflected so every shape stays at least one
// pixel inside the canvas. Annotations carry visible-region masks and their
// tight boxes; fully hidden or fully occluded shapes are not annotated.
Video generate_video(const SceneSpec& spec);

VideoDataset generate_dataset(std::uint64_t seed, int num_videos, int frames = 8, int height = 64,
                              int width = 64, int min_shapes = 2, int max_shapes = 4,
                              int num_classes = kNumClasses, double min_size = 3.0,
                              double max_size = 6.0);

// Layout: dir/video_0000/frame_0000.ppm ... + dir/video_0000/annotations.json
void write_dataset(const VideoDataset& ds, const std::string& dir);
VideoDataset read_dataset(const std::string& dir);

void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// Ground-truth tracks (one per instance identity) for the evaluator.
std::vector<Track> gt_tracks_from_video(const Video& video);
std::vector<Track> gt_tracks_from_dataset(const VideoDataset& ds);

}  // namespace vistrack
