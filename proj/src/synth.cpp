#include "vistrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "vistrack/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vistrack {

namespace {

bool shape_covers(const ShapeSpec& s, double cx, double cy, double px, double py) {
  switch (s.class_id) {
    case kDisc:
      return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= s.size * s.size;
    case kSquare:
      return std::max(std::fabs(px - cx), std::fabs(py - cy)) <= s.size;
    case kTriangle:
      // isoceles, apex up: width grows linearly from apex to base
      return py >= cy - s.size && py <= cy + s.size &&
             std::fabs(px - cx) <= (py - (cy - s.size)) / 2.0;
    default:
      throw std::invalid_argument("generate_video: unknown shape class " +
                                  std::to_string(s.class_id));
  }
}

Mask rasterize(const ShapeSpec& s, double cx, double cy, int height, int width) {
  Mask m(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (shape_covers(s, cx, cy, x + 0.5, y + 0.5)) m.set(y, x, 1);
  return m;
}

double reflect(double v, double lo, double hi, double& vel) {
  while (v < lo || v > hi) {
    if (v < lo) {
      v = 2 * lo - v;
      vel = -vel;
    } else {
      v = 2 * hi - v;
      vel = -vel;
    }
  }
  return v;
}

bool hidden_at(const ShapeSpec& s, int frame) {
  for (auto [a, b] : s.hidden)
    if (frame >= a && frame < b) return true;
  return false;
}

Box tight_box(const Mask& m) {
  int x1 = m.width, y1 = m.height, x2 = 0, y2 = 0;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) {
        x1 = std::min(x1, x);
        y1 = std::min(y1, y);
        x2 = std::max(x2, x + 1);
        y2 = std::max(y2, y + 1);
      }
  return {static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2),
          static_cast<double>(y2)};
}

void validate_scene(const SceneSpec& spec) {
  if (spec.height < 8 || spec.width < 8)
    throw std::invalid_argument("generate_video: canvas must be at least 8x8");
  if (spec.frames < 1) throw std::invalid_argument("generate_video: need at least one frame");
  for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
    const ShapeSpec& s = spec.shapes[i];
    if (s.size < 1.0)
      throw std::invalid_argument("generate_video: shape " + std::to_string(i) +
                                  " has zero area (size < 1)");
    if (s.size + 1 > spec.width - s.size - 1 || s.size + 1 > spec.height - s.size - 1)
      throw std::invalid_argument("generate_video: shape " + std::to_string(i) +
                                  " does not fit the canvas");
    if (s.x < s.size + 1 || s.x > spec.width - s.size - 1 || s.y < s.size + 1 ||
        s.y > spec.height - s.size - 1)
      throw std::invalid_argument("generate_video: shape " + std::to_string(i) +
                                  " starts outside its legal band");
    for (auto [a, b] : s.hidden)
      if (a < 0 || b <= a || b > spec.frames)
        throw std::invalid_argument("generate_video: shape " + std::to_string(i) +
                                    " has an invalid hidden interval");
  }
}

}  // namespace

SceneSpec make_scene(std::uint64_t seed, int height, int width, int frames, int min_shapes,
                     int max_shapes, int num_classes, double min_size, double max_size) {
  if (min_shapes < 1 || max_shapes < min_shapes)
    throw std::invalid_argument("make_scene: bad shape count range");
  if (num_classes < 1 || num_classes > kNumClasses)
    throw std::invalid_argument("make_scene: class count must be in [1, 3]");
  if (min_size < 1.0 || max_size < min_size)
    throw std::invalid_argument("make_scene: bad size range");
  Rng rng(seed);
  SceneSpec spec;
  spec.height = height;
  spec.width = width;
  spec.frames = frames;
  spec.seed = seed;
  const int count = rng.uniform_int(min_shapes, max_shapes);
  for (int i = 0; i < count; ++i) {
    ShapeSpec s;
    s.class_id = rng.uniform_int(0, num_classes - 1);
    s.size = rng.uniform(min_size, max_size);
    s.x = rng.uniform(s.size + 1, width - s.size - 1);
    s.y = rng.uniform(s.size + 1, height - s.size - 1);
    s.vx = rng.uniform(-2.0, 2.0);
    s.vy = rng.uniform(-2.0, 2.0);
    // colors quantized to byte levels so frame files round-trip exactly
    for (double& c : s.color) c = rng.uniform_int(77, 255) / 255.0;
    if (frames >= 6 && rng.uniform() < 0.3) {
      const int gap = rng.uniform_int(2, std::min(4, frames - 2));
      const int start = rng.uniform_int(1, frames - gap);
      s.hidden.push_back({start, start + gap});
    }
    spec.shapes.push_back(s);
  }
  return spec;
}

Video generate_video(const SceneSpec& spec) {
  validate_scene(spec);
  const int n = static_cast<int>(spec.shapes.size());
  std::vector<double> xs(n), ys(n), vxs(n), vys(n);
  for (int i = 0; i < n; ++i) {
    xs[i] = spec.shapes[i].x;
    ys[i] = spec.shapes[i].y;
    vxs[i] = spec.shapes[i].vx;
    vys[i] = spec.shapes[i].vy;
  }

  Video video;
  for (int f = 0; f < spec.frames; ++f) {
    if (f > 0) {
      for (int i = 0; i < n; ++i) {
        const double s = spec.shapes[i].size;
        xs[i] = reflect(xs[i] + vxs[i], s + 1, spec.width - s - 1, vxs[i]);
        ys[i] = reflect(ys[i] + vys[i], s + 1, spec.height - s - 1, vys[i]);
      }
    }

    std::vector<int> drawn;  // z-order, bottom first
    std::vector<Mask> full;
    for (int i = 0; i < n; ++i) {
      if (hidden_at(spec.shapes[i], f)) continue;
      drawn.push_back(i);
      full.push_back(rasterize(spec.shapes[i], xs[i], ys[i], spec.height, spec.width));
    }

    VideoFrame frame;
    frame.image = Tensor({3, spec.height, spec.width});
    for (std::size_t z = 0; z < drawn.size(); ++z) {
      const ShapeSpec& s = spec.shapes[drawn[z]];
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x)
          if (full[z].at(y, x))
            for (int c = 0; c < 3; ++c)
              frame.image.at({c, y, x}) = s.color[static_cast<std::size_t>(c)];
    }

    for (std::size_t z = 0; z < drawn.size(); ++z) {
      Mask visible = full[z];
      for (std::size_t above = z + 1; above < drawn.size(); ++above)
        for (std::size_t p = 0; p < visible.data.size(); ++p)
          if (full[above].data[p]) visible.data[p] = 0;
      if (visible.area() == 0) continue;  // fully occluded this frame
      FrameAnnotation ann;
      ann.id = drawn[z];
      ann.class_id = spec.shapes[drawn[z]].class_id;
      ann.mask = visible;
      ann.box = tight_box(visible);
      frame.instances.push_back(std::move(ann));
    }
    video.frames.push_back(std::move(frame));
  }
  return video;
}

VideoDataset generate_dataset(std::uint64_t seed, int num_videos, int frames, int height,
                              int width, int min_shapes, int max_shapes, int num_classes,
                              double min_size, double max_size) {
  if (num_videos < 1) throw std::invalid_argument("generate_dataset: need at least one video");
  VideoDataset ds;
  for (int v = 0; v < num_videos; ++v) {
    SceneSpec spec = make_scene(seed * 1000003ULL + static_cast<std::uint64_t>(v), height, width,
                                frames, min_shapes, max_shapes, num_classes, min_size, max_size);
    Video video = generate_video(spec);
    video.id = v;
    ds.videos.push_back(std::move(video));
  }
  return ds;
}

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("write_ppm: image must be [3 x H x W]");
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> bytes;
  bytes.reserve(static_cast<std::size_t>(3) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.data()[(c * h + y) * w + x], 0.0, 1.0);
        bytes.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
}

namespace {

[[noreturn]] void ppm_error(const std::string& path, std::size_t offset, const std::string& what) {
  throw std::runtime_error("read_ppm: " + path + " at offset " + std::to_string(offset) + ": " +
                           what);
}

// whitespace and '#'-comment skipper for the PPM header
void skip_separators(const std::string& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
      ++pos;
    } else if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
}

int parse_int(const std::string& path, const std::string& buf, std::size_t& pos) {
  skip_separators(buf, pos);
  std::size_t start = pos;
  while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) ++pos;
  if (pos == start) ppm_error(path, start, "expected an integer");
  return std::stoi(buf.substr(start, pos - start));
}

}  // namespace

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();

  std::size_t pos = 0;
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6') ppm_error(path, 0, "missing P6 magic");
  pos = 2;
  const int w = parse_int(path, buf, pos);
  const int h = parse_int(path, buf, pos);
  const int maxval = parse_int(path, buf, pos);
  if (w < 1 || h < 1) ppm_error(path, pos, "non-positive dimensions");
  if (maxval != 255) ppm_error(path, pos, "unsupported max value " + std::to_string(maxval));
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
    ppm_error(path, pos, "expected whitespace before pixel data");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(3) * w * h;
  if (buf.size() - pos < need)
    ppm_error(path, buf.size(), "truncated pixel data, need " + std::to_string(need) + " bytes");

  Tensor image({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        image.data()[(c * h + y) * w + x] =
            static_cast<unsigned char>(buf[pos++]) / 255.0;
  return image;
}

namespace {

std::string video_dir_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "video_%04d", id);
  return buf;
}

std::string frame_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d.ppm", index);
  return buf;
}

}  // namespace

void write_dataset(const VideoDataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  for (const Video& video : ds.videos) {
    const fs::path vdir = fs::path(dir) / video_dir_name(video.id);
    fs::create_directories(vdir);
    json frames = json::array();
    for (std::size_t f = 0; f < video.frames.size(); ++f) {
      const VideoFrame& frame = video.frames[f];
      write_ppm((vdir / frame_file_name(static_cast<int>(f))).string(), frame.image);
      json instances = json::array();
      for (const FrameAnnotation& ann : frame.instances)
        instances.push_back({{"id", ann.id},
                             {"class", ann.class_id},
                             {"box", {ann.box.x1, ann.box.y1, ann.box.x2, ann.box.y2}},
                             {"rle", rle_to_string(rle_encode(ann.mask))}});
      frames.push_back({{"frame_index", static_cast<int>(f)}, {"instances", instances}});
    }
    json doc = {{"video_id", video.id}, {"frames", frames}};
    std::ofstream out(vdir / "annotations.json");
    if (!out) throw std::runtime_error("write_dataset: cannot write annotations in " +
                                       vdir.string());
    out << doc.dump(2) << '\n';
  }
}

VideoDataset read_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("read_dataset: no such directory " + dir);
  std::vector<fs::path> vdirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && entry.path().filename().string().rfind("video_", 0) == 0)
      vdirs.push_back(entry.path());
  std::sort(vdirs.begin(), vdirs.end());
  if (vdirs.empty()) throw std::runtime_error("read_dataset: no video_* directories in " + dir);

  VideoDataset ds;
  for (const fs::path& vdir : vdirs) {
    const fs::path ann_path = vdir / "annotations.json";
    std::ifstream in(ann_path);
    if (!in)
      throw std::runtime_error("read_dataset: missing annotations for " + vdir.string());
    json doc;
    try {
      in >> doc;
    } catch (const json::parse_error& e) {
      throw std::runtime_error("read_dataset: " + ann_path.string() + ": " + e.what());
    }
    Video video;
    video.id = doc.at("video_id").get<int>();
    for (const json& fr : doc.at("frames")) {
      const int index = fr.at("frame_index").get<int>();
      VideoFrame frame;
      frame.image = read_ppm((vdir / frame_file_name(index)).string());
      for (const json& item : fr.at("instances")) {
        FrameAnnotation ann;
        ann.id = item.at("id").get<int>();
        ann.class_id = item.at("class").get<int>();
        const auto& b = item.at("box");
        ann.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                   b.at(3).get<double>()};
        ann.mask = rle_decode(rle_from_string(item.at("rle").get<std::string>()));
        frame.instances.push_back(std::move(ann));
      }
      video.frames.push_back(std::move(frame));
    }
    ds.videos.push_back(std::move(video));
  }
  return ds;
}

std::vector<Track> gt_tracks_from_video(const Video& video) {
  std::map<int, Track> by_id;
  for (std::size_t f = 0; f < video.frames.size(); ++f)
    for (const FrameAnnotation& ann : video.frames[f].instances) {
      Track& t = by_id[ann.id];
      t.video_id = video.id;
      t.track_id = ann.id;
      t.class_id = ann.class_id;
      t.frames[static_cast<int>(f)] = ann.mask;
    }
  std::vector<Track> tracks;
  for (auto& [id, t] : by_id) tracks.push_back(std::move(t));
  return tracks;
}

std::vector<Track> gt_tracks_from_dataset(const VideoDataset& ds) {
  std::vector<Track> all;
  for (const Video& v : ds.videos) {
    std::vector<Track> tracks = gt_tracks_from_video(v);
    all.insert(all.end(), std::make_move_iterator(tracks.begin()),
               std::make_move_iterator(tracks.end()));
  }
  return all;
}

}  // namespace vistrack
