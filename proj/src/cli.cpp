#include "vistrack/cli.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "vistrack/config.hpp"
#include "vistrack/metrics.hpp"
#include "vistrack/pipeline.hpp"

namespace vistrack {

namespace {

struct ParsedArgs {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
};

ParsedArgs parse_flags(const std::vector<std::string>& args, std::size_t start) {
  ParsedArgs pa;
  for (std::size_t i = start; i < args.size(); i += 2) {
    const std::string& flag = args[i];
    if (flag.rfind("--", 0) != 0)
      throw std::runtime_error("unexpected argument '" + flag + "', flags look like --key value");
    if (i + 1 >= args.size()) throw std::runtime_error("missing value after '" + flag + "'");
    const std::string key = flag.substr(2);
    if (key == "config")
      pa.config_path = args[i + 1];
    else
      pa.overrides.emplace_back(key, args[i + 1]);
  }
  return pa;
}

Config build_config(const ParsedArgs& pa) {
  Config cfg = pa.config_path.empty() ? Config{} : parse_config(pa.config_path);
  for (const auto& [key, value] : pa.overrides) set_config_value(cfg, key, value, "--" + key);
  validate_config(cfg);
  return cfg;
}

ModelConfig model_config(const Config& c) {
  return {c.d, c.num_classes, c.iterations, c.window};
}

InferConfig infer_config(const Config& c) {
  return {c.tau_det, c.tau_assoc, c.delta_t, c.top_k};
}

void require_path(const std::string& value, const std::string& key) {
  if (value.empty()) throw std::runtime_error(key + " is empty; set it to a path");
}

int cmd_gen_data(const Config& cfg, std::ostream& out) {
  require_path(cfg.dataset_dir, "dataset_dir");
  VideoDataset ds = generate_dataset(cfg.seed, cfg.num_videos, cfg.frames, cfg.image_size,
                                     cfg.image_size, cfg.min_shapes, cfg.max_shapes,
                                     cfg.num_classes, cfg.min_size, cfg.max_size);
  write_dataset(ds, cfg.dataset_dir);
  int frames = 0;
  for (const Video& v : ds.videos) frames += static_cast<int>(v.frames.size());
  out << "wrote " << ds.videos.size() << " videos (" << frames << " frames) to "
      << cfg.dataset_dir << "\n";
  return 0;
}

int cmd_train(const Config& cfg, std::ostream& out) {
  require_path(cfg.checkpoint, "checkpoint");
  VideoDataset ds = read_dataset(cfg.dataset_dir);
  Model model = make_model(model_config(cfg), cfg.seed);

  TrainConfig tc;
  tc.steps = cfg.steps;
  tc.lr = cfg.lr;
  tc.momentum = cfg.momentum;
  tc.milestones = cfg.milestones;
  tc.weights = {cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.lambda_size, cfg.lambda_offset};
  tc.seed = cfg.seed;

  std::ofstream csv;
  std::ostream* csv_out = nullptr;
  if (!cfg.log_csv.empty()) {
    csv.open(cfg.log_csv);
    if (!csv) throw std::runtime_error("train: cannot open log file " + cfg.log_csv);
    csv_out = &csv;
  }

  std::vector<LossBreakdown> history = train_loop(model, ds, tc, csv_out);
  save_model(model, cfg.checkpoint);
  if (!history.empty())
    out << "final step loss: total " << history.back().total << " (det " << history.back().det
        << ", mask " << history.back().mask << ", edge " << history.back().edge << ")\n";
  out << "wrote checkpoint to " << cfg.checkpoint << "\n";
  return 0;
}

int cmd_infer(const Config& cfg, std::ostream& out) {
  require_path(cfg.predictions, "predictions");
  Model model = load_model(cfg.checkpoint, model_config(cfg));
  VideoDataset ds = read_dataset(cfg.dataset_dir);
  std::vector<Track> all;
  for (const Video& v : ds.videos) {
    std::vector<Track> tracks = infer_video(model, v, infer_config(cfg), {});
    all.insert(all.end(), std::make_move_iterator(tracks.begin()),
               std::make_move_iterator(tracks.end()));
  }
  write_predictions(cfg.predictions, all);
  out << "wrote " << all.size() << " tracks over " << ds.videos.size() << " videos to "
      << cfg.predictions << "\n";
  return 0;
}

int cmd_eval(const Config& cfg, std::ostream& out) {
  require_path(cfg.report, "report");
  VideoDataset ds = read_dataset(cfg.dataset_dir);
  std::vector<Track> preds = read_predictions(cfg.predictions);
  EvalReport rep = evaluate(preds, gt_tracks_from_dataset(ds));
  std::ofstream rf(cfg.report);
  if (!rf) throw std::runtime_error("eval: cannot open report file " + cfg.report);
  rf << report_to_json(rep) << "\n";
  out << report_table(rep);
  out << "wrote report to " << cfg.report << "\n";
  return 0;
}

// A fixed bright color per identity: the id is scrambled onto the hue wheel,
// so nearby ids render far apart and reruns color identically.
std::array<double, 3> identity_color(int id) {
  const std::uint64_t h =
      (static_cast<std::uint64_t>(static_cast<std::uint32_t>(id)) + 1) * 0x9E3779B97F4A7C15ULL;
  const double hue = static_cast<double>(h >> 40) / static_cast<double>(1 << 24) * 6.0;
  const int sector = static_cast<int>(hue);
  const double f = hue - sector;
  switch (sector) {
    case 0: return {1.0, f, 0.0};
    case 1: return {1.0 - f, 1.0, 0.0};
    case 2: return {0.0, 1.0, f};
    case 3: return {0.0, 1.0 - f, 1.0};
    case 4: return {f, 0.0, 1.0};
    default: return {1.0, 0.0, 1.0 - f};
  }
}

int cmd_render(const Config& cfg, std::ostream& out) {
  require_path(cfg.render_dir, "render_dir");
  VideoDataset ds = read_dataset(cfg.dataset_dir);
  std::vector<Track> preds = read_predictions(cfg.predictions);

  std::map<int, std::vector<const Track*>> by_video;
  for (const Track& tr : preds) by_video[tr.video_id].push_back(&tr);

  int written = 0;
  for (const Video& v : ds.videos) {
    char dir_name[32];
    std::snprintf(dir_name, sizeof dir_name, "video_%04d", v.id);
    const std::filesystem::path vdir = std::filesystem::path(cfg.render_dir) / dir_name;
    std::filesystem::create_directories(vdir);
    const std::vector<const Track*>* tracks = nullptr;
    if (auto it = by_video.find(v.id); it != by_video.end()) tracks = &it->second;

    for (int f = 0; f < static_cast<int>(v.frames.size()); ++f) {
      Tensor img = Tensor::from(v.frames[f].image.shape(), v.frames[f].image.values());
      const int h = img.dim(1), w = img.dim(2);
      if (tracks)
        for (const Track* tr : *tracks) {
          auto mit = tr->frames.find(f);
          if (mit == tr->frames.end()) continue;
          const Mask& mask = mit->second;
          if (mask.height != h || mask.width != w)
            throw std::runtime_error("render: track " + std::to_string(tr->track_id) + " mask " +
                                     std::to_string(mask.height) + "x" +
                                     std::to_string(mask.width) + " does not match frame " +
                                     std::to_string(h) + "x" + std::to_string(w));
          const std::array<double, 3> color = identity_color(tr->track_id);
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              if (!mask.at(y, x)) continue;
              for (int c = 0; c < 3; ++c)
                img.at({c, y, x}) = 0.5 * img.at({c, y, x}) + 0.5 * color[c];
            }
        }
      char frame_name[32];
      std::snprintf(frame_name, sizeof frame_name, "frame_%04d.ppm", f);
      write_ppm((vdir / frame_name).string(), img);
      ++written;
    }
  }
  out << "wrote " << written << " overlay frames to " << cfg.render_dir << "\n";
  return 0;
}

}  // namespace

std::string cli_usage() {
  std::ostringstream o;
  o << "usage: vistrack <subcommand> [--config FILE] [--key VALUE]...\n\n";
  o << "subcommands:\n";
  o << "  gen-data   write a synthetic dataset to dataset_dir\n";
  o << "  train      train on dataset_dir, write checkpoint (and log_csv if set)\n";
  o << "  infer      track every video in dataset_dir with checkpoint, write predictions\n";
  o << "  eval       score predictions against dataset_dir ground truth, write report\n";
  o << "  render     composite predicted masks over frames into render_dir\n\n";
  o << "keys:";
  for (const std::string& k : config_keys()) o << " " << k;
  o << "\n";
  return o.str();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << cli_usage();
    return 2;
  }
  const std::string& cmd = args[0];
  const bool known = cmd == "gen-data" || cmd == "train" || cmd == "infer" || cmd == "eval" ||
                     cmd == "render";
  if (!known) {
    err << "unknown subcommand '" << cmd << "'\n\n" << cli_usage();
    return 2;
  }
  try {
    const Config cfg = build_config(parse_flags(args, 1));
    if (cmd == "gen-data") return cmd_gen_data(cfg, out);
    if (cmd == "train") return cmd_train(cfg, out);
    if (cmd == "infer") return cmd_infer(cfg, out);
    if (cmd == "eval") return cmd_eval(cfg, out);
    return cmd_render(cfg, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace vistrack
