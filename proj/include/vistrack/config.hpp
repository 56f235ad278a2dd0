#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vistrack {

// Every tunable of the toolchain with its default. Model hyperparameters use
// the short config keys "D", "L" and "w"; everything else is keyed by its
// field name.
struct Config {
  // model
  int d = 64;
  int iterations = 3;   // key "L": message-passing rounds
  int window = 11;      // key "w": edge neighborhood width, odd
  int num_classes = 3;
  // inference
  double tau_det = 0.3;
  double tau_assoc = 0.5;
  int delta_t = 7;
  int top_k = 32;
  // loss weights
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double lambda_size = 0.1;
  double lambda_offset = 1.0;
  // optimization
  double lr = 1e-2;
  double momentum = 0.9;
  std::vector<int> milestones;  // steps whose start multiplies lr by 0.1
  int steps = 300;
  std::uint64_t seed = 0;
  // data generation
  int num_videos = 8;
  int frames = 8;
  int image_size = 64;
  int min_shapes = 2;
  int max_shapes = 4;
  double min_size = 3.0;
  double max_size = 6.0;
  // artifact paths
  std::string dataset_dir = "data";
  std::string checkpoint = "model.ckpt";
  std::string predictions = "predictions.json";
  std::string report = "report.json";
  std::string render_dir = "render";
  std::string log_csv;  // empty: no training log
};

// Recognized keys in declaration order, for usage text and dumps.
std::vector<std::string> config_keys();

// Shared by the file parser and command-line overrides: validates and applies
// one key. Unknown keys, unparsable values and out-of-range values throw with
// `context` (e.g. "train.cfg:3" or "--steps") prefixed to the message.
void set_config_value(Config& cfg, const std::string& key, const std::string& value,
                      const std::string& context);

// Cross-field checks that no single key can decide (shape count ordering).
void validate_config(const Config& cfg);

// Defaults overlaid with a line-oriented `key = value` file; '#' starts a
// comment, blank lines are skipped. Validates the result.
Config parse_config(const std::string& path);

// `key = value` dump of every field, parseable by parse_config.
std::string config_to_string(const Config& cfg);

}  // namespace vistrack
