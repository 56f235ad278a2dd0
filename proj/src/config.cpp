#include "vistrack/config.hpp"

#include <cctype>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace vistrack {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void fail(const std::string& context, const std::string& msg) {
  throw std::runtime_error(context + ": " + msg);
}

long long to_int(const std::string& v, const std::string& key, const std::string& context) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (v.empty() || pos != v.size())
    fail(context, "value '" + v + "' for key '" + key + "' is not an integer");
  return out;
}

double to_double(const std::string& v, const std::string& key, const std::string& context) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (v.empty() || pos != v.size())
    fail(context, "value '" + v + "' for key '" + key + "' is not a number");
  return out;
}

std::uint64_t to_seed(const std::string& v, const std::string& context) {
  if (v.empty() || v[0] == '-') fail(context, "seed must be a non-negative integer, got '" + v + "'");
  std::size_t pos = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) fail(context, "value '" + v + "' for key 'seed' is not an integer");
  return out;
}

std::vector<int> to_milestones(const std::string& v, const std::string& context) {
  std::vector<int> out;
  const std::string body = trim(v);
  if (body.empty()) return out;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const long long x = to_int(trim(item), "milestones", context);
    if (x < 0) fail(context, "milestones entries must be >= 0, got " + trim(item));
    if (!out.empty() && x <= out.back()) fail(context, "milestones must be strictly increasing");
    out.push_back(static_cast<int>(x));
  }
  return out;
}

}  // namespace

std::vector<std::string> config_keys() {
  return {"D",           "L",           "w",         "num_classes", "tau_det",
          "tau_assoc",   "delta_t",     "top_k",     "lambda1",     "lambda2",
          "lambda3",     "lambda_size", "lambda_offset", "lr",      "momentum",
          "milestones",  "steps",       "seed",      "num_videos",  "frames",
          "image_size",  "min_shapes",  "max_shapes", "min_size",   "max_size",
          "dataset_dir", "checkpoint",  "predictions", "report",    "render_dir",
          "log_csv"};
}

void set_config_value(Config& cfg, const std::string& key, const std::string& value,
                      const std::string& context) {
  auto int_at_least = [&](int lo, int& field) {
    const long long x = to_int(value, key, context);
    if (x < lo) fail(context, key + " must be >= " + std::to_string(lo) + ", got " + value);
    field = static_cast<int>(x);
  };
  auto int_in = [&](int lo, int hi, int& field) {
    const long long x = to_int(value, key, context);
    if (x < lo || x > hi)
      fail(context, key + " must be in [" + std::to_string(lo) + ", " + std::to_string(hi) +
                        "], got " + value);
    field = static_cast<int>(x);
  };
  auto double_at_least = [&](double lo, double& field) {
    const double x = to_double(value, key, context);
    if (x < lo) fail(context, key + " must be >= " + std::to_string(lo) + ", got " + value);
    field = x;
  };
  auto unit_interval = [&](double& field) {
    const double x = to_double(value, key, context);
    if (x < 0.0 || x > 1.0) fail(context, key + " must be in [0, 1], got " + value);
    field = x;
  };

  if (key == "D") {
    int_at_least(1, cfg.d);
  } else if (key == "L") {
    int_at_least(1, cfg.iterations);
  } else if (key == "w") {
    int_at_least(1, cfg.window);
    if (cfg.window % 2 == 0) fail(context, "w must be odd, got " + value);
  } else if (key == "num_classes") {
    int_in(1, 3, cfg.num_classes);
  } else if (key == "tau_det") {
    unit_interval(cfg.tau_det);
  } else if (key == "tau_assoc") {
    unit_interval(cfg.tau_assoc);
  } else if (key == "delta_t") {
    int_at_least(0, cfg.delta_t);
  } else if (key == "top_k") {
    int_at_least(1, cfg.top_k);
  } else if (key == "lambda1") {
    double_at_least(0.0, cfg.lambda1);
  } else if (key == "lambda2") {
    double_at_least(0.0, cfg.lambda2);
  } else if (key == "lambda3") {
    double_at_least(0.0, cfg.lambda3);
  } else if (key == "lambda_size") {
    double_at_least(0.0, cfg.lambda_size);
  } else if (key == "lambda_offset") {
    double_at_least(0.0, cfg.lambda_offset);
  } else if (key == "lr") {
    const double x = to_double(value, key, context);
    if (x <= 0.0) fail(context, "lr must be > 0, got " + value);
    cfg.lr = x;
  } else if (key == "momentum") {
    const double x = to_double(value, key, context);
    if (x < 0.0 || x >= 1.0) fail(context, "momentum must be in [0, 1), got " + value);
    cfg.momentum = x;
  } else if (key == "milestones") {
    cfg.milestones = to_milestones(value, context);
  } else if (key == "steps") {
    int_at_least(0, cfg.steps);
  } else if (key == "seed") {
    cfg.seed = to_seed(value, context);
  } else if (key == "num_videos") {
    int_at_least(1, cfg.num_videos);
  } else if (key == "frames") {
    int_at_least(1, cfg.frames);
  } else if (key == "image_size") {
    int_at_least(8, cfg.image_size);
    if (cfg.image_size % 4 != 0) fail(context, "image_size must be a multiple of 4, got " + value);
  } else if (key == "min_shapes") {
    int_at_least(1, cfg.min_shapes);
  } else if (key == "max_shapes") {
    int_at_least(1, cfg.max_shapes);
  } else if (key == "min_size") {
    double_at_least(1.0, cfg.min_size);
  } else if (key == "max_size") {
    double_at_least(1.0, cfg.max_size);
  } else if (key == "dataset_dir") {
    cfg.dataset_dir = value;
  } else if (key == "checkpoint") {
    cfg.checkpoint = value;
  } else if (key == "predictions") {
    cfg.predictions = value;
  } else if (key == "report") {
    cfg.report = value;
  } else if (key == "render_dir") {
    cfg.render_dir = value;
  } else if (key == "log_csv") {
    cfg.log_csv = value;
  } else {
    fail(context, "unknown key '" + key + "'");
  }
}

void validate_config(const Config& cfg) {
  if (cfg.max_shapes < cfg.min_shapes)
    throw std::runtime_error("config: max_shapes (" + std::to_string(cfg.max_shapes) +
                             ") must be >= min_shapes (" + std::to_string(cfg.min_shapes) + ")");
  if (cfg.max_size < cfg.min_size)
    throw std::runtime_error("config: max_size (" + std::to_string(cfg.max_size) +
                             ") must be >= min_size (" + std::to_string(cfg.min_size) + ")");
}

Config parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("parse_config: cannot open " + path);
  Config cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string context = path + ":" + std::to_string(lineno);
    std::string s = line;
    if (const auto hash = s.find('#'); hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(context, "expected 'key = value', got '" + s + "'");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) fail(context, "missing key before '='");
    set_config_value(cfg, key, value, context);
  }
  validate_config(cfg);
  return cfg;
}

std::string config_to_string(const Config& c) {
  std::ostringstream o;
  o << std::setprecision(17);
  o << "D = " << c.d << "\n";
  o << "L = " << c.iterations << "\n";
  o << "w = " << c.window << "\n";
  o << "num_classes = " << c.num_classes << "\n";
  o << "tau_det = " << c.tau_det << "\n";
  o << "tau_assoc = " << c.tau_assoc << "\n";
  o << "delta_t = " << c.delta_t << "\n";
  o << "top_k = " << c.top_k << "\n";
  o << "lambda1 = " << c.lambda1 << "\n";
  o << "lambda2 = " << c.lambda2 << "\n";
  o << "lambda3 = " << c.lambda3 << "\n";
  o << "lambda_size = " << c.lambda_size << "\n";
  o << "lambda_offset = " << c.lambda_offset << "\n";
  o << "lr = " << c.lr << "\n";
  o << "momentum = " << c.momentum << "\n";
  o << "milestones = ";
  for (std::size_t i = 0; i < c.milestones.size(); ++i)
    o << (i ? "," : "") << c.milestones[i];
  o << "\n";
  o << "steps = " << c.steps << "\n";
  o << "seed = " << c.seed << "\n";
  o << "num_videos = " << c.num_videos << "\n";
  o << "frames = " << c.frames << "\n";
  o << "image_size = " << c.image_size << "\n";
  o << "min_shapes = " << c.min_shapes << "\n";
  o << "max_shapes = " << c.max_shapes << "\n";
  o << "min_size = " << c.min_size << "\n";
  o << "max_size = " << c.max_size << "\n";
  o << "dataset_dir = " << c.dataset_dir << "\n";
  o << "checkpoint = " << c.checkpoint << "\n";
  o << "predictions = " << c.predictions << "\n";
  o << "report = " << c.report << "\n";
  o << "render_dir = " << c.render_dir << "\n";
  o << "log_csv = " << c.log_csv << "\n";
  return o.str();
}

}  // namespace vistrack
