#include "vistrack/model.hpp"

#include <stdexcept>
#include <string>

#include "vistrack/track.hpp"

namespace vistrack {

namespace {

void validate_config(const ModelConfig& cfg) {
  if (cfg.d < 1) throw std::invalid_argument("model: feature width must be positive");
  if (cfg.num_classes < 1) throw std::invalid_argument("model: need at least one class");
  if (cfg.iterations < 1) throw std::invalid_argument("model: need at least one iteration");
  if (cfg.window < 1 || cfg.window % 2 == 0)
    throw std::invalid_argument("model: window must be a positive odd number");
}

Tensor config_tensor(const ModelConfig& cfg) {
  return Tensor::from({4}, {static_cast<double>(cfg.d), static_cast<double>(cfg.num_classes),
                            static_cast<double>(cfg.iterations), static_cast<double>(cfg.window)});
}

}  // namespace

Model make_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  Rng rng(seed);
  Model m;
  m.cfg = cfg;
  m.backbone = make_backbone(cfg.d, rng);
  // The node update is residual and a reference node can receive a hundred
  // messages per round, so the message MLPs start near zero output: the graph
  // begins as a pass-through and message passing grows as it trains.
  m.edge_update = make_mlp(3 * cfg.d, cfg.d, cfg.d, rng, 0.01);
  m.node_update = make_mlp(2 * cfg.d, cfg.d, cfg.d, rng, 0.01);
  m.detect = make_detect_head(cfg.d, cfg.num_classes, rng);
  m.seg = make_seg_params(cfg.d, rng);
  m.edge_classifier = make_edge_classifier(cfg.d, rng);
  return m;
}

std::vector<NamedTensor> model_parameters(const Model& m) {
  std::vector<NamedTensor> out;
  append_backbone_params("backbone", m.backbone, out);
  append_mlp_params("edge_update", m.edge_update, out);
  append_mlp_params("node_update", m.node_update, out);
  append_detect_params("detect", m.detect, out);
  append_seg_params("seg", m.seg, out);
  append_mlp_params("edge_classifier", m.edge_classifier, out);
  return out;
}

void save_model(const Model& m, const std::string& path) {
  std::vector<NamedTensor> params = model_parameters(m);
  params.push_back({"config", config_tensor(m.cfg)});
  save_checkpoint(path, params);
}

Model load_model(const std::string& path, const ModelConfig& cfg) {
  Model m = make_model(cfg, 0);
  std::vector<NamedTensor> params = model_parameters(m);
  params.push_back({"config", config_tensor(cfg)});
  load_checkpoint(path, params);
  const std::vector<double>& got = params.back().tensor.values();
  const ModelConfig file{static_cast<int>(got[0]), static_cast<int>(got[1]),
                         static_cast<int>(got[2]), static_cast<int>(got[3])};
  if (file.d != cfg.d || file.num_classes != cfg.num_classes ||
      file.iterations != cfg.iterations || file.window != cfg.window)
    throw std::runtime_error(
        "load_model: checkpoint was built with d=" + std::to_string(file.d) +
        " classes=" + std::to_string(file.num_classes) + " iterations=" +
        std::to_string(file.iterations) + " window=" + std::to_string(file.window) +
        ", requested d=" + std::to_string(cfg.d) + " classes=" + std::to_string(cfg.num_classes) +
        " iterations=" + std::to_string(cfg.iterations) + " window=" + std::to_string(cfg.window));
  return m;
}

}  // namespace vistrack
