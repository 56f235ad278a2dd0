#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vistrack/detect.hpp"
#include "vistrack/nn.hpp"
#include "vistrack/rng.hpp"
#include "vistrack/segment.hpp"
#include "vistrack/tensor.hpp"

namespace vistrack {

struct ModelConfig {
  int d = 64;            // feature width
  int num_classes = 3;   // detection classes
  int iterations = 3;    // message-passing rounds
  int window = 11;       // edge neighborhood width (odd)
};

// Every learnable tensor of the network: backbone, the two message-passing
// MLPs, detection heads, segmentation plumbing (controller, reducer, warp)
// and the edge classifier.
struct Model {
  ModelConfig cfg;
  BackboneParams backbone;
  MlpParams edge_update;      // [3D] -> D, re-encodes edge features
  MlpParams node_update;      // [2D] -> D, residual node messages
  DetHeadParams detect;
  SegParams seg;
  MlpParams edge_classifier;  // [D] -> 1 (sigmoid applied by the caller)
};

Model make_model(const ModelConfig& cfg, std::uint64_t seed);

// Flat named view of the learnable tensors, stable order and names. The
// tensors share storage with the model, so loading into the list updates it.
std::vector<NamedTensor> model_parameters(const Model& m);

// Checkpoint = model_parameters() plus a "config" tensor recording the four
// ModelConfig values, so a stale config file cannot silently mismatch.
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path, const ModelConfig& cfg);

}  // namespace vistrack
