#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "vistrack/metrics.hpp"
#include "vistrack/model.hpp"
#include "vistrack/synth.hpp"
#include "vistrack/track.hpp"

namespace vistrack {

// Multipliers of the three loss terms plus the two detection sub-terms.
struct LossWeights {
  double lambda1 = 1.0;       // detection
  double lambda2 = 1.0;       // masks
  double lambda3 = 1.0;       // edge classification
  double lambda_size = 0.1;   // L1 box size inside the detection loss
  double lambda_offset = 1.0; // L1 center offset inside the detection loss
};

// The backbone downsampling factor: image-space boxes and masks map to the
// feature grid by dividing through this.
constexpr int kFeatureStride = 4;

// Image-space ground truth converted to feature-grid instances.
InstanceSet annotations_to_instances(const std::vector<FrameAnnotation>& anns,
                                     int stride = kFeatureStride);

// Block-mean downsampling with a 0.5 vote threshold; dimensions must divide.
Mask downsample_mask(const Mask& m, int factor);
// Nearest-neighbor upsampling (each cell becomes a factor x factor block).
Mask upsample_mask(const Mask& m, int factor);
// {0,1} copy of a mask for loss targets.
Tensor mask_to_tensor(const Mask& m);

struct FramePair {
  int video_index = 0;
  int frame_k = 0;
  int frame_t = 0;
};

// Uniform choice among videos with >= 2 frames, then uniform among ordered
// frame pairs (k, t) with 1 <= t - k <= 4.
FramePair sample_training_pair(const VideoDataset& ds, Rng& rng);

struct LossBreakdown {
  double det = 0, mask = 0, edge = 0, total = 0;
  double grad_norm = 0;  // global gradient norm before clipping
};

// Single-sample momentum SGD sees the occasional near-clamp log-loss gradient
// (up to 1/clamp per cell); without a ceiling one such spike snowballs the
// whole parameter set within a few steps.
constexpr double kGradClipNorm = 10.0;

// One optimization step on a frame pair: forward through backbone, graph,
// detection, segmentation (target masks through both the direct and the
// warped filter paths, reference masks through the direct path), and the
// edge classifier; then backward, global gradient clipping, and SGD update.
// Throws if any component loss is non-finite.
LossBreakdown train_step(Model& m, const Video& video, int frame_k, int frame_t,
                         const LossWeights& weights, SgdOptimizer& opt,
                         double grad_clip = kGradClipNorm);

struct TrainConfig {
  int steps = 300;
  double lr = 1e-2;
  double momentum = 0.9;
  std::vector<int> milestones;  // steps whose start multiplies lr by 0.1
  LossWeights weights;
  std::uint64_t seed = 0;
  double grad_clip = kGradClipNorm;
};

// Seeded single-threaded loop; optionally writes a CSV log with header
// "step,L_det,L_mask,L_edge,L_total". Returns the per-step breakdowns.
std::vector<LossBreakdown> train_loop(Model& m, const VideoDataset& ds, const TrainConfig& cfg,
                                      std::ostream* csv = nullptr);

// Occlusion memory: identities that went unmatched live here until they match
// again or expire.
struct MemoryEntry {
  int instance_id = -1;
  Tensor feature;   // [D] node feature from the last matched frame
  Tensor filters;   // [169] mask filters from the last matched frame
  int class_id = 0;
  Box last_box;     // feature-grid coordinates
  int last_seen = 0;
};

struct TrackMemory {
  std::vector<MemoryEntry> entries;
};

// Inserts the given entries stamped with frame_index (replacing any entry of
// the same identity), then drops every entry with frame_index - last_seen
// greater than delta_t.
TrackMemory memory_update(TrackMemory mem, const std::vector<MemoryEntry>& unmatched,
                          int frame_index, int delta_t);

struct InferConfig {
  double tau_det = 0.3;
  double tau_assoc = 0.5;
  int delta_t = 7;
  int top_k = 32;
};

// Test seams: replace the decoded detections of a frame, or rewrite an edge
// score before thresholding. Either may be empty.
struct InferHooks {
  std::function<InstanceSet(int frame_index, const InstanceSet& decoded)> detections;
  std::function<double(int frame_index, int k_instance_id, int det_index, double score)>
      edge_score;
};

// Online tracking over one video. Frame 0 runs plain detection/segmentation;
// every later frame builds the graph against the previous frame's features
// plus memory entries, associates detections to identities, and decodes one
// mask per active track. Returns finished tracks keyed by identity.
std::vector<Track> infer_video(const Model& m, const Video& video, const InferConfig& cfg,
                               const InferHooks& hooks = {});

}  // namespace vistrack
