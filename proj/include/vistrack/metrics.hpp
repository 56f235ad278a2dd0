#pragma once

#include <map>
#include <string>
#include <vector>

#include "vistrack/types.hpp"

namespace vistrack {

// Run-length coding of a binary mask over its row-major flattening.
// Runs alternate zero-run, one-run, zero-run, ... starting with a zero-run
// that may have length 0.
struct MaskRLE {
  int height = 0;
  int width = 0;
  std::vector<int> runs;
};

MaskRLE rle_encode(const Mask& mask);
Mask rle_decode(const MaskRLE& r);

// Text form "HxW:r0,r1,..." used in annotation and prediction files.
std::string rle_to_string(const MaskRLE& r);
MaskRLE rle_from_string(const std::string& s);

// One instance followed through a video: per-frame masks keyed by frame
// index. Frames without an entry count as empty masks.
struct Track {
  int video_id = 0;
  int track_id = 0;
  int class_id = 0;
  double score = 1.0;
  std::map<int, Mask> frames;
};

// Spatio-temporal overlap: sum of per-frame intersections over sum of
// per-frame unions across [frame_begin, frame_end).
double tube_iou(const Track& pred, const Track& gt, int frame_begin, int frame_end);
// Same, over every frame either track touches.
double tube_iou(const Track& pred, const Track& gt);

struct ClassMetrics {
  int class_id = 0;
  int gt_count = 0;
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
};

struct EvalReport {
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ar1 = 0.0;
  double ar10 = 0.0;
  std::vector<ClassMetrics> per_class;
};

std::vector<double> default_iou_thresholds();  // 0.50, 0.55, ..., 0.95

// Greedy per-class matching at each threshold, 101-point interpolated AP
// averaged over thresholds and over classes present in the ground truth.
EvalReport evaluate(const std::vector<Track>& preds, const std::vector<Track>& gts,
                    const std::vector<double>& thresholds = default_iou_thresholds());

void write_predictions(const std::string& path, const std::vector<Track>& tracks);
std::vector<Track> read_predictions(const std::string& path);

std::string report_to_json(const EvalReport& report);
std::string report_table(const EvalReport& report);

}  // namespace vistrack
