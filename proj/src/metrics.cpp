#include "vistrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace vistrack {

using nlohmann::json;

MaskRLE rle_encode(const Mask& mask) {
  MaskRLE r;
  r.height = mask.height;
  r.width = mask.width;
  int current = 0;  // the value the open run counts
  int run = 0;
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    const int v = mask.data[i] ? 1 : 0;
    if (v == current) {
      ++run;
    } else {
      r.runs.push_back(run);
      current = v;
      run = 1;
    }
  }
  r.runs.push_back(run);
  return r;
}

Mask rle_decode(const MaskRLE& r) {
  if (r.height < 0 || r.width < 0) throw std::invalid_argument("rle_decode: negative dimensions");
  long total = 0;
  for (int run : r.runs) {
    if (run < 0) throw std::invalid_argument("rle_decode: negative run length");
    total += run;
  }
  if (total != static_cast<long>(r.height) * r.width)
    throw std::invalid_argument("rle_decode: runs sum to " + std::to_string(total) +
                                " but the mask has " + std::to_string((long)r.height * r.width) +
                                " pixels");
  Mask mask(r.height, r.width);
  std::size_t pos = 0;
  int value = 0;
  for (int run : r.runs) {
    for (int i = 0; i < run; ++i) mask.data[pos++] = static_cast<std::uint8_t>(value);
    value = 1 - value;
  }
  return mask;
}

std::string rle_to_string(const MaskRLE& r) {
  std::ostringstream out;
  out << r.height << 'x' << r.width << ':';
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    if (i) out << ',';
    out << r.runs[i];
  }
  return out.str();
}

MaskRLE rle_from_string(const std::string& s) {
  MaskRLE r;
  std::size_t x = s.find('x');
  std::size_t colon = s.find(':');
  if (x == std::string::npos || colon == std::string::npos || x > colon)
    throw std::invalid_argument("rle_from_string: expected \"HxW:runs\", got \"" + s + "\"");
  try {
    r.height = std::stoi(s.substr(0, x));
    r.width = std::stoi(s.substr(x + 1, colon - x - 1));
    std::size_t pos = colon + 1;
    while (pos < s.size()) {
      std::size_t next = s.find(',', pos);
      if (next == std::string::npos) next = s.size();
      r.runs.push_back(std::stoi(s.substr(pos, next - pos)));
      pos = next + 1;
    }
  } catch (const std::exception&) {
    throw std::invalid_argument("rle_from_string: malformed run list in \"" + s + "\"");
  }
  return r;
}

namespace {

void accumulate_overlap(const Mask& a, const Mask& b, long& inter, long& uni) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("tube_iou: masks live on different canvases");
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool pa = a.data[i] != 0, pb = b.data[i] != 0;
    inter += pa && pb;
    uni += pa || pb;
  }
}

}  // namespace

double tube_iou(const Track& pred, const Track& gt, int frame_begin, int frame_end) {
  long inter = 0, uni = 0;
  for (int f = frame_begin; f < frame_end; ++f) {
    auto pit = pred.frames.find(f);
    auto git = gt.frames.find(f);
    if (pit == pred.frames.end() && git == gt.frames.end()) continue;
    if (pit == pred.frames.end()) {
      uni += git->second.area();
    } else if (git == gt.frames.end()) {
      uni += pit->second.area();
    } else {
      accumulate_overlap(pit->second, git->second, inter, uni);
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double tube_iou(const Track& pred, const Track& gt) {
  int lo = 0, hi = 0;
  bool any = false;
  for (const Track* t : {&pred, &gt}) {
    if (t->frames.empty()) continue;
    const int a = t->frames.begin()->first, b = t->frames.rbegin()->first + 1;
    lo = any ? std::min(lo, a) : a;
    hi = any ? std::max(hi, b) : b;
    any = true;
  }
  return any ? tube_iou(pred, gt, lo, hi) : 0.0;
}

std::vector<double> default_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

namespace {

// 101-point interpolated average precision from a TP/FP sequence already
// ordered by descending confidence.
double interpolated_ap(const std::vector<bool>& is_tp, int gt_count) {
  if (gt_count == 0) return 0.0;
  std::vector<double> recall, precision;
  int tp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    tp += is_tp[i];
    recall.push_back(static_cast<double>(tp) / gt_count);
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  double ap = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double r = i / 100.0;
    double best = 0.0;
    for (std::size_t k = 0; k < recall.size(); ++k)
      if (recall[k] >= r) best = std::max(best, precision[k]);
    ap += best;
  }
  return ap / 101.0;
}

struct ScoredPred {
  const Track* track;
  std::vector<std::pair<int, double>> overlaps;  // (gt index, tube IoU), same video+class
};

// Greedy matching at one threshold. Returns per-prediction TP flags.
std::vector<bool> greedy_match(const std::vector<ScoredPred>& preds, int gt_count,
                               double threshold) {
  std::vector<bool> taken(gt_count, false);
  std::vector<bool> is_tp;
  is_tp.reserve(preds.size());
  for (const ScoredPred& p : preds) {
    int best = -1;
    double best_iou = 0.0;
    for (auto [g, iou] : p.overlaps) {
      if (taken[g] || iou < threshold) continue;
      if (iou > best_iou) {
        best_iou = iou;
        best = g;
      }
    }
    if (best >= 0) taken[best] = true;
    is_tp.push_back(best >= 0);
  }
  return is_tp;
}

}  // namespace

EvalReport evaluate(const std::vector<Track>& preds, const std::vector<Track>& gts,
                    const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw std::invalid_argument("evaluate: no IoU thresholds given");
  std::set<int> classes;
  for (const Track& g : gts) classes.insert(g.class_id);

  EvalReport report;
  double ar1_acc = 0.0, ar10_acc = 0.0;
  int ar_terms = 0;

  for (int cls : classes) {
    std::vector<const Track*> gt_c;
    for (const Track& g : gts)
      if (g.class_id == cls) gt_c.push_back(&g);

    std::vector<ScoredPred> pred_c;
    for (const Track& p : preds) {
      if (p.class_id != cls) continue;
      ScoredPred sp;
      sp.track = &p;
      for (std::size_t g = 0; g < gt_c.size(); ++g)
        if (gt_c[g]->video_id == p.video_id)
          sp.overlaps.push_back({static_cast<int>(g), tube_iou(p, *gt_c[g])});
      pred_c.push_back(std::move(sp));
    }
    std::sort(pred_c.begin(), pred_c.end(), [](const ScoredPred& a, const ScoredPred& b) {
      if (a.track->score != b.track->score) return a.track->score > b.track->score;
      if (a.track->video_id != b.track->video_id) return a.track->video_id < b.track->video_id;
      return a.track->track_id < b.track->track_id;
    });

    ClassMetrics cm;
    cm.class_id = cls;
    cm.gt_count = static_cast<int>(gt_c.size());
    double ap_sum = 0.0;
    for (double tau : thresholds) {
      const double ap = interpolated_ap(greedy_match(pred_c, cm.gt_count, tau), cm.gt_count);
      ap_sum += ap;
      if (std::fabs(tau - 0.50) < 1e-9) cm.ap50 = ap;
      if (std::fabs(tau - 0.75) < 1e-9) cm.ap75 = ap;

      // recall caps: keep only the top-n predictions of each video
      for (int cap : {1, 10}) {
        std::map<int, int> used;
        std::vector<ScoredPred> capped;
        for (const ScoredPred& p : pred_c)
          if (used[p.track->video_id]++ < cap) capped.push_back(p);
        std::vector<bool> tp = greedy_match(capped, cm.gt_count, tau);
        const int matched = static_cast<int>(std::count(tp.begin(), tp.end(), true));
        const double recall = cm.gt_count ? static_cast<double>(matched) / cm.gt_count : 0.0;
        (cap == 1 ? ar1_acc : ar10_acc) += recall;
      }
      ++ar_terms;
    }
    cm.ap = ap_sum / static_cast<double>(thresholds.size());
    report.per_class.push_back(cm);
    report.ap += cm.ap;
    report.ap50 += cm.ap50;
    report.ap75 += cm.ap75;
  }

  const double n_cls = static_cast<double>(report.per_class.size());
  if (n_cls > 0) {
    report.ap /= n_cls;
    report.ap50 /= n_cls;
    report.ap75 /= n_cls;
  }
  if (ar_terms > 0) {
    report.ar1 = ar1_acc / ar_terms;
    report.ar10 = ar10_acc / ar_terms;
  }
  return report;
}

void write_predictions(const std::string& path, const std::vector<Track>& tracks) {
  json arr = json::array();
  for (const Track& t : tracks) {
    json frames = json::array();
    for (const auto& [f, mask] : t.frames)
      frames.push_back({{"frame_index", f}, {"rle", rle_to_string(rle_encode(mask))}});
    arr.push_back({{"video_id", t.video_id},
                   {"track_id", t.track_id},
                   {"class", t.class_id},
                   {"score", t.score},
                   {"frames", frames}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_predictions: cannot open " + path);
  out << arr.dump(2) << '\n';
}

std::vector<Track> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_predictions: cannot open " + path);
  json arr;
  try {
    in >> arr;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("read_predictions: " + path + ": " + e.what());
  }
  std::vector<Track> tracks;
  for (const json& item : arr) {
    Track t;
    t.video_id = item.at("video_id").get<int>();
    t.track_id = item.at("track_id").get<int>();
    t.class_id = item.at("class").get<int>();
    t.score = item.at("score").get<double>();
    for (const json& fr : item.at("frames"))
      t.frames[fr.at("frame_index").get<int>()] =
          rle_decode(rle_from_string(fr.at("rle").get<std::string>()));
    tracks.push_back(std::move(t));
  }
  return tracks;
}

std::string report_to_json(const EvalReport& report) {
  json per_class = json::array();
  for (const ClassMetrics& c : report.per_class)
    per_class.push_back({{"class", c.class_id},
                         {"gt_count", c.gt_count},
                         {"ap", c.ap},
                         {"ap50", c.ap50},
                         {"ap75", c.ap75}});
  json j = {{"ap", report.ap},   {"ap50", report.ap50}, {"ap75", report.ap75},
            {"ar1", report.ar1}, {"ar10", report.ar10}, {"per_class", per_class}};
  return j.dump(2);
}

std::string report_table(const EvalReport& report) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-8s %8s %8s %8s %8s %8s\n", "class", "gt", "AP", "AP50",
                "AP75", "");
  out << line;
  for (const ClassMetrics& c : report.per_class) {
    std::snprintf(line, sizeof(line), "%-8d %8d %8.4f %8.4f %8.4f\n", c.class_id, c.gt_count,
                  c.ap, c.ap50, c.ap75);
    out << line;
  }
  std::snprintf(line, sizeof(line), "%-8s %8s %8.4f %8.4f %8.4f  AR1 %.4f  AR10 %.4f\n", "all",
                "", report.ap, report.ap50, report.ap75, report.ar1, report.ar10);
  out << line;
  return out.str();
}

}  // namespace vistrack
