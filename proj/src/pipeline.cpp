#include "vistrack/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "vistrack/graph.hpp"

namespace vistrack {

namespace {

void validate_weights(const LossWeights& w) {
  if (w.lambda1 < 0 || w.lambda2 < 0 || w.lambda3 < 0 || w.lambda_size < 0 || w.lambda_offset < 0)
    throw std::invalid_argument("loss weights must be non-negative");
}

Tensor mean_or_zero(const std::vector<Tensor>& terms) {
  if (terms.empty()) return Tensor::scalar(0.0);
  Tensor s = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) s = add(s, terms[i]);
  return scale(s, 1.0 / static_cast<double>(terms.size()));
}

// Per-channel average of an roi_align patch over the box: one [D] row.
Tensor crop_feature(const Tensor& fmap, const Box& box) {
  return flatten_node_feature(roi_align(fmap, box, 3));
}

Mask logits_to_mask(const Tensor& logits, int upsample) {
  const int h = logits.dim(0), w = logits.dim(1);
  Mask low(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      low.set(y, x, logits.at({y, x}) >= 0.0 ? 1 : 0);  // sigmoid(v) >= 0.5
  return upsample_mask(low, upsample);
}

}  // namespace

InstanceSet annotations_to_instances(const std::vector<FrameAnnotation>& anns, int stride) {
  if (stride < 1) throw std::invalid_argument("annotations_to_instances: stride must be positive");
  InstanceSet out;
  for (const FrameAnnotation& a : anns) {
    Instance inst;
    inst.id = a.id;
    inst.class_id = a.class_id;
    inst.box = {a.box.x1 / stride, a.box.y1 / stride, a.box.x2 / stride, a.box.y2 / stride};
    inst.cx = inst.box.cx();
    inst.cy = inst.box.cy();
    inst.cell_x = static_cast<int>(inst.cx);
    inst.cell_y = static_cast<int>(inst.cy);
    out.push_back(inst);
  }
  return out;
}

Mask downsample_mask(const Mask& m, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample_mask: factor must be positive");
  if (m.height % factor != 0 || m.width % factor != 0)
    throw std::invalid_argument("downsample_mask: " + std::to_string(m.height) + "x" +
                                std::to_string(m.width) + " does not divide by " +
                                std::to_string(factor));
  Mask out(m.height / factor, m.width / factor);
  const int block = factor * factor;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      int on = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) on += m.at(y * factor + dy, x * factor + dx) != 0;
      out.set(y, x, 2 * on >= block ? 1 : 0);
    }
  return out;
}

Mask upsample_mask(const Mask& m, int factor) {
  if (factor < 1) throw std::invalid_argument("upsample_mask: factor must be positive");
  Mask out(m.height * factor, m.width * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.set(y, x, m.at(y / factor, x / factor));
  return out;
}

Tensor mask_to_tensor(const Mask& m) {
  Tensor t({m.height, m.width});
  for (int i = 0; i < t.numel(); ++i) t.data()[i] = m.data[i] != 0 ? 1.0 : 0.0;
  return t;
}

FramePair sample_training_pair(const VideoDataset& ds, Rng& rng) {
  std::vector<int> eligible;
  for (int i = 0; i < static_cast<int>(ds.videos.size()); ++i)
    if (ds.videos[i].frames.size() >= 2) eligible.push_back(i);
  if (eligible.empty())
    throw std::invalid_argument("sample_training_pair: no video with two or more frames");
  const int v = eligible[rng.uniform_int(0, static_cast<int>(eligible.size()) - 1)];
  const int f = static_cast<int>(ds.videos[v].frames.size());
  std::vector<std::pair<int, int>> pairs;
  for (int k = 0; k + 1 < f; ++k)
    for (int t = k + 1; t <= std::min(k + 4, f - 1); ++t) pairs.emplace_back(k, t);
  const auto [k, t] = pairs[rng.uniform_int(0, static_cast<int>(pairs.size()) - 1)];
  return {v, k, t};
}

LossBreakdown train_step(Model& m, const Video& video, int frame_k, int frame_t,
                         const LossWeights& weights, SgdOptimizer& opt, double grad_clip) {
  validate_weights(weights);
  const int nf = static_cast<int>(video.frames.size());
  if (frame_k < 0 || frame_t >= nf || frame_k >= frame_t)
    throw std::invalid_argument("train_step: need 0 <= k < t < " + std::to_string(nf) +
                                ", got k=" + std::to_string(frame_k) +
                                " t=" + std::to_string(frame_t));

  Tape tape;
  Tensor f_k = backbone_forward(m.backbone, video.frames[frame_k].image);
  Tensor f_t = backbone_forward(m.backbone, video.frames[frame_t].image);
  const int gh = f_t.dim(1), gw = f_t.dim(2);

  const InstanceSet gt_k = annotations_to_instances(video.frames[frame_k].instances);
  const InstanceSet gt_t = annotations_to_instances(video.frames[frame_t].instances);

  FrameGraph g = message_pass(build_graph(gt_k, f_k, f_t, m.cfg.window), m.edge_update,
                              m.node_update, m.cfg.iterations);
  Tensor f_hat = aggregate_feature(g);

  DetMaps maps = detect_forward(m.detect, f_hat);
  Tensor l_det = detect_loss(maps, gt_t, weights.lambda_size, weights.lambda_offset);

  // Masks. Target-frame instances run through the dynamic head twice: once
  // with filters generated at frame t and, when the identity exists at frame
  // k, once with frame-k filters warped forward; the two dice terms average.
  // Reference-frame instances supervise the direct path on the plain frame-k
  // features.
  FilterMap theta_t = controller_forward(m.seg, f_hat);
  FilterMap theta_k = controller_forward(m.seg, f_k);
  FilterMap theta_warp = warp_filters(m.seg, f_k, f_t, theta_k);
  Tensor reduced_t = reduce_channels(m.seg, f_hat);
  Tensor reduced_k = reduce_channels(m.seg, f_k);

  std::unordered_set<int> ids_k;
  for (const Instance& inst : gt_k) ids_k.insert(inst.id);

  std::vector<Tensor> target_terms;
  for (std::size_t i = 0; i < gt_t.size(); ++i) {
    const Instance& inst = gt_t[i];
    Tensor gt = mask_to_tensor(downsample_mask(video.frames[frame_t].instances[i].mask,
                                               kFeatureStride));
    Tensor pos = position_map(inst.cx, inst.cy, gh, gw);
    Tensor direct = dice_loss(
        sigmoid(mask_forward(reduced_t, pos, filters_at(theta_t, inst.cell_x, inst.cell_y))), gt);
    if (ids_k.count(inst.id)) {
      Tensor warped = dice_loss(
          sigmoid(mask_forward(reduced_t, pos, filters_at(theta_warp, inst.cell_x, inst.cell_y))),
          gt);
      target_terms.push_back(scale(add(direct, warped), 0.5));
    } else {
      target_terms.push_back(direct);
    }
  }
  std::vector<Tensor> reference_terms;
  for (std::size_t i = 0; i < gt_k.size(); ++i) {
    const Instance& inst = gt_k[i];
    Tensor gt = mask_to_tensor(downsample_mask(video.frames[frame_k].instances[i].mask,
                                               kFeatureStride));
    Tensor pos = position_map(inst.cx, inst.cy, gh, gw);
    reference_terms.push_back(dice_loss(
        sigmoid(mask_forward(reduced_k, pos, filters_at(theta_k, inst.cell_x, inst.cell_y))), gt));
  }
  Tensor l_mask = add(mean_or_zero(target_terms), mean_or_zero(reference_terms));

  // Edges are supervised against ground truth on both sides: target instances
  // stand in for detections, and an edge is positive when it joins the same
  // identity.
  std::vector<int> classes_k;
  for (const Instance& inst : gt_k) classes_k.push_back(inst.class_id);
  std::vector<PrunedEdge> pruned = prune_edges(g, gt_t, classes_k);
  Tensor l_edge;
  if (pruned.empty()) {
    l_edge = Tensor::scalar(0.0);
  } else {
    std::vector<int> labels;
    for (const PrunedEdge& pe : pruned)
      labels.push_back(g.k_nodes[pe.k_index].instance_id == gt_t[pe.det_index].id ? 1 : 0);
    l_edge = edge_loss(edge_score_tensor(g.edge_feats, pruned, m.edge_classifier), labels);
  }

  Tensor total = add(add(scale(l_det, weights.lambda1), scale(l_mask, weights.lambda2)),
                     scale(l_edge, weights.lambda3));

  LossBreakdown lb{l_det.scalar_value(), l_mask.scalar_value(), l_edge.scalar_value(),
                   total.scalar_value()};
  if (!std::isfinite(lb.det) || !std::isfinite(lb.mask) || !std::isfinite(lb.edge) ||
      !std::isfinite(lb.total))
    throw std::runtime_error("train_step: non-finite loss (det=" + std::to_string(lb.det) +
                             " mask=" + std::to_string(lb.mask) +
                             " edge=" + std::to_string(lb.edge) +
                             " total=" + std::to_string(lb.total) + ")");

  tape.backward(total);
  std::vector<Tensor> params;
  for (NamedTensor& np : model_parameters(m)) {
    np.tensor.ensure_grad();  // branches scaled to zero still count as zero
    params.push_back(np.tensor);
  }
  lb.grad_norm = clip_gradients(params, grad_clip);
  opt.step(params);
  return lb;
}

std::vector<LossBreakdown> train_loop(Model& m, const VideoDataset& ds, const TrainConfig& cfg,
                                      std::ostream* csv) {
  if (cfg.steps < 0) throw std::invalid_argument("train_loop: steps must be non-negative");
  if (cfg.lr <= 0) throw std::invalid_argument("train_loop: learning rate must be positive");
  if (cfg.momentum < 0 || cfg.momentum >= 1)
    throw std::invalid_argument("train_loop: momentum must be in [0, 1)");
  validate_weights(cfg.weights);

  SgdOptimizer opt(cfg.lr, cfg.momentum);
  Rng rng(cfg.seed);
  std::vector<LossBreakdown> history;
  if (csv) *csv << std::setprecision(17) << "step,L_det,L_mask,L_edge,L_total\n";
  for (int step = 0; step < cfg.steps; ++step) {
    if (std::find(cfg.milestones.begin(), cfg.milestones.end(), step) != cfg.milestones.end())
      opt.set_lr(opt.lr() * 0.1);
    FramePair p = sample_training_pair(ds, rng);
    LossBreakdown lb =
        train_step(m, ds.videos[p.video_index], p.frame_k, p.frame_t, cfg.weights, opt,
                   cfg.grad_clip);
    history.push_back(lb);
    if (csv)
      *csv << step << "," << lb.det << "," << lb.mask << "," << lb.edge << "," << lb.total << "\n";
  }
  return history;
}

TrackMemory memory_update(TrackMemory mem, const std::vector<MemoryEntry>& unmatched,
                          int frame_index, int delta_t) {
  for (const MemoryEntry& e : unmatched) {
    MemoryEntry stamped = e;
    stamped.last_seen = frame_index;
    auto it = std::find_if(mem.entries.begin(), mem.entries.end(), [&](const MemoryEntry& x) {
      return x.instance_id == e.instance_id;
    });
    if (it != mem.entries.end())
      *it = std::move(stamped);
    else
      mem.entries.push_back(std::move(stamped));
  }
  mem.entries.erase(std::remove_if(mem.entries.begin(), mem.entries.end(),
                                   [&](const MemoryEntry& x) {
                                     return frame_index - x.last_seen > delta_t;
                                   }),
                    mem.entries.end());
  return mem;
}

std::vector<Track> infer_video(const Model& m, const Video& video, const InferConfig& cfg,
                               const InferHooks& hooks) {
  if (cfg.top_k < 1) throw std::invalid_argument("infer_video: top_k must be positive");
  if (cfg.delta_t < 0) throw std::invalid_argument("infer_video: delta_t must be non-negative");
  NoTape guard;

  struct LiveTrack {
    int id = -1;
    int class_id = 0;
    Box box;         // feature-grid coordinates at the last matched frame
    Tensor filters;  // [169]
  };

  std::unordered_map<int, Track> finished;
  std::vector<LiveTrack> live;
  TrackMemory mem;
  Tensor prev_feat;
  int next_id = 0;

  auto record = [&](int id, int class_id, int frame, const Instance& det, Mask mask) {
    Track& tr = finished[id];
    if (tr.frames.empty()) {
      tr.video_id = video.id;
      tr.track_id = id;
      tr.class_id = class_id;
      tr.score = 0.0;
    }
    tr.score += det.score;  // running sum, averaged at the end
    tr.frames[frame] = std::move(mask);
  };

  for (int t = 0; t < static_cast<int>(video.frames.size()); ++t) {
    Tensor feat = backbone_forward(m.backbone, video.frames[t].image);
    const int gh = feat.dim(1), gw = feat.dim(2);

    Tensor working = feat;
    FrameGraph g;
    std::vector<int> classes_k;
    if (t > 0) {
      mem = memory_update(std::move(mem), {}, t, cfg.delta_t);  // expire before use
      std::vector<FrameGraph::KNode> nodes;
      std::vector<Tensor> rows;
      for (const LiveTrack& lt : live) {
        nodes.push_back({lt.id, lt.class_id, lt.box.cx(), lt.box.cy()});
        rows.push_back(reshape(crop_feature(prev_feat, lt.box), {1, m.cfg.d}));
        classes_k.push_back(lt.class_id);
      }
      for (const MemoryEntry& e : mem.entries) {
        nodes.push_back({e.instance_id, e.class_id, e.last_box.cx(), e.last_box.cy()});
        rows.push_back(reshape(e.feature, {1, m.cfg.d}));
        classes_k.push_back(e.class_id);
      }
      Tensor k_feats = rows.empty() ? Tensor({0, m.cfg.d}) : concat(rows, 0);
      g = message_pass(build_graph_nodes(std::move(nodes), k_feats, feat, m.cfg.window),
                       m.edge_update, m.node_update, m.cfg.iterations);
      working = aggregate_feature(g);
    }

    DetMaps maps = detect_forward(m.detect, working);
    InstanceSet dets = decode_detections(maps, cfg.top_k, cfg.tau_det);
    if (hooks.detections) dets = hooks.detections(t, dets);

    FilterMap theta = controller_forward(m.seg, working);
    Tensor reduced = reduce_channels(m.seg, working);
    auto mask_for = [&](const Instance& det) {
      Tensor pos = position_map(det.cx, det.cy, gh, gw);
      Tensor logits = mask_forward(reduced, pos, filters_at(theta, det.cell_x, det.cell_y));
      return logits_to_mask(logits, kFeatureStride);
    };

    if (t == 0) {
      for (const Instance& det : dets) {
        const int id = next_id++;
        record(id, det.class_id, t, det, mask_for(det));
        live.push_back({id, det.class_id, det.box, filters_at(theta, det.cell_x, det.cell_y)});
      }
    } else {
      std::vector<PrunedEdge> pruned = prune_edges(g, dets, classes_k);
      std::vector<EdgeScore> scores = classify_edges(g, pruned, m.edge_classifier);
      if (hooks.edge_score)
        for (EdgeScore& s : scores)
          s.score = hooks.edge_score(t, s.k_instance_id, s.t_detection_index, s.score);
      const Assignment asg = resolve_associations(scores, cfg.tau_assoc);

      std::unordered_map<int, int> det_of_id;
      std::unordered_set<int> matched_dets;
      for (const auto& [kid, didx] : asg.matched) {
        det_of_id.emplace(kid, didx);
        matched_dets.insert(didx);
      }

      std::vector<LiveTrack> next_live;
      std::vector<MemoryEntry> to_memory;
      for (LiveTrack& lt : live) {
        auto it = det_of_id.find(lt.id);
        if (it != det_of_id.end()) {
          const Instance& det = dets[it->second];
          record(lt.id, lt.class_id, t, det, mask_for(det));
          next_live.push_back(
              {lt.id, lt.class_id, det.box, filters_at(theta, det.cell_x, det.cell_y)});
        } else {
          to_memory.push_back(
              {lt.id, crop_feature(prev_feat, lt.box), lt.filters, lt.class_id, lt.box, t});
        }
      }
      std::vector<MemoryEntry> kept;
      for (MemoryEntry& e : mem.entries) {
        auto it = det_of_id.find(e.instance_id);
        if (it != det_of_id.end()) {
          const Instance& det = dets[it->second];
          record(e.instance_id, e.class_id, t, det, mask_for(det));
          next_live.push_back(
              {e.instance_id, e.class_id, det.box, filters_at(theta, det.cell_x, det.cell_y)});
        } else {
          kept.push_back(std::move(e));
        }
      }
      mem.entries = std::move(kept);
      for (int d = 0; d < static_cast<int>(dets.size()); ++d) {
        if (matched_dets.count(d)) continue;
        const Instance& det = dets[d];
        const int id = next_id++;
        record(id, det.class_id, t, det, mask_for(det));
        next_live.push_back(
            {id, det.class_id, det.box, filters_at(theta, det.cell_x, det.cell_y)});
      }
      live = std::move(next_live);
      mem = memory_update(std::move(mem), to_memory, t, cfg.delta_t);
    }
    prev_feat = feat;
  }

  std::vector<Track> out;
  out.reserve(finished.size());
  for (auto& [id, tr] : finished) {
    tr.score /= static_cast<double>(tr.frames.size());
    out.push_back(std::move(tr));
  }
  std::sort(out.begin(), out.end(),
            [](const Track& a, const Track& b) { return a.track_id < b.track_id; });
  return out;
}

}  // namespace vistrack
