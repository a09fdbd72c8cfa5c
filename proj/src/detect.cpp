#include "stf/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <cstdio>
#include <ostream>

#include "stf/ops.hpp"
#include "stf/supervision.hpp"

namespace stf {

void init_head(ParameterStore& params, const std::string& prefix, std::size_t channels, std::size_t num_classes) {
  const double bound = std::sqrt(1.0 / static_cast<double>(channels * 9));
  params.add_uniform(prefix + ".heat.kernel", {num_classes, channels, 3, 3}, bound);
  params.add_constant(prefix + ".heat.bias", {num_classes}, -std::log(9.0));  // logit(0.1)
  params.add_uniform(prefix + ".reg.kernel", {4, channels, 3, 3}, bound);
  params.add_zeros(prefix + ".reg.bias", {4});
}

HeadOutput head_forward(Tape& tape, const Tensor& features, const ParameterStore& params,
                        const std::string& prefix) {
  HeadOutput out;
  out.heat_logits =
      ops::conv2d_same(tape, features, params.get(prefix + ".heat.kernel"), params.get(prefix + ".heat.bias"));
  out.heatmap = ops::sigmoid(tape, out.heat_logits);
  out.regression =
      ops::conv2d_same(tape, features, params.get(prefix + ".reg.kernel"), params.get(prefix + ".reg.bias"));
  return out;
}

Tensor detection_targets(const std::vector<ObjectTrack>& gt, const GridSpec& grid, std::size_t num_classes,
                         double sigma) {
  Tensor targets({num_classes, grid.rows, grid.cols});
  auto t = targets.mutable_data();
  const std::size_t plane = grid.cells();
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<ObjectTrack> of_class;
    for (const auto& box : gt) {
      if (box.class_id == static_cast<int>(c) + 1) of_class.push_back(box);
    }
    if (of_class.empty()) continue;
    const Tensor map = gaussian_weight_map(of_class, grid, sigma, 0.0);
    std::copy(map.data().begin(), map.data().end(), t.begin() + c * plane);
  }
  return targets;
}

namespace {

// A box turned by half a revolution covers the same footprint and its points
// give no cue about which end is the front, so targets use yaw mod pi.
double fold_yaw(double yaw) {
  double y = std::remainder(yaw, std::numbers::pi);
  if (y <= -std::numbers::pi / 2) y += std::numbers::pi;
  return y;
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double logistic(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

Tensor focal_loss(Tape& tape, const Tensor& logits, const Tensor& targets, const DetectionLossOptions& opt) {
  const auto z = logits.data();
  const auto y = targets.data();
  std::size_t positives = 0;
  for (double v : y) positives += v == 1.0 ? 1 : 0;
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, positives));
  const double a = opt.focal_alpha, b = opt.focal_beta;
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = logistic(z[i]);
    if (y[i] == 1.0) {
      acc += std::pow(1.0 - p, a) * softplus(-z[i]);  // -(1-p)^a log p
    } else {
      acc += std::pow(1.0 - y[i], b) * std::pow(p, a) * softplus(z[i]);  // -(1-y)^b p^a log(1-p)
    }
  }
  Tensor out({1}, {acc * norm}, logits.requires_grad());
  tape.record(out, [logits, targets, out, norm, a, b] {
    const double g = out.grad()[0] * norm;
    const auto z = logits.data();
    const auto y = targets.data();
    Tensor l = logits;
    auto gz = l.grad_mut();
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = logistic(z[i]);
      const double q = 1.0 - p;
      double d;
      if (y[i] == 1.0) {
        // d/dz [-(1-p)^a log p] = a p (1-p)^a log p - (1-p)^(a+1)
        d = -a * p * std::pow(q, a) * softplus(-z[i]) - std::pow(q, a + 1.0);
      } else {
        // d/dz [-(1-y)^b p^a log(1-p)] = (1-y)^b [p^(a+1) - a p^a (1-p) log(1-p)]
        d = std::pow(1.0 - y[i], b) * (std::pow(p, a + 1.0) + a * std::pow(p, a) * q * softplus(z[i]));
      }
      gz[i] += g * d;
    }
  });
  return out;
}

struct RegTarget {
  std::size_t cell;
  double values[4];
};

Tensor regression_l1(Tape& tape, const Tensor& reg, const std::vector<RegTarget>& targets) {
  const std::size_t plane = reg.dim(1) * reg.dim(2);
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, targets.size()));
  const auto r = reg.data();
  double acc = 0.0;
  for (const auto& t : targets) {
    for (std::size_t c = 0; c < 4; ++c) acc += std::abs(r[c * plane + t.cell] - t.values[c]);
  }
  Tensor out({1}, {acc * norm}, reg.requires_grad());
  tape.record(out, [reg, targets, out, plane, norm] {
    const double g = out.grad()[0] * norm;
    const auto r = reg.data();
    Tensor rt = reg;
    auto gr = rt.grad_mut();
    for (const auto& t : targets) {
      for (std::size_t c = 0; c < 4; ++c) {
        const double diff = r[c * plane + t.cell] - t.values[c];
        gr[c * plane + t.cell] += g * (diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0);
      }
    }
  });
  return out;
}

}  // namespace

DetectionLoss detection_loss(Tape& tape, const HeadOutput& preds, const std::vector<ObjectTrack>& gt,
                             const GridSpec& grid, const DetectionLossOptions& options) {
  const std::size_t num_classes = preds.heat_logits.dim(0);
  std::vector<RegTarget> reg_targets;
  for (const auto& box : gt) {
    const auto cell = grid.cell_of(box.pose.x, box.pose.y);
    if (!cell) {
      throw ValidationError("ground-truth centre (" + std::to_string(box.pose.x) + ", " +
                            std::to_string(box.pose.y) + ") lies outside the grid");
    }
    if (box.class_id < 1 || static_cast<std::size_t>(box.class_id) > num_classes) {
      throw ValidationError("ground-truth class " + std::to_string(box.class_id) + " exceeds head classes");
    }
    reg_targets.push_back({*cell,
                           {std::log(box.size.length), std::log(box.size.width), std::sin(fold_yaw(box.pose.yaw)),
                            std::cos(fold_yaw(box.pose.yaw))}});
  }
  const Tensor targets = detection_targets(gt, grid, num_classes, options.target_sigma);
  DetectionLoss out;
  out.focal = focal_loss(tape, preds.heat_logits, targets, options);
  out.regression = regression_l1(tape, preds.regression, reg_targets);
  out.total = ops::add(tape, out.focal, ops::scale(tape, out.regression, options.regression_weight));
  return out;
}

std::vector<Detection> decode(const HeadOutput& preds, const GridSpec& grid, double score_thresh,
                              std::size_t max_dets) {
  const std::size_t nc = preds.heatmap.dim(0);
  const std::size_t rows = grid.rows, cols = grid.cols, plane = rows * cols;
  const auto heat = preds.heatmap.data();
  const auto reg = preds.regression.data();
  std::vector<Detection> dets;
  for (std::size_t c = 0; c < nc; ++c) {
    const double* h = heat.data() + c * plane;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t p = i * cols + j;
        const double v = h[p];
        if (!(v > score_thresh)) continue;
        bool peak = true;
        for (int di = -1; di <= 1 && peak; ++di) {
          for (int dj = -1; dj <= 1 && peak; ++dj) {
            if (di == 0 && dj == 0) continue;
            const auto ni = static_cast<std::ptrdiff_t>(i) + di, nj = static_cast<std::ptrdiff_t>(j) + dj;
            if (ni < 0 || nj < 0 || ni >= static_cast<std::ptrdiff_t>(rows) ||
                nj >= static_cast<std::ptrdiff_t>(cols)) {
              continue;
            }
            const double nv = h[static_cast<std::size_t>(ni) * cols + static_cast<std::size_t>(nj)];
            const bool earlier = di < 0 || (di == 0 && dj < 0);
            peak = earlier ? v > nv : v >= nv;
          }
        }
        if (!peak) continue;
        Detection d;
        d.class_id = static_cast<int>(c) + 1;
        d.x = grid.cell_center_x(j);
        d.y = grid.cell_center_y(i);
        d.length = std::exp(reg[0 * plane + p]);
        d.width = std::exp(reg[1 * plane + p]);
        d.yaw = std::atan2(reg[2 * plane + p], reg[3 * plane + p]);
        d.score = v;
        dets.push_back(d);
      }
    }
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (dets.size() > max_dets) dets.resize(max_dets);
  return dets;
}

namespace {

struct Rect {
  double x0, x1, y0, y1;
};

Rect bounding_rect(double x, double y, double l, double w, double yaw) {
  const double c = std::abs(std::cos(yaw)), s = std::abs(std::sin(yaw));
  const double ex = 0.5 * (l * c + w * s), ey = 0.5 * (l * s + w * c);
  return {x - ex, x + ex, y - ey, y + ey};
}

double rect_iou(const Rect& a, const Rect& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace

double bev_iou(const Detection& det, const ObjectTrack& gt) {
  return rect_iou(bounding_rect(det.x, det.y, det.length, det.width, det.yaw),
                  bounding_rect(gt.pose.x, gt.pose.y, gt.size.length, gt.size.width, gt.pose.yaw));
}

double average_precision(const std::vector<EvalFrame>& frames, double iou_thresh) {
  struct Ranked {
    double score;
    std::size_t frame, index;
  };
  std::vector<Ranked> ranked;
  std::size_t total_gt = 0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    total_gt += frames[f].gt.size();
    for (std::size_t i = 0; i < frames[f].detections.size(); ++i) {
      ranked.push_back({frames[f].detections[i].score, f, i});
    }
  }
  if (total_gt == 0) return ranked.empty() ? 1.0 : 0.0;
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> matched(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) matched[f].assign(frames[f].gt.size(), false);

  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const auto& r : ranked) {
    const auto& det = frames[r.frame].detections[r.index];
    const auto& gts = frames[r.frame].gt;
    double best = iou_thresh;
    std::ptrdiff_t best_idx = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (matched[r.frame][g] || gts[g].class_id != det.class_id) continue;
      const double iou = bev_iou(det, gts[g]);
      if (iou >= best) {
        if (best_idx < 0 || iou > best) {
          best = iou;
          best_idx = static_cast<std::ptrdiff_t>(g);
        }
      }
    }
    if (best_idx >= 0) {
      matched[r.frame][static_cast<std::size_t>(best_idx)] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }

  double ap = 0.0;
  for (int t = 0; t <= 100; ++t) {
    const double level = t / 100.0;
    double best = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
      if (recall[i] >= level - 1e-12) best = std::max(best, precision[i]);
    }
    ap += best;
  }
  return ap / 101.0;
}

double average_precision(const std::vector<Detection>& dets, const std::vector<ObjectTrack>& gt,
                         double iou_thresh) {
  return average_precision(std::vector<EvalFrame>{{dets, gt}}, iou_thresh);
}

double mean_average_precision(const std::vector<EvalFrame>& frames, std::size_t num_classes,
                              double iou_thresh) {
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 1; c <= num_classes; ++c) {
    std::vector<EvalFrame> per_class(frames.size());
    std::size_t gt_count = 0;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      for (const auto& d : frames[f].detections) {
        if (d.class_id == static_cast<int>(c)) per_class[f].detections.push_back(d);
      }
      for (const auto& g : frames[f].gt) {
        if (g.class_id == static_cast<int>(c)) per_class[f].gt.push_back(g);
      }
      gt_count += per_class[f].gt.size();
    }
    if (gt_count == 0) continue;
    total += average_precision(per_class, iou_thresh);
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

void write_detections(std::ostream& os, const std::vector<Detection>& dets) {
  char buf[256];
  for (const auto& d : dets) {
    std::snprintf(buf, sizeof(buf), "%d %.17g %.17g %.17g %.17g %.17g %.17g\n", d.class_id, d.x, d.y, d.length,
                  d.width, d.yaw, d.score);
    os << buf;
  }
}

}  // namespace stf
