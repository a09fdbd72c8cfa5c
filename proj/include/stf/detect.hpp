#pragma once

#include <iosfwd>
#include <vector>

#include "stf/bev.hpp"
#include "stf/params.hpp"

namespace stf {

struct Detection {
  int class_id = 1;
  double x = 0, y = 0;
  double length = 1, width = 1;
  double yaw = 0;
  double score = 0;
};

struct HeadOutput {
  Tensor heat_logits;  // num_classes x H x W
  Tensor heatmap;      // logistic(heat_logits), in (0, 1)
  Tensor regression;   // 4 x H x W: log l, log w, sin yaw, cos yaw
};

/// Registers `<prefix>.heat.*` (3x3, C -> num_classes) and `<prefix>.reg.*`
/// (3x3, C -> 4). The heat bias starts at logit(0.1).
void init_head(ParameterStore& params, const std::string& prefix, std::size_t channels, std::size_t num_classes);

HeadOutput head_forward(Tape& tape, const Tensor& features, const ParameterStore& params,
                        const std::string& prefix = "head");

struct DetectionLossOptions {
  double target_sigma = 2.0;  // cells
  double focal_alpha = 2.0;
  double focal_beta = 4.0;
  double regression_weight = 1.0;
};

struct DetectionLoss {
  Tensor total;
  Tensor focal;
  Tensor regression;
};

/// Per-class Gaussian target heatmaps (peak 1 at centre cells, no floor).
Tensor detection_targets(const std::vector<ObjectTrack>& gt, const GridSpec& grid, std::size_t num_classes,
                         double sigma);

/// Penalty-reduced focal loss on the heatmap (normalised by the number of
/// centre cells, at least 1) plus L1 on the regression map at centre cells
/// (normalised by the number of objects, at least 1). Throws ValidationError
/// for a box centre outside the grid.
DetectionLoss detection_loss(Tape& tape, const HeadOutput& preds, const std::vector<ObjectTrack>& gt,
                             const GridSpec& grid, const DetectionLossOptions& options = {});

/// Local 3x3 maxima above `score_thresh`, sorted by score. Among equal
/// neighbouring peaks the first in row-major order wins; equal scores keep
/// class-then-row-major order.
std::vector<Detection> decode(const HeadOutput& preds, const GridSpec& grid, double score_thresh,
                              std::size_t max_dets);

/// Axis-aligned BEV IoU of the boxes' bounding rectangles.
double bev_iou(const Detection& det, const ObjectTrack& gt);

/// Detections and ground truth of one evaluated frame.
struct EvalFrame {
  std::vector<Detection> detections;
  std::vector<ObjectTrack> gt;
};

/// 101-point interpolated AP with greedy score-ordered matching; a
/// detection may only match a ground-truth box of its own class.
double average_precision(const std::vector<EvalFrame>& frames, double iou_thresh = 0.5);
double average_precision(const std::vector<Detection>& dets, const std::vector<ObjectTrack>& gt,
                         double iou_thresh = 0.5);

/// Mean of per-class AP over the classes that have ground truth.
double mean_average_precision(const std::vector<EvalFrame>& frames, std::size_t num_classes,
                              double iou_thresh = 0.5);

/// One record per line: class x y l w yaw score.
void write_detections(std::ostream& os, const std::vector<Detection>& dets);

}  // namespace stf
