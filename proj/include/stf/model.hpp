#pragma once

#include <vector>

#include "stf/config.hpp"
#include "stf/detect.hpp"
#include "stf/fusion.hpp"
#include "stf/supervision.hpp"

namespace stf {

/// Student parameters for the configured fusion mode: encoder, fusion
/// block, head, and the supervision projections when use_sup is set.
ParameterStore build_student(const ExperimentConfig& cfg, std::uint64_t seed);

/// Teacher encoder (semantic input channels) plus its own detection head.
ParameterStore build_teacher(const ExperimentConfig& cfg, std::uint64_t seed);

struct StudentOutput {
  Tensor fused;      // C x H x W
  Tensor attention;  // temporal coefficients, undefined unless TM ran
  HeadOutput head;
};

/// Runs the student on the last cfg.k frames of `scene`.
StudentOutput student_forward(Tape& tape, const ParameterStore& params, const ExperimentConfig& cfg,
                              const SceneSequence& scene);

/// Teacher encoder and head on the injected current frame.
HeadOutput teacher_forward(Tape& tape, const ParameterStore& teacher, const ExperimentConfig& cfg,
                           const SceneSequence& scene, Tensor* features = nullptr);

struct ObjectiveTerms {
  Tensor total;
  DetectionLoss det;
  SupervisionLoss sup;  // undefined tensors when use_sup is off
};

/// L = L_det + lambda * (alpha * L_d + beta * L_r).
ObjectiveTerms student_objective(Tape& tape, const StudentOutput& out, const ExperimentConfig& cfg,
                                 const SceneSequence& scene, const ParameterStore& params,
                                 const Tensor& teacher_features, const Tensor& weight_map);

DetectionLossOptions detection_options(const ExperimentConfig& cfg);

}  // namespace stf
