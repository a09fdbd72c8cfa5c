#include "stf/model.hpp"

#include "stf/ops.hpp"
#include "stf/rng.hpp"

namespace stf {

namespace {

constexpr const char* kEncoder = "encoder";
constexpr const char* kHead = "head";

EncoderSpec student_encoder_spec(const ExperimentConfig& cfg) {
  return {5, static_cast<std::size_t>(cfg.point_channels), static_cast<std::size_t>(cfg.channels)};
}

std::size_t frames_used(const ExperimentConfig& cfg) {
  return cfg.fusion_mode == FusionMode::Single ? 1 : static_cast<std::size_t>(cfg.k);
}

}  // namespace

DetectionLossOptions detection_options(const ExperimentConfig& cfg) {
  DetectionLossOptions o;
  o.target_sigma = cfg.target_sigma;
  o.regression_weight = cfg.reg_weight;
  return o;
}

ParameterStore build_student(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterStore params(seed);
  const auto c = static_cast<std::size_t>(cfg.channels);
  const GridSpec grid = cfg.grid();
  init_encoder(params, kEncoder, student_encoder_spec(cfg));
  switch (cfg.fusion_mode) {
    case FusionMode::Single:
    case FusionMode::Data:
      break;
    case FusionMode::Feature:
      if (cfg.k > 1) init_feature_fusion(params, c, static_cast<std::size_t>(cfg.k));
      break;
    case FusionMode::ST:
      init_st_fusion(params, c, static_cast<std::size_t>(cfg.k), grid.rows, grid.cols, cfg.use_sa, cfg.use_tm);
      break;
  }
  init_head(params, kHead, c, static_cast<std::size_t>(cfg.num_classes()));
  if (cfg.use_sup) init_supervision(params, c);
  return params;
}

ParameterStore build_teacher(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterStore params(derive_key(seed, fnv1a("teacher")));
  EncoderSpec spec = student_encoder_spec(cfg);
  spec.in_dim = semantic_in_dim(cfg.semantic_encoding, cfg.num_classes());
  init_encoder(params, kEncoder, spec);
  init_head(params, kHead, static_cast<std::size_t>(cfg.channels), static_cast<std::size_t>(cfg.num_classes()));
  return params;
}

StudentOutput student_forward(Tape& tape, const ParameterStore& params, const ExperimentConfig& cfg,
                              const SceneSequence& scene) {
  const std::size_t n = frames_used(cfg);
  if (scene.frames.size() < n) {
    throw ValidationError("scene holds " + std::to_string(scene.frames.size()) + " frames, model needs " +
                          std::to_string(n));
  }
  const GridSpec grid = cfg.grid();
  const std::vector<PointCloud> frames(scene.frames.end() - static_cast<std::ptrdiff_t>(n), scene.frames.end());

  auto encode_frames = [&](std::size_t from) {
    std::vector<Tensor> feats;
    for (std::size_t i = from; i < frames.size(); ++i) {
      feats.push_back(encode(tape, point_table(frames[i], grid), grid, params, kEncoder));
    }
    return feats;
  };

  StudentOutput out;
  switch (cfg.fusion_mode) {
    case FusionMode::Single:
      out.fused = encode_frames(n - 1).front();
      break;
    case FusionMode::Data:
      out.fused = encode(tape, point_table(data_fusion_baseline(frames), grid), grid, params, kEncoder);
      break;
    case FusionMode::Feature: {
      const auto feats = encode_frames(0);
      out.fused = n > 1 ? feature_fusion_baseline(tape, feats, params.get("ff.kernel"), params.get("ff.bias"))
                        : feats.front();
      break;
    }
    case FusionMode::ST: {
      // Without TM the preceding frames never reach the output, so skip encoding them.
      const auto feats = encode_frames(cfg.use_tm ? 0 : n - 1);
      auto fr = st_fuse(tape, feats, params, FusionFlags{cfg.use_sa, cfg.use_tm});
      out.fused = fr.fused;
      out.attention = fr.attention;
      break;
    }
  }
  out.head = head_forward(tape, out.fused, params, kHead);
  return out;
}

HeadOutput teacher_forward(Tape& tape, const ParameterStore& teacher, const ExperimentConfig& cfg,
                           const SceneSequence& scene, Tensor* features) {
  const GridSpec grid = cfg.grid();
  const InjectedPointCloud cloud = inject_frame(scene, 0, TieBreak::FirstByIndex);
  const Tensor f = encode(tape, point_table(cloud, grid, cfg.semantic_encoding, cfg.num_classes()), grid,
                          teacher, kEncoder);
  if (features) *features = f;
  return head_forward(tape, f, teacher, kHead);
}

ObjectiveTerms student_objective(Tape& tape, const StudentOutput& out, const ExperimentConfig& cfg,
                                 const SceneSequence& scene, const ParameterStore& params,
                                 const Tensor& teacher_features, const Tensor& weight_map) {
  ObjectiveTerms t;
  t.det = detection_loss(tape, out.head, scene.gt, cfg.grid(), detection_options(cfg));
  t.total = t.det.total;
  if (cfg.use_sup) {
    if (!teacher_features.defined()) throw ContractError("use_sup requires teacher features");
    t.sup = semantic_supervision_loss(tape, out.fused, teacher_features, weight_map, params, cfg.alpha, cfg.beta);
    t.total = ops::add(tape, t.total, ops::scale(tape, t.sup.total, cfg.lambda));
  }
  return t;
}

}  // namespace stf
