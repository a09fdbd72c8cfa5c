#pragma once

#include <cstddef>
#include <vector>

#include "stf/params.hpp"
#include "stf/scene.hpp"

namespace stf {

/// SA kernel size for a frame of the given age: 2 * age + 1.
constexpr std::size_t sa_kernel_size(std::size_t age) noexcept { return 2 * age + 1; }

/// Registers SA kernels `sa.frame<age>.{kernel,bias}` for ages 0..frames-1
/// and the TM projection `tm.wa` (rows x cols x 2C, zero-initialised so the
/// first attention maps are uniform).
void init_st_fusion(ParameterStore& params, std::size_t channels, std::size_t frames, std::size_t rows,
                    std::size_t cols, bool with_sa = true, bool with_tm = true);

/// Kernel sizes registered in `params`, ordered by frame age.
std::vector<std::size_t> sa_kernel_schedule(const ParameterStore& params);

/// f + ReLU(conv(f, kernel_age, 2*age+1)).
Tensor spatial_aggregate(Tape& tape, const Tensor& features, std::size_t age, const ParameterStore& params);

/// Per-pixel softmax over preceding frames of the projected
/// [current || previous_i] features. Returns (#previous) x H x W.
Tensor temporal_coefficients(Tape& tape, const Tensor& current, const std::vector<Tensor>& previous,
                             const Tensor& projection);

/// current + sum_i A_i (.) previous_i.
Tensor temporal_merge(Tape& tape, const Tensor& current, const std::vector<Tensor>& previous,
                      const Tensor& coefficients);

struct FusionFlags {
  bool use_sa = true;
  bool use_tm = true;
};

struct FusionResult {
  Tensor fused;
  /// Temporal coefficients; undefined when TM did not run.
  Tensor attention;
};

/// Spatial-temporal fusion of per-frame features ordered oldest to newest.
/// Preceding frames only enter through TM, so with TM disabled (or a single
/// frame) the result depends on the newest frame alone.
FusionResult st_fuse(Tape& tape, const std::vector<Tensor>& features, const ParameterStore& params,
                     const FusionFlags& flags = {});

/// Stacks the points of every frame, keeping each point's dt.
PointCloud data_fusion_baseline(const std::vector<PointCloud>& frames);

/// Registers the 1x1 conv `ff.{kernel,bias}` mapping frames*C -> C. The
/// newest frame's block starts as identity.
void init_feature_fusion(ParameterStore& params, std::size_t channels, std::size_t frames);

/// Channel-concatenates all frames (oldest first) then applies the 1x1 conv.
Tensor feature_fusion_baseline(Tape& tape, const std::vector<Tensor>& features, const Tensor& kernel,
                               const Tensor& bias);

/// Mean per-pixel entropy of a coefficient tensor (nats).
double attention_entropy(const Tensor& coefficients);

}  // namespace stf
