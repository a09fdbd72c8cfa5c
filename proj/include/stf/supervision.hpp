#pragma once

#include <vector>

#include "stf/bev.hpp"
#include "stf/params.hpp"

namespace stf {

/// Background floor applied to object weight maps.
inline constexpr double kWeightMapFloor = 1e-4;

/// W(i,j) = max(floor, max_b exp(-((row_b - i)^2 + (col_b - j)^2) / (2 sigma^2))),
/// with (row_b, col_b) the cell holding box b's centre and sigma in cells.
/// The exponent is negative: the weight decays away from object centres.
Tensor gaussian_weight_map(const std::vector<ObjectTrack>& gt, const GridSpec& grid, double sigma = 7.0,
                           double floor = kWeightMapFloor);

/// Registers phi1 (`sup.phi1.*`, 1x1 conv, identity-initialised) and phi2
/// (`sup.phi2.layer<i>.*`, `depth` layers of `kernel` x `kernel` convs).
void init_supervision(ParameterStore& params, std::size_t channels, std::size_t depth = 2,
                      std::size_t kernel = 3);

/// phi1 applied to fused features.
Tensor project_phi1(Tape& tape, const Tensor& fused, const ParameterStore& params);
/// phi2 decoder: conv, ReLU between layers, no activation after the last.
Tensor decode_phi2(Tape& tape, const Tensor& projected, const ParameterStore& params);

/// Mean over positions of ||phi1(f_hat) - f*||^2.
Tensor scene_distill_loss(Tape& tape, const Tensor& fused, const Tensor& teacher, const ParameterStore& params);

/// Mean over positions of ||phi2(phi1(f_hat)) - f*||^2 * W.
Tensor object_recon_loss(Tape& tape, const Tensor& fused, const Tensor& teacher, const Tensor& weight_map,
                         const ParameterStore& params);

struct SupervisionLoss {
  Tensor total;    // alpha * distill + beta * recon
  Tensor distill;
  Tensor recon;
};

/// alpha * L_d + beta * L_r, with phi1 evaluated once and shared.
SupervisionLoss semantic_supervision_loss(Tape& tape, const Tensor& fused, const Tensor& teacher,
                                          const Tensor& weight_map, const ParameterStore& params,
                                          double alpha = 1.0, double beta = 0.1);

}  // namespace stf
