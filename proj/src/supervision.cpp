#include "stf/supervision.hpp"

#include <cmath>

#include "stf/ops.hpp"

namespace stf {

Tensor gaussian_weight_map(const std::vector<ObjectTrack>& gt, const GridSpec& grid, double sigma,
                           double floor) {
  if (!(sigma > 0)) throw std::invalid_argument("gaussian_weight_map: sigma must be positive");
  Tensor map = Tensor::full({grid.rows, grid.cols}, floor);
  auto w = map.mutable_data();
  const double denom = 2.0 * sigma * sigma;
  for (const auto& box : gt) {
    const auto [row_f, col_f] = grid.to_cell_coords(box.pose.x, box.pose.y);
    const double crow = std::floor(row_f), ccol = std::floor(col_f);
    for (std::size_t i = 0; i < grid.rows; ++i) {
      const double di = crow - static_cast<double>(i);
      for (std::size_t j = 0; j < grid.cols; ++j) {
        const double dj = ccol - static_cast<double>(j);
        const double v = std::exp(-(di * di + dj * dj) / denom);
        double& cell = w[i * grid.cols + j];
        if (v > cell) cell = v;
      }
    }
  }
  return map;
}

namespace {

std::string phi2_name(std::size_t layer, const char* what) {
  return "sup.phi2.layer" + std::to_string(layer) + "." + what;
}

}  // namespace

void init_supervision(ParameterStore& params, std::size_t channels, std::size_t depth, std::size_t kernel) {
  Tensor phi1({channels, channels, 1, 1});
  for (std::size_t c = 0; c < channels; ++c) phi1[c * channels + c] = 1.0;
  params.add("sup.phi1.kernel", phi1);
  params.add_zeros("sup.phi1.bias", {channels});
  for (std::size_t l = 0; l < depth; ++l) {
    params.add_uniform(phi2_name(l, "kernel"), {channels, channels, kernel, kernel},
                       std::sqrt(6.0 / static_cast<double>(channels * kernel * kernel)));
    params.add_zeros(phi2_name(l, "bias"), {channels});
  }
}

Tensor project_phi1(Tape& tape, const Tensor& fused, const ParameterStore& params) {
  return ops::conv2d_same(tape, fused, params.get("sup.phi1.kernel"), params.get("sup.phi1.bias"), 1);
}

Tensor decode_phi2(Tape& tape, const Tensor& projected, const ParameterStore& params) {
  Tensor x = projected;
  for (std::size_t l = 0; params.contains(phi2_name(l, "kernel")); ++l) {
    if (l > 0) x = ops::relu(tape, x);
    x = ops::conv2d_same(tape, x, params.get(phi2_name(l, "kernel")), params.get(phi2_name(l, "bias")));
  }
  return x;
}

Tensor scene_distill_loss(Tape& tape, const Tensor& fused, const Tensor& teacher, const ParameterStore& params) {
  return ops::weighted_squared_error(tape, project_phi1(tape, fused, params), teacher);
}

Tensor object_recon_loss(Tape& tape, const Tensor& fused, const Tensor& teacher, const Tensor& weight_map,
                         const ParameterStore& params) {
  const Tensor decoded = decode_phi2(tape, project_phi1(tape, fused, params), params);
  return ops::weighted_squared_error(tape, decoded, teacher, weight_map);
}

SupervisionLoss semantic_supervision_loss(Tape& tape, const Tensor& fused, const Tensor& teacher,
                                          const Tensor& weight_map, const ParameterStore& params,
                                          double alpha, double beta) {
  const Tensor projected = project_phi1(tape, fused, params);
  SupervisionLoss out;
  out.distill = ops::weighted_squared_error(tape, projected, teacher);
  out.recon = ops::weighted_squared_error(tape, decode_phi2(tape, projected, params), teacher, weight_map);
  out.total = ops::add(tape, ops::scale(tape, out.distill, alpha), ops::scale(tape, out.recon, beta));
  return out;
}

}  // namespace stf
