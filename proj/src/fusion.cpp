#include "stf/fusion.hpp"

#include <cmath>
#include <string>

#include "stf/ops.hpp"
#include "stf/rng.hpp"

namespace stf {

namespace {

std::string sa_name(std::size_t age, const char* what) {
  return "sa.frame" + std::to_string(age) + "." + what;
}

}  // namespace

void init_st_fusion(ParameterStore& params, std::size_t channels, std::size_t frames, std::size_t rows,
                    std::size_t cols, bool with_sa, bool with_tm) {
  if (frames == 0) throw std::invalid_argument("st-fusion needs at least one frame");
  if (with_sa) {
    for (std::size_t age = 0; age < frames; ++age) {
      const std::size_t m = sa_kernel_size(age);
      params.add_uniform(sa_name(age, "kernel"), {channels, channels, m, m},
                         1.0 / std::sqrt(static_cast<double>(channels * m * m)));
      params.add_zeros(sa_name(age, "bias"), {channels});
    }
  }
  if (with_tm && frames > 1) params.add_zeros("tm.wa", {rows, cols, 2 * channels});
}

std::vector<std::size_t> sa_kernel_schedule(const ParameterStore& params) {
  std::vector<std::size_t> sizes;
  for (std::size_t age = 0; params.contains(sa_name(age, "kernel")); ++age) {
    sizes.push_back(params.get(sa_name(age, "kernel")).dim(3));
  }
  return sizes;
}

Tensor spatial_aggregate(Tape& tape, const Tensor& features, std::size_t age, const ParameterStore& params) {
  const auto name = sa_name(age, "kernel");
  if (!params.contains(name)) {
    throw std::out_of_range("spatial_aggregate: no SA kernel for frame age " + std::to_string(age));
  }
  const Tensor branch = ops::relu(
      tape, ops::conv2d_same(tape, features, params.get(name), params.get(sa_name(age, "bias")),
                             sa_kernel_size(age)));
  return ops::add(tape, features, branch);
}

Tensor temporal_coefficients(Tape& tape, const Tensor& current, const std::vector<Tensor>& previous,
                             const Tensor& projection) {
  if (previous.empty()) {
    throw ContractError("temporal_coefficients: needs at least one preceding frame");
  }
  std::vector<Tensor> logits;
  logits.reserve(previous.size());
  for (const auto& prev : previous) {
    logits.push_back(ops::pixel_project(tape, ops::concat_channels(tape, current, prev), projection));
  }
  return ops::softmax_over_axis(tape, ops::stack(tape, logits), 0);
}

Tensor temporal_merge(Tape& tape, const Tensor& current, const std::vector<Tensor>& previous,
                      const Tensor& coefficients) {
  if (coefficients.rank() != 3 || coefficients.dim(0) != previous.size()) {
    throw ShapeError("temporal_merge: coefficients " + shape_to_string(coefficients.shape()) +
                     " do not match " + std::to_string(previous.size()) + " preceding frames");
  }
  Tensor out = current;
  for (std::size_t i = 0; i < previous.size(); ++i) {
    if (previous[i].shape() != current.shape()) {
      throw ShapeError("temporal_merge: frame " + shape_to_string(previous[i].shape()) +
                       " does not match current " + shape_to_string(current.shape()));
    }
    out = ops::add(tape, out,
                   ops::hadamard_broadcast(tape, ops::select(tape, coefficients, i), previous[i]));
  }
  return out;
}

FusionResult st_fuse(Tape& tape, const std::vector<Tensor>& features, const ParameterStore& params,
                     const FusionFlags& flags) {
  if (features.empty()) throw ContractError("st_fuse: empty frame list");
  const std::size_t n = features.size();
  auto aggregate = [&](std::size_t age) {
    const Tensor& f = features[n - 1 - age];
    return flags.use_sa ? spatial_aggregate(tape, f, age, params) : f;
  };
  const Tensor current = aggregate(0);
  if (!flags.use_tm || n == 1) return {current, Tensor()};

  std::vector<Tensor> previous;
  previous.reserve(n - 1);
  for (std::size_t age = 1; age < n; ++age) previous.push_back(aggregate(age));
  Tensor coeffs = temporal_coefficients(tape, current, previous, params.get("tm.wa"));
  Tensor fused = temporal_merge(tape, current, previous, coeffs);
  return {fused, coeffs};
}

PointCloud data_fusion_baseline(const std::vector<PointCloud>& frames) {
  PointCloud out;
  std::size_t total = 0;
  for (const auto& f : frames) total += f.size();
  out.points.reserve(total);
  for (const auto& f : frames) out.points.insert(out.points.end(), f.points.begin(), f.points.end());
  return out;
}

void init_feature_fusion(ParameterStore& params, std::size_t channels, std::size_t frames) {
  const std::size_t in = channels * frames;
  const std::size_t newest = channels * (frames - 1);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  CounterRng rng(params.seed(), fnv1a("ff.kernel"));
  Tensor kernel({channels, in, 1, 1});
  auto k = kernel.mutable_data();
  for (std::size_t o = 0; o < channels; ++o) {
    for (std::size_t i = 0; i < in; ++i) {
      const double noise = rng.uniform(-bound, bound);
      k[o * in + i] = i >= newest ? (i - newest == o ? 1.0 : 0.0) : noise;
    }
  }
  params.add("ff.kernel", kernel);
  params.add_zeros("ff.bias", {channels});
}

Tensor feature_fusion_baseline(Tape& tape, const std::vector<Tensor>& features, const Tensor& kernel,
                               const Tensor& bias) {
  if (features.empty()) throw ContractError("feature_fusion_baseline: empty frame list");
  const Tensor stacked = features.size() == 1 ? features.front() : ops::concat_channels(tape, features);
  return ops::conv2d_same(tape, stacked, kernel, bias, 1);
}

double attention_entropy(const Tensor& coefficients) {
  if (!coefficients.defined()) return 0.0;
  const std::size_t k = coefficients.dim(0);
  const std::size_t plane = coefficients.numel() / k;
  const auto a = coefficients.data();
  double total = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    double h = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double v = a[i * plane + p];
      if (v > 0) h -= v * std::log(v);
    }
    total += h;
  }
  return total / static_cast<double>(plane);
}

}  // namespace stf
