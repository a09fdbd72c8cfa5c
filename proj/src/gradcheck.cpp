#include "stf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "stf/rng.hpp"

namespace stf {

bool GradCheckReport::passed(double tolerance) const { return failures(tolerance).empty(); }

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

std::vector<std::string> GradCheckReport::failures(double tolerance) const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (!e.finite || !(e.max_rel_error <= tolerance)) out.push_back(e.name);
  }
  return out;
}

namespace {

double evaluate(const ScalarComputation& fn) {
  Tape tape;
  const Tensor out = fn(tape);
  if (out.numel() != 1) {
    throw ContractError("finite_diff_check: computation must return a scalar, got " +
                        shape_to_string(out.shape()));
  }
  return out.item();
}

std::vector<std::size_t> sample_coordinates(std::size_t numel, std::size_t samples,
                                            std::uint64_t key) {
  std::vector<std::size_t> idx(numel);
  std::iota(idx.begin(), idx.end(), 0);
  if (numel <= samples) return idx;
  CounterRng rng(key, 0);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t j = i + rng.below(numel - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(samples);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarComputation& fn, ParameterStore& params,
                                  const GradCheckOptions& options) {
  params.zero_grad();
  {
    Tape tape;
    const Tensor loss = fn(tape);
    if (loss.numel() != 1) {
      throw ContractError("finite_diff_check: computation must return a scalar, got " +
                          shape_to_string(loss.shape()));
    }
    tape.backward(loss);
  }

  GradCheckReport report;
  for (const auto& name : params.names()) {
    Tensor t = params.get(name);
    ParameterGradError entry{name, 0, 0.0, true};
    const auto grad = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                   : std::vector<double>(t.numel(), 0.0);
    const bool finite = t.all_finite() &&
                        std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); });
    if (!finite) {
      entry.finite = false;
      entry.max_rel_error = std::numeric_limits<double>::infinity();
      report.entries.push_back(entry);
      continue;
    }
    auto values = t.mutable_data();
    for (std::size_t i : sample_coordinates(t.numel(), options.samples_per_tensor,
                                            derive_key(options.sample_seed, fnv1a(name)))) {
      const double saved = values[i];
      values[i] = saved + options.eps;
      const double plus = evaluate(fn);
      values[i] = saved - options.eps;
      const double minus = evaluate(fn);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      double err = std::abs(grad[i] - numeric) / std::max(1.0, std::abs(grad[i]));
      if (!std::isfinite(err)) {
        err = std::numeric_limits<double>::infinity();
        entry.finite = false;
      }
      entry.max_rel_error = std::max(entry.max_rel_error, err);
      ++entry.coordinates_checked;
    }
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace stf
