#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stf/params.hpp"

namespace stf {

struct ParameterGradError {
  std::string name;
  std::size_t coordinates_checked = 0;
  /// max over sampled coordinates of |analytic - numeric| / max(1, |analytic|);
  /// +inf when the tensor or its gradient is not finite.
  double max_rel_error = 0.0;
  bool finite = true;
};

struct GradCheckReport {
  std::vector<ParameterGradError> entries;

  bool passed(double tolerance) const;
  double worst() const;
  /// Names of entries failing `tolerance`.
  std::vector<std::string> failures(double tolerance) const;
};

struct GradCheckOptions {
  double eps = 1e-5;
  /// Coordinates sampled per tensor; tensors at or below this size are
  /// checked exhaustively.
  std::size_t samples_per_tensor = 32;
  std::uint64_t sample_seed = 7;
};

/// Builds the computation on a fresh tape and returns a scalar.
using ScalarComputation = std::function<Tensor(Tape&)>;

/// Compares reverse-mode gradients of `fn` against central differences for
/// every tensor in `params`. Throws ContractError if fn is not scalar.
GradCheckReport finite_diff_check(const ScalarComputation& fn, ParameterStore& params,
                                  const GradCheckOptions& options = {});

}  // namespace stf
