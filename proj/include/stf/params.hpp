#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stf/tensor.hpp"

namespace stf {

/// Raised when frozen weights are used or modified out of order.
class LifecycleError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Named learnable tensors, enumerated in sorted-name order.
///
/// Random initialisers draw from a stream keyed by (seed, name), so a
/// tensor's initial values do not depend on what else is registered.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  Tensor& add(const std::string& name, Tensor value);
  Tensor& add_zeros(const std::string& name, Shape shape);
  Tensor& add_constant(const std::string& name, Shape shape, double value);
  /// Uniform in [-bound, bound].
  Tensor& add_uniform(const std::string& name, Shape shape, double bound);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return tensors_.size(); }
  bool empty() const noexcept { return tensors_.empty(); }
  std::size_t total_elements() const;

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  void zero_grad();

  /// Stops gradient recording through every tensor; further add() throws.
  void freeze();
  bool frozen() const noexcept { return frozen_; }

  /// Binary checkpoint: name-sorted tensors with shape headers and
  /// little-endian float64 payloads, plus the frozen flag and seed.
  void save(const std::filesystem::path& path) const;
  static ParameterStore load(const std::filesystem::path& path);

  /// Bitwise equality of names, shapes, and values.
  bool identical_to(const ParameterStore& other) const;

 private:
  std::uint64_t seed_;
  bool frozen_ = false;
  std::map<std::string, Tensor> tensors_;
};

/// SGD with classical momentum: v <- mu*v + g/n; p <- p - lr*v. With a
/// positive clip_norm, g/n is rescaled so its global L2 norm is at most
/// clip_norm.
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9, double clip_norm = 0.0)
      : momentum_(momentum), clip_norm_(clip_norm) {}

  /// Applies one step using the accumulated grads divided by `batch`, and
  /// returns the global norm of g/n before clipping.
  double step(ParameterStore& params, double learning_rate, std::size_t batch);

 private:
  double momentum_;
  double clip_norm_;
  std::map<std::string, std::vector<double>> velocity_;
};

}  // namespace stf
