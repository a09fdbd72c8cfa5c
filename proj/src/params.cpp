#include "stf/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "stf/rng.hpp"

namespace stf {

double CounterRng::normal() noexcept {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

double CounterRng::truncated_normal(double limit) noexcept {
  for (;;) {
    const double v = normal();
    if (std::abs(v) <= limit) return v;
  }
}

Tensor& ParameterStore::add(const std::string& name, Tensor value) {
  if (frozen_) throw LifecycleError("cannot add '" + name + "' to a frozen parameter store");
  if (tensors_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  return tensors_.emplace(name, std::move(value)).first->second;
}

Tensor& ParameterStore::add_zeros(const std::string& name, Shape shape) {
  return add(name, Tensor::zeros(std::move(shape)));
}

Tensor& ParameterStore::add_constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value));
}

Tensor& ParameterStore::add_uniform(const std::string& name, Shape shape, double bound) {
  Tensor t(std::move(shape));
  CounterRng rng(seed_, fnv1a(name));
  for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return add(name, std::move(t));
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : tensors_) t.zero_grad();
}

void ParameterStore::freeze() {
  for (auto& [_, t] : tensors_) {
    t.set_requires_grad(false);
    t.drop_grad();
  }
  frozen_ = true;
}

namespace {

constexpr char kMagic[8] = {'S', 'T', 'F', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    os.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <typename T>
T read_le(std::istream& is) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw std::runtime_error("truncated checkpoint");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

}  // namespace

void ParameterStore::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_le<std::uint8_t>(os, frozen_ ? 1 : 0);
  write_le<std::uint64_t>(os, seed_);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) write_le<std::uint64_t>(os, d);
    for (double v : t.data()) write_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

ParameterStore ParameterStore::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a parameter checkpoint: " + path.string());
  }
  const bool frozen = read_le<std::uint8_t>(is) != 0;
  ParameterStore store(read_le<std::uint64_t>(is));
  const auto count = read_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(read_le<std::uint32_t>(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape shape(read_le<std::uint32_t>(is));
    for (auto& d : shape) d = read_le<std::uint64_t>(is);
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = std::bit_cast<double>(read_le<std::uint64_t>(is));
    store.add(name, Tensor(std::move(shape), std::move(data)));
  }
  if (frozen) store.freeze();
  return store;
}

bool ParameterStore::identical_to(const ParameterStore& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  auto it = other.tensors_.begin();
  for (const auto& [name, t] : tensors_) {
    if (name != it->first || t.shape() != it->second.shape()) return false;
    if (std::memcmp(t.data().data(), it->second.data().data(), t.numel() * sizeof(double)) != 0) {
      return false;
    }
    ++it;
  }
  return true;
}

double SgdMomentum::step(ParameterStore& params, double learning_rate, std::size_t batch) {
  double inv = 1.0 / static_cast<double>(batch == 0 ? 1 : batch);
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq) * inv;
  if (clip_norm_ > 0 && norm > clip_norm_) inv *= clip_norm_ / norm;
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    Tensor p = t;
    auto& v = velocity_[name];
    if (v.empty()) v.assign(p.numel(), 0.0);
    const auto g = p.grad();
    auto d = p.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i] * inv;
      d[i] -= learning_rate * v[i];
    }
  }
  return norm;
}

}  // namespace stf
