#include "stf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

namespace stf::ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_to_string(t.shape()));
  }
}

// Accumulates grad into `dst` when it takes part in differentiation.
template <typename F>
void accumulate(Tensor dst, F&& fn) {
  if (!dst.requires_grad()) return;
  fn(dst.grad_mut());
}

// Zero-padded copy of a C x H x W map with `pad` cells on every side.
std::vector<double> pad_map(const double* in, std::size_t c, std::size_t h, std::size_t w, std::size_t pad) {
  const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
  std::vector<double> out(c * hp * wp, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      std::copy_n(in + (ch * h + y) * w, w, out.data() + (ch * hp + y + pad) * wp + pad);
    }
  }
  return out;
}

constexpr std::size_t kCoBlock = 4;
constexpr std::size_t kXBlock = 8;

typedef double v4d __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
  v4d v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

// acc[j][t] = sum over (ci, ky, kx) of k[co0 + j][ci][ky][kx] * P[ci][y + ky][x0 + t + kx]
// for NB output channels and kXBlock columns.
template <std::size_t NB>
void correlate_tile(const double* padded, std::size_t cin, std::size_t hp, std::size_t wp, const double* k,
                    std::size_t co0, std::size_t m, std::size_t y, std::size_t x0, double (&acc)[kCoBlock][kXBlock]) {
  const std::size_t mm = m * m;
  v4d lo[NB], hi[NB];
  for (std::size_t j = 0; j < NB; ++j) lo[j] = hi[j] = v4d{0, 0, 0, 0};
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t ky = 0; ky < m; ++ky) {
      const double* prow = padded + (ci * hp + y + ky) * wp + x0;
      const double* krow = k + ((co0 * cin + ci) * m + ky) * m;
      for (std::size_t kx = 0; kx < m; ++kx) {
        const v4d p0 = load4(prow + kx), p1 = load4(prow + kx + 4);
        for (std::size_t j = 0; j < NB; ++j) {
          const double wv = krow[j * cin * mm + kx];
          lo[j] += wv * p0;
          hi[j] += wv * p1;
        }
      }
    }
  }
  for (std::size_t j = 0; j < NB; ++j) {
    std::memcpy(&acc[j][0], &lo[j], sizeof(v4d));
    std::memcpy(&acc[j][4], &hi[j], sizeof(v4d));
  }
}

// Scalar version for the ragged right edge.
template <std::size_t NB>
void correlate_point(const double* padded, std::size_t cin, std::size_t hp, std::size_t wp, const double* k,
                     std::size_t co0, std::size_t m, std::size_t y, std::size_t x, double* acc) {
  const std::size_t mm = m * m;
  for (std::size_t j = 0; j < NB; ++j) acc[j] = 0.0;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t ky = 0; ky < m; ++ky) {
      const double* prow = padded + (ci * hp + y + ky) * wp + x;
      const double* krow = k + ((co0 * cin + ci) * m + ky) * m;
      for (std::size_t kx = 0; kx < m; ++kx) {
        for (std::size_t j = 0; j < NB; ++j) acc[j] += krow[j * cin * mm + kx] * prow[kx];
      }
    }
  }
}

template <std::size_t NB>
void correlate_rows(const double* padded, std::size_t cin, std::size_t h, std::size_t w, const double* k,
                    std::size_t co0, std::size_t m, const double* bias, double* out, bool accumulate_out) {
  const std::size_t pad = m / 2, hp = h + 2 * pad, wp = w + 2 * pad;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x0 = 0; x0 < w; x0 += kXBlock) {
      const std::size_t xb = std::min(kXBlock, w - x0);
      double acc[kCoBlock][kXBlock] = {};
      if (xb == kXBlock) {
        correlate_tile<NB>(padded, cin, hp, wp, k, co0, m, y, x0, acc);
      } else {
        for (std::size_t t = 0; t < xb; ++t) {
          double one[kCoBlock];
          correlate_point<NB>(padded, cin, hp, wp, k, co0, m, y, x0 + t, one);
          for (std::size_t j = 0; j < NB; ++j) acc[j][t] = one[j];
        }
      }
      for (std::size_t j = 0; j < NB; ++j) {
        double* orow = out + ((co0 + j) * h + y) * w + x0;
        const double b = bias ? bias[co0 + j] : 0.0;
        for (std::size_t t = 0; t < xb; ++t) orow[t] = (accumulate_out ? orow[t] : b) + acc[j][t];
      }
    }
  }
}

// Same-padded cross-correlation, out[co] = bias[co] + sum_ci k[co][ci] * in[ci].
// With accumulate_out the result is added to `out` and bias is ignored.
void correlate_same(const double* in, std::size_t cin, std::size_t h, std::size_t w, const double* k,
                    std::size_t cout, std::size_t m, const double* bias, double* out, bool accumulate_out) {
  const std::vector<double> padded = pad_map(in, cin, h, w, m / 2);
  std::size_t co0 = 0;
  for (; co0 + kCoBlock <= cout; co0 += kCoBlock) {
    correlate_rows<kCoBlock>(padded.data(), cin, h, w, k, co0, m, bias, out, accumulate_out);
  }
  for (; co0 < cout; ++co0) correlate_rows<1>(padded.data(), cin, h, w, k, co0, m, bias, out, accumulate_out);
}

// gk[co][ci][ky][kx] += sum_{y,x} g[co][y][x] * P[ci][y + ky][x + kx]. Partial
// sums are kept per column lane so the inner loop is elementwise.
void kernel_grad_same(const double* in, std::size_t cin, std::size_t h, std::size_t w, const double* g,
                      std::size_t cout, std::size_t m, double* gk) {
  const std::size_t pad = m / 2, hp = h + 2 * pad, wp = w + 2 * pad;
  const std::vector<double> padded = pad_map(in, cin, h, w, pad);
  const std::size_t wv = w - w % kXBlock;
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t ky = 0; ky < m; ++ky) {
        double* dst = gk + ((co * cin + ci) * m + ky) * m;
        for (std::size_t kx = 0; kx < m; ++kx) {
          v4d a0{0, 0, 0, 0}, a1{0, 0, 0, 0};
          double tail = 0.0;
          for (std::size_t y = 0; y < h; ++y) {
            const double* grow = g + (co * h + y) * w;
            const double* prow = padded.data() + (ci * hp + y + ky) * wp + kx;
            for (std::size_t x0 = 0; x0 < wv; x0 += kXBlock) {
              a0 += load4(grow + x0) * load4(prow + x0);
              a1 += load4(grow + x0 + 4) * load4(prow + x0 + 4);
            }
            for (std::size_t x = wv; x < w; ++x) tail += grow[x] * prow[x];
          }
          const v4d v = a0 + a1;
          dst[kx] += (v[0] + v[1]) + (v[2] + v[3]) + tail;
        }
      }
    }
  }
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape(), any_requires_grad({&a, &b}));
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  tape.record(out, [a, b, out] {
    auto g = out.grad();
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    accumulate(b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    });
  });
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape(), any_requires_grad({&a, &b}));
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  tape.record(out, [a, b, out] {
    auto g = out.grad();
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    accumulate(b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  });
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  Tensor out(a.shape(), a.requires_grad());
  auto o = out.mutable_data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  tape.record(out, [a, out, factor] {
    auto g = out.grad();
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  });
  return out;
}

Tensor sum(Tape& tape, const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out({1}, {s}, a.requires_grad());
  tape.record(out, [a, out] {
    const double g = out.grad()[0];
    accumulate(a, [&](std::span<double> ga) {
      for (double& v : ga) v += g;
    });
  });
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out(x.shape(), x.requires_grad());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
  tape.record(out, [x, out] {
    auto g = out.grad();
    auto in = x.data();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (in[i] > 0.0) gx[i] += g[i];
      }
    });
  });
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out(x.shape(), x.requires_grad());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = in[i];
    // Branch keeps exp() from overflowing for large |v|.
    o[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  tape.record(out, [x, out] {
    auto g = out.grad();
    auto y = out.data();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
  });
  return out;
}

Tensor conv2d_same(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  require_rank(kernel, 4, "conv2d_same", "kernel");
  return conv2d_same(tape, input, kernel, bias, kernel.dim(3));
}

Tensor conv2d_same(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
                   std::size_t m) {
  if (m % 2 == 0) {
    throw std::invalid_argument("conv2d_same: kernel size must be odd, got " + std::to_string(m));
  }
  require_rank(input, 3, "conv2d_same", "input");
  require_rank(kernel, 4, "conv2d_same", "kernel");
  require_rank(bias, 1, "conv2d_same", "bias");
  const std::size_t cin = input.dim(0);
  const std::size_t h = input.dim(1);
  const std::size_t w = input.dim(2);
  const std::size_t cout = kernel.dim(0);
  if (kernel.dim(1) != cin || kernel.dim(2) != m || kernel.dim(3) != m) {
    throw ShapeError("conv2d_same: kernel " + shape_to_string(kernel.shape()) + " incompatible with input " +
                     shape_to_string(input.shape()) + " and m=" + std::to_string(m));
  }
  if (bias.dim(0) != cout) {
    throw ShapeError("conv2d_same: bias " + shape_to_string(bias.shape()) + " does not match " +
                     std::to_string(cout) + " output channels");
  }

  Tensor out({cout, h, w}, any_requires_grad({&input, &kernel, &bias}));
  correlate_same(input.data().data(), cin, h, w, kernel.data().data(), cout, m, bias.data().data(),
                 out.mutable_data().data(), false);

  tape.record(out, [=] {
    const auto g = out.grad();
    if (input.requires_grad()) {
      // Input grad is the same-padded correlation of the output grad with the
      // kernel flipped in space and transposed in channels.
      std::vector<double> flipped(kernel.numel());
      const auto k = kernel.data();
      for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t t = 0; t < m * m; ++t) {
            flipped[(ci * cout + co) * m * m + (m * m - 1 - t)] = k[(co * cin + ci) * m * m + t];
          }
        }
      }
      Tensor in_t = input;
      correlate_same(g.data(), cout, h, w, flipped.data(), cin, m, nullptr, in_t.grad_mut().data(), true);
    }
    if (kernel.requires_grad()) {
      Tensor k_t = kernel;
      kernel_grad_same(input.data().data(), cin, h, w, g.data(), cout, m, k_t.grad_mut().data());
    }
    if (bias.requires_grad()) {
      Tensor b_t = bias;
      auto gb = b_t.grad_mut();
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (std::size_t i = 0; i < h * w; ++i) acc += g[co * h * w + i];
        gb[co] += acc;
      }
    }
  });
  return out;
}

Tensor softmax_over_axis(Tape& tape, const Tensor& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw ShapeError("softmax_over_axis: axis " + std::to_string(axis) + " invalid for " +
                     shape_to_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];

  Tensor out(shape, x.requires_grad());
  auto o = out.mutable_data();
  const auto in = x.data();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t b = 0; b < inner; ++b) {
      const std::size_t base = a * n * inner + b;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, in[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(in[base + i * inner] - mx);
        o[base + i * inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < n; ++i) o[base + i * inner] /= z;
    }
  }
  tape.record(out, [x, out, outer, inner, n] {
    const auto g = out.grad();
    const auto y = out.data();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t b = 0; b < inner; ++b) {
          const std::size_t base = a * n * inner + b;
          double dot = 0.0;
          for (std::size_t i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = base + i * inner;
            gx[j] += y[j] * (g[j] - dot);
          }
        }
      }
    });
  });
  return out;
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  return concat_channels(tape, std::vector<Tensor>{a, b});
}

Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const std::size_t h = parts.front().dim(1);
  const std::size_t w = parts.front().dim(2);
  std::size_t channels = 0;
  bool grad = false;
  for (const auto& p : parts) {
    require_rank(p, 3, "concat_channels", "operand");
    if (p.dim(1) != h || p.dim(2) != w) {
      throw ShapeError("concat_channels: spatial mismatch " + shape_to_string(parts.front().shape()) +
                       " vs " + shape_to_string(p.shape()));
    }
    channels += p.dim(0);
    grad = grad || p.requires_grad();
  }
  Tensor out({channels, h, w}, grad);
  auto o = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), o.begin() + offset);
    offset += p.numel();
  }
  tape.record(out, [parts, out] {
    const auto g = out.grad();
    std::size_t offset = 0;
    for (const auto& p : parts) {
      accumulate(p, [&](std::span<double> gp) {
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      });
      offset += p.numel();
    }
  });
  return out;
}

Tensor slice_channels(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 3, "slice_channels", "input");
  if (count == 0 || begin + count > x.dim(0)) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + shape_to_string(x.shape()));
  }
  const std::size_t plane = x.dim(1) * x.dim(2);
  Tensor out({count, x.dim(1), x.dim(2)}, x.requires_grad());
  const auto in = x.data();
  std::copy(in.begin() + begin * plane, in.begin() + (begin + count) * plane,
            out.mutable_data().begin());
  tape.record(out, [x, out, begin, plane] {
    const auto g = out.grad();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[begin * plane + i] += g[i];
    });
  });
  return out;
}

Tensor hadamard_broadcast(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "hadamard_broadcast", "coefficient map");
  require_rank(b, 3, "hadamard_broadcast", "feature map");
  if (a.dim(0) != b.dim(1) || a.dim(1) != b.dim(2)) {
    throw ShapeError("hadamard_broadcast: map " + shape_to_string(a.shape()) +
                     " does not match features " + shape_to_string(b.shape()));
  }
  const std::size_t c = b.dim(0);
  const std::size_t plane = a.numel();
  Tensor out(b.shape(), any_requires_grad({&a, &b}));
  auto o = out.mutable_data();
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) o[ch * plane + i] = av[i] * bv[ch * plane + i];
  }
  tape.record(out, [a, b, out, c, plane] {
    const auto g = out.grad();
    const auto av = a.data();
    const auto bv = b.data();
    accumulate(a, [&](std::span<double> ga) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) ga[i] += g[ch * plane + i] * bv[ch * plane + i];
      }
    });
    accumulate(b, [&](std::span<double> gb) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) gb[ch * plane + i] += g[ch * plane + i] * av[i];
      }
    });
  });
  return out;
}

Tensor stack(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  bool grad = false;
  for (const auto& p : parts) {
    require_same_shape(parts.front(), p, "stack");
    grad = grad || p.requires_grad();
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), parts.front().shape().begin(), parts.front().shape().end());
  Tensor out(shape, grad);
  auto o = out.mutable_data();
  const std::size_t n = parts.front().numel();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy(parts[i].data().begin(), parts[i].data().end(), o.begin() + i * n);
  }
  tape.record(out, [parts, out, n] {
    const auto g = out.grad();
    for (std::size_t i = 0; i < parts.size(); ++i) {
      accumulate(parts[i], [&](std::span<double> gp) {
        for (std::size_t j = 0; j < n; ++j) gp[j] += g[i * n + j];
      });
    }
  });
  return out;
}

Tensor select(Tape& tape, const Tensor& x, std::size_t index) {
  if (x.rank() < 2) throw ShapeError("select: needs rank >= 2, got " + shape_to_string(x.shape()));
  if (index >= x.dim(0)) {
    throw ShapeError("select: index " + std::to_string(index) + " out of range for " +
                     shape_to_string(x.shape()));
  }
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t n = shape_numel(shape);
  Tensor out(shape, x.requires_grad());
  std::copy(x.data().begin() + index * n, x.data().begin() + (index + 1) * n,
            out.mutable_data().begin());
  tape.record(out, [x, out, index, n] {
    const auto g = out.grad();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t j = 0; j < n; ++j) gx[index * n + j] += g[j];
    });
  });
  return out;
}

Tensor pixel_project(Tape& tape, const Tensor& x, const Tensor& weight) {
  require_rank(x, 3, "pixel_project", "input");
  require_rank(weight, 3, "pixel_project", "weight");
  const std::size_t d = x.dim(0);
  const std::size_t h = x.dim(1);
  const std::size_t w = x.dim(2);
  if (weight.dim(0) != h || weight.dim(1) != w || weight.dim(2) != d) {
    throw ShapeError("pixel_project: weight " + shape_to_string(weight.shape()) +
                     " must be H x W x D for input " + shape_to_string(x.shape()));
  }
  const std::size_t plane = h * w;
  Tensor out({h, w}, any_requires_grad({&x, &weight}));
  auto o = out.mutable_data();
  const auto xv = x.data();
  const auto wv = weight.data();
  for (std::size_t p = 0; p < plane; ++p) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += xv[c * plane + p] * wv[p * d + c];
    o[p] = acc;
  }
  tape.record(out, [x, weight, out, d, plane] {
    const auto g = out.grad();
    const auto xv = x.data();
    const auto wv = weight.data();
    accumulate(x, [&](std::span<double> gx) {
      for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t c = 0; c < d; ++c) gx[c * plane + p] += g[p] * wv[p * d + c];
      }
    });
    accumulate(weight, [&](std::span<double> gw) {
      for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t c = 0; c < d; ++c) gw[p * d + c] += g[p] * xv[c * plane + p];
      }
    });
  });
  return out;
}

Tensor weighted_squared_error(Tape& tape, const Tensor& pred, const Tensor& target,
                              const Tensor& weight) {
  require_rank(pred, 3, "weighted_squared_error", "prediction");
  require_same_shape(pred, target, "weighted_squared_error");
  const std::size_t c = pred.dim(0);
  const std::size_t plane = pred.dim(1) * pred.dim(2);
  if (weight.defined()) {
    require_rank(weight, 2, "weighted_squared_error", "weight map");
    if (weight.dim(0) != pred.dim(1) || weight.dim(1) != pred.dim(2)) {
      throw ShapeError("weighted_squared_error: weight map " + shape_to_string(weight.shape()) +
                       " does not match " + shape_to_string(pred.shape()));
    }
  }
  const auto pv = pred.data();
  const auto tv = target.data();
  const double norm = 1.0 / static_cast<double>(plane);
  double acc = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    double s = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double diff = pv[ch * plane + p] - tv[ch * plane + p];
      s += diff * diff;
    }
    acc += weight.defined() ? s * weight[p] : s;
  }
  Tensor out({1}, {acc * norm}, pred.requires_grad());
  tape.record(out, [pred, target, weight, out, c, plane, norm] {
    const double g = out.grad()[0] * norm;
    const auto pv = pred.data();
    const auto tv = target.data();
    accumulate(pred, [&](std::span<double> gp) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t p = 0; p < plane; ++p) {
          const double wgt = weight.defined() ? weight[p] : 1.0;
          gp[ch * plane + p] += 2.0 * g * wgt * (pv[ch * plane + p] - tv[ch * plane + p]);
        }
      }
    });
  });
  return out;
}

}  // namespace stf::ops
