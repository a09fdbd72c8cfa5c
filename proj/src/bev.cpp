#include "stf/bev.hpp"

#include <cmath>

#include "stf/ops.hpp"

namespace stf {

std::optional<std::size_t> GridSpec::cell_of(double x, double y) const {
  if (!(x >= x_min && x < x_max && y >= y_min && y < y_max)) return std::nullopt;
  auto col = static_cast<std::size_t>(std::floor((x - x_min) / cell_x()));
  auto row = static_cast<std::size_t>(std::floor((y - y_min) / cell_y()));
  if (col >= cols) col = cols - 1;
  if (row >= rows) row = rows - 1;
  return row * cols + col;
}

std::pair<double, double> GridSpec::to_cell_coords(double x, double y) const {
  return {(y - y_min) / cell_y(), (x - x_min) / cell_x()};
}

void GridSpec::validate() const {
  if (rows < 8 || cols < 8) throw std::invalid_argument("grid must be at least 8x8 cells");
  if (!(x_max > x_min) || !(y_max > y_min)) throw std::invalid_argument("grid ranges must be non-empty");
}

GridSpec square_grid(double extent, std::size_t size) {
  GridSpec g{-extent / 2, extent / 2, -extent / 2, extent / 2, size, size};
  g.validate();
  return g;
}

namespace {

void append_base(PointTable& table, const Point& p, const GridSpec& grid, std::size_t cell) {
  const std::size_t row = cell / grid.cols, col = cell % grid.cols;
  table.features.push_back(p.x - grid.cell_center_x(col));
  table.features.push_back(p.y - grid.cell_center_y(row));
  table.features.push_back(p.z);
  table.features.push_back(p.r);
  table.features.push_back(p.dt);
}

}  // namespace

PointTable point_table(const PointCloud& cloud, const GridSpec& grid) {
  PointTable table;
  table.in_dim = 5;
  for (const auto& p : cloud.points) {
    const auto cell = grid.cell_of(p.x, p.y);
    if (!cell) continue;
    append_base(table, p, grid, *cell);
    table.cells.push_back(*cell);
  }
  return table;
}

std::size_t semantic_in_dim(SemanticEncoding encoding, int num_classes) {
  return encoding == SemanticEncoding::Integer ? 6 : 5 + static_cast<std::size_t>(num_classes);
}

PointTable point_table(const InjectedPointCloud& cloud, const GridSpec& grid, SemanticEncoding encoding,
                       int num_classes) {
  PointTable table;
  table.in_dim = semantic_in_dim(encoding, num_classes);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const auto cell = grid.cell_of(p.x, p.y);
    if (!cell) continue;
    append_base(table, p, grid, *cell);
    const int c = cloud.classes[i];
    if (encoding == SemanticEncoding::Integer) {
      table.features.push_back(static_cast<double>(c));
    } else {
      if (c > num_classes) throw std::out_of_range("class id exceeds one-hot width");
      for (int j = 1; j <= num_classes; ++j) table.features.push_back(c == j ? 1.0 : 0.0);
    }
    table.cells.push_back(*cell);
  }
  return table;
}

Tensor pillarize(Tape& tape, const PointTable& points, const GridSpec& grid, const Tensor& weight,
                 const Tensor& bias) {
  if (weight.rank() != 2 || weight.dim(1) != points.in_dim) {
    throw ShapeError("pillarize: weight " + shape_to_string(weight.shape()) + " does not accept " +
                     std::to_string(points.in_dim) + "-dimensional points");
  }
  const std::size_t cp = weight.dim(0);
  if (bias.rank() != 1 || bias.dim(0) != cp) {
    throw ShapeError("pillarize: bias " + shape_to_string(bias.shape()) + " does not match weight");
  }
  const std::size_t plane = grid.cells();
  const std::size_t d = points.in_dim;
  Tensor out({cp, grid.rows, grid.cols}, any_requires_grad({&weight, &bias}));
  auto o = out.mutable_data();
  // Winning point per (channel, cell); -1 where the cell stays zero.
  auto winner = std::make_shared<std::vector<std::ptrdiff_t>>(cp * plane, -1);
  const auto wv = weight.data();
  const auto bv = bias.data();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double* f = points.features.data() + i * d;
    const std::size_t cell = points.cells[i];
    for (std::size_t c = 0; c < cp; ++c) {
      double z = bv[c];
      for (std::size_t j = 0; j < d; ++j) z += wv[c * d + j] * f[j];
      // ReLU folds into the max against the zero-initialised cell.
      if (z > o[c * plane + cell]) {
        o[c * plane + cell] = z;
        (*winner)[c * plane + cell] = static_cast<std::ptrdiff_t>(i);
      }
    }
  }
  if (!out.requires_grad()) return out;
  auto feats = std::make_shared<const std::vector<double>>(points.features);
  tape.record(out, [out, weight, bias, winner, feats, cp, plane, d] {
    const auto g = out.grad();
    Tensor w_t = weight, b_t = bias;
    std::span<double> gw, gb;
    if (weight.requires_grad()) gw = w_t.grad_mut();
    if (bias.requires_grad()) gb = b_t.grad_mut();
    for (std::size_t c = 0; c < cp; ++c) {
      for (std::size_t cell = 0; cell < plane; ++cell) {
        const auto idx = (*winner)[c * plane + cell];
        if (idx < 0) continue;
        const double gv = g[c * plane + cell];
        if (!gb.empty()) gb[c] += gv;
        if (!gw.empty()) {
          const double* f = feats->data() + static_cast<std::size_t>(idx) * d;
          for (std::size_t j = 0; j < d; ++j) gw[c * d + j] += gv * f[j];
        }
      }
    }
  });
  return out;
}

void init_encoder(ParameterStore& params, const std::string& prefix, const EncoderSpec& spec) {
  const auto cp = spec.point_channels, c = spec.channels;
  params.add_uniform(prefix + ".point.weight", {cp, spec.in_dim}, std::sqrt(6.0 / spec.in_dim));
  params.add_constant(prefix + ".point.bias", {cp}, 0.05);
  params.add_uniform(prefix + ".conv1.kernel", {c, cp, 3, 3}, std::sqrt(6.0 / (cp * 9.0)));
  params.add_zeros(prefix + ".conv1.bias", {c});
  params.add_uniform(prefix + ".conv2.kernel", {c, c, 3, 3}, std::sqrt(6.0 / (c * 9.0)));
  params.add_zeros(prefix + ".conv2.bias", {c});
}

Tensor encode(Tape& tape, const PointTable& points, const GridSpec& grid, const ParameterStore& params,
              const std::string& prefix) {
  Tensor x = pillarize(tape, points, grid, params.get(prefix + ".point.weight"),
                       params.get(prefix + ".point.bias"));
  x = ops::relu(tape, ops::conv2d_same(tape, x, params.get(prefix + ".conv1.kernel"),
                                       params.get(prefix + ".conv1.bias")));
  x = ops::relu(tape, ops::conv2d_same(tape, x, params.get(prefix + ".conv2.kernel"),
                                       params.get(prefix + ".conv2.bias")));
  return x;
}

Tensor teacher_features(Tape& tape, const InjectedPointCloud& cloud, const GridSpec& grid,
                        const ParameterStore& teacher, const std::string& prefix,
                        SemanticEncoding encoding, int num_classes) {
  if (!teacher.frozen()) {
    throw LifecycleError("teacher features requested before teacher training completed (store not frozen)");
  }
  const PointTable table = point_table(cloud, grid, encoding, num_classes);
  return encode(tape, table, grid, teacher, prefix);
}

}  // namespace stf
