#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "stf/params.hpp"
#include "stf/semantic.hpp"

namespace stf {

/// BEV raster over [x_min, x_max) x [y_min, y_max). Rows index y, columns x.
struct GridSpec {
  double x_min = -16, x_max = 16;
  double y_min = -16, y_max = 16;
  std::size_t rows = 64, cols = 64;

  double cell_x() const noexcept { return (x_max - x_min) / static_cast<double>(cols); }
  double cell_y() const noexcept { return (y_max - y_min) / static_cast<double>(rows); }
  std::size_t cells() const noexcept { return rows * cols; }

  /// Flat row-major cell index, or nullopt outside the grid.
  std::optional<std::size_t> cell_of(double x, double y) const;
  /// Continuous (row, col) coordinate of a metric position.
  std::pair<double, double> to_cell_coords(double x, double y) const;
  double cell_center_x(std::size_t col) const noexcept { return x_min + (col + 0.5) * cell_x(); }
  double cell_center_y(std::size_t row) const noexcept { return y_min + (row + 0.5) * cell_y(); }

  void validate() const;
  bool operator==(const GridSpec&) const = default;
};

/// Square grid of `size` cells covering `extent` metres centred on the sensor.
GridSpec square_grid(double extent, std::size_t size);

enum class SemanticEncoding { Integer, OneHot };

/// Per-point encoder inputs: (x, y offsets to the cell centre, z, r, dt)
/// plus the class channel(s) for injected clouds. Points outside the grid
/// are dropped.
struct PointTable {
  std::size_t in_dim = 5;
  std::vector<double> features;  // row-major, size() * in_dim
  std::vector<std::size_t> cells;

  std::size_t size() const noexcept { return cells.size(); }
};

PointTable point_table(const PointCloud& cloud, const GridSpec& grid);
PointTable point_table(const InjectedPointCloud& cloud, const GridSpec& grid,
                       SemanticEncoding encoding = SemanticEncoding::Integer, int num_classes = 0);
std::size_t semantic_in_dim(SemanticEncoding encoding, int num_classes);

/// Per-point linear map + ReLU, then per-cell elementwise max. Empty cells
/// are zero. weight is C_p x in_dim, bias is C_p.
Tensor pillarize(Tape& tape, const PointTable& points, const GridSpec& grid, const Tensor& weight,
                 const Tensor& bias);

struct EncoderSpec {
  std::size_t in_dim = 5;
  std::size_t point_channels = 16;
  std::size_t channels = 32;
};

/// Registers `<prefix>.point.*`, `<prefix>.conv1.*`, `<prefix>.conv2.*`.
void init_encoder(ParameterStore& params, const std::string& prefix, const EncoderSpec& spec);

/// pillarize -> conv3x3 -> ReLU -> conv3x3 -> ReLU.
Tensor encode(Tape& tape, const PointTable& points, const GridSpec& grid, const ParameterStore& params,
              const std::string& prefix);

/// Teacher encoder features f* for an injected cloud. The teacher store
/// must be frozen.
Tensor teacher_features(Tape& tape, const InjectedPointCloud& cloud, const GridSpec& grid,
                        const ParameterStore& teacher, const std::string& prefix = "encoder",
                        SemanticEncoding encoding = SemanticEncoding::Integer, int num_classes = 0);

}  // namespace stf
