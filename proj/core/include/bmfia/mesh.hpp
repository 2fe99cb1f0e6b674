#pragma once

#include <array>
#include <vector>

#include "bmfia/types.hpp"

namespace bmfia {

struct Point2 {
  double c1 = 0.0;
  double c2 = 0.0;
};

/// Uniform quadrilateral mesh on the unit square.
///
/// Nodes are numbered row by row: node (ix, iy) has index iy * (nx + 1) + ix
/// and sits at (ix / nx, iy / ny). Element (ex, ey) has index ey * nx + ex and
/// references its four corners counter-clockwise starting at the lower left.
class Mesh {
 public:
  Mesh(int n_ele_x, int n_ele_y);

  int n_ele_x() const { return nx_; }
  int n_ele_y() const { return ny_; }
  int node_count() const { return (nx_ + 1) * (ny_ + 1); }
  int element_count() const { return nx_ * ny_; }
  double hx() const { return 1.0 / nx_; }
  double hy() const { return 1.0 / ny_; }

  int node_index(int ix, int iy) const { return iy * (nx_ + 1) + ix; }
  Point2 node_coord(int node) const;
  bool is_boundary_node(int node) const;

  std::array<int, 4> element_nodes(int element) const;
  Point2 element_center(int element) const;

  /// Element containing `c` plus local coordinates (xi, eta) in [0, 1]^2.
  /// Points on a shared edge are assigned to the element with the larger
  /// index. Throws OutOfDomain outside [0, 1]^2.
  struct Location {
    int element;
    double xi;
    double eta;
  };
  Location locate(const Point2& c) const;

 private:
  int nx_;
  int ny_;
};

/// Bilinear shape function values at local coordinates, ordered like
/// Mesh::element_nodes.
std::array<double, 4> shape_values(double xi, double eta);

/// Shape function derivatives with respect to the global coordinates.
std::array<std::array<double, 2>, 4> shape_gradients(double xi, double eta, double hx, double hy);

/// Regular observation grid of pixel centers, row-major: row r holds
/// c2 = (r + 0.5) / rows, column j holds c1 = (j + 0.5) / cols.
class ObservationGrid {
 public:
  ObservationGrid(int rows, int cols);
  /// Arbitrary coordinates laid out as a (rows, cols) image; every
  /// coordinate must lie strictly inside the unit square.
  ObservationGrid(int rows, int cols, std::vector<Point2> coords);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return static_cast<int>(coords_.size()); }
  const std::vector<Point2>& coords() const { return coords_; }
  const Point2& operator[](int i) const { return coords_[static_cast<std::size_t>(i)]; }

 private:
  int rows_;
  int cols_;
  std::vector<Point2> coords_;
};

/// Linear map from nodal field values to values at a set of points:
/// X = S x with S sparse, four entries per row, row sums one.
class FieldInterpolator {
 public:
  FieldInterpolator(const Mesh& mesh, const std::vector<Point2>& points);
  FieldInterpolator(const Mesh& mesh, const ObservationGrid& grid);

  Vector apply(const Vector& x) const;
  /// Exact transpose action S^T v.
  Vector adjoint(const Vector& v) const;

  const SparseMatrix& matrix() const { return s_; }
  int rows() const { return static_cast<int>(s_.rows()); }
  int cols() const { return static_cast<int>(s_.cols()); }

 private:
  SparseMatrix s_;
};

/// Convenience wrappers matching the operation names used in the CLI and
/// tests.
Vector interpolate_field(const Vector& x, const Mesh& mesh, const ObservationGrid& grid);
Vector interpolation_adjoint(const Mesh& mesh, const ObservationGrid& grid, const Vector& v);

}  // namespace bmfia
