#include "bmfia/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bmfia/error.hpp"

namespace bmfia {

Mesh::Mesh(int n_ele_x, int n_ele_y) : nx_(n_ele_x), ny_(n_ele_y) {
  if (nx_ <= 0 || ny_ <= 0) {
    throw InvalidMesh("mesh needs at least one element per direction, got " + std::to_string(nx_) +
                      "x" + std::to_string(ny_));
  }
}

Point2 Mesh::node_coord(int node) const {
  const int ix = node % (nx_ + 1);
  const int iy = node / (nx_ + 1);
  return {static_cast<double>(ix) / nx_, static_cast<double>(iy) / ny_};
}

bool Mesh::is_boundary_node(int node) const {
  const int ix = node % (nx_ + 1);
  const int iy = node / (nx_ + 1);
  return ix == 0 || iy == 0 || ix == nx_ || iy == ny_;
}

std::array<int, 4> Mesh::element_nodes(int element) const {
  const int ex = element % nx_;
  const int ey = element / nx_;
  return {node_index(ex, ey), node_index(ex + 1, ey), node_index(ex + 1, ey + 1),
          node_index(ex, ey + 1)};
}

Point2 Mesh::element_center(int element) const {
  const int ex = element % nx_;
  const int ey = element / nx_;
  return {(ex + 0.5) / nx_, (ey + 0.5) / ny_};
}

Mesh::Location Mesh::locate(const Point2& c) const {
  if (!(c.c1 >= 0.0 && c.c1 <= 1.0 && c.c2 >= 0.0 && c.c2 <= 1.0)) {
    throw OutOfDomain("coordinate (" + std::to_string(c.c1) + ", " + std::to_string(c.c2) +
                      ") lies outside the unit square");
  }
  const int ex = std::min(static_cast<int>(std::floor(c.c1 * nx_)), nx_ - 1);
  const int ey = std::min(static_cast<int>(std::floor(c.c2 * ny_)), ny_ - 1);
  return {ey * nx_ + ex, c.c1 * nx_ - ex, c.c2 * ny_ - ey};
}

std::array<double, 4> shape_values(double xi, double eta) {
  return {(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta};
}

std::array<std::array<double, 2>, 4> shape_gradients(double xi, double eta, double hx, double hy) {
  return {{{-(1.0 - eta) / hx, -(1.0 - xi) / hy},
           {(1.0 - eta) / hx, -xi / hy},
           {eta / hx, xi / hy},
           {-eta / hx, (1.0 - xi) / hy}}};
}

ObservationGrid::ObservationGrid(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows <= 0 || cols <= 0) throw InvalidArgument("observation grid needs positive shape");
  coords_.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < cols; ++j) {
      coords_.push_back({(j + 0.5) / cols, (r + 0.5) / rows});
    }
  }
}

ObservationGrid::ObservationGrid(int rows, int cols, std::vector<Point2> coords)
    : rows_(rows), cols_(cols), coords_(std::move(coords)) {
  if (rows <= 0 || cols <= 0 || static_cast<std::size_t>(rows) * cols != coords_.size()) {
    throw ShapeMismatch("observation grid shape does not match the coordinate count");
  }
  for (const auto& c : coords_) {
    if (!(c.c1 > 0.0 && c.c1 < 1.0 && c.c2 > 0.0 && c.c2 < 1.0)) {
      throw OutOfDomain("observation coordinates must lie strictly inside the unit square");
    }
  }
}

FieldInterpolator::FieldInterpolator(const Mesh& mesh, const std::vector<Point2>& points) {
  std::vector<Triplet> triplets;
  triplets.reserve(points.size() * 4);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto loc = mesh.locate(points[i]);
    const auto nodes = mesh.element_nodes(loc.element);
    const auto n = shape_values(loc.xi, loc.eta);
    for (int a = 0; a < 4; ++a) {
      if (n[a] != 0.0) triplets.emplace_back(static_cast<int>(i), nodes[a], n[a]);
    }
  }
  s_.resize(static_cast<Eigen::Index>(points.size()), mesh.node_count());
  s_.setFromTriplets(triplets.begin(), triplets.end());
  s_.makeCompressed();
}

FieldInterpolator::FieldInterpolator(const Mesh& mesh, const ObservationGrid& grid)
    : FieldInterpolator(mesh, grid.coords()) {}

Vector FieldInterpolator::apply(const Vector& x) const {
  if (x.size() != s_.cols()) {
    throw ShapeMismatch("field vector has " + std::to_string(x.size()) + " entries, mesh has " +
                        std::to_string(s_.cols()) + " nodes");
  }
  return s_ * x;
}

Vector FieldInterpolator::adjoint(const Vector& v) const {
  if (v.size() != s_.rows()) {
    throw ShapeMismatch("adjoint seed has " + std::to_string(v.size()) + " entries, expected " +
                        std::to_string(s_.rows()));
  }
  return s_.transpose() * v;
}

Vector interpolate_field(const Vector& x, const Mesh& mesh, const ObservationGrid& grid) {
  return FieldInterpolator(mesh, grid).apply(x);
}

Vector interpolation_adjoint(const Mesh& mesh, const ObservationGrid& grid, const Vector& v) {
  return FieldInterpolator(mesh, grid).adjoint(v);
}

}  // namespace bmfia
