#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bmfia/mesh.hpp"
#include "bmfia/types.hpp"

namespace bmfia::io {

/// Binary container: 8-byte little-endian header length, UTF-8 JSON header,
/// then a little-endian float64 blob. The header records the blob length.
void write_container(const std::filesystem::path& path, const nlohmann::json& header,
                     std::span<const double> blob);

struct Container {
  nlohmann::json header;
  std::vector<double> blob;
};
Container read_container(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// Field vector CSV: `# nodes=<N> mesh=<nx>x<ny>` then one value per line.
void write_field_csv(const std::filesystem::path& path, const Vector& x, const Mesh& mesh);
Vector read_field_csv(const std::filesystem::path& path, int* nx = nullptr, int* ny = nullptr);

/// Velocity CSV: `# coords rows=<r> cols=<c>` then a `c1,c2,u1,u2` header
/// and one line per observation coordinate.
void write_velocity_csv(const std::filesystem::path& path, const ObservationGrid& grid,
                        const VelocityMatrix& y);
VelocityMatrix read_velocity_csv(const std::filesystem::path& path, int* rows = nullptr,
                                 int* cols = nullptr);

/// Round-trip exact decimal formatting.
std::string format_double(double v);

/// Simple comma-separated table writer.
void write_table_csv(const std::filesystem::path& path, const std::vector<std::string>& columns,
                     const std::vector<std::vector<double>>& rows);

}  // namespace bmfia::io
