#include "bmfia/io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bmfia/error.hpp"

namespace bmfia::io {

namespace {

static_assert(sizeof(double) == 8);

void put_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw MissingArtifact("truncated container header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw MissingArtifact("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_container(const std::filesystem::path& path, const nlohmann::json& header,
                     std::span<const double> blob) {
  nlohmann::json h = header;
  h["blob_length"] = blob.size();
  const std::string text = h.dump();
  auto out = open_out(path, std::ios::binary);
  put_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (double v : blob) put_u64_le(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
  auto in = open_in(path, std::ios::binary);
  const std::uint64_t len = get_u64_le(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw MissingArtifact("truncated container header in '" + path.string() + "'");
  Container c;
  c.header = nlohmann::json::parse(text);
  const auto n = c.header.at("blob_length").get<std::size_t>();
  c.blob.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.blob[i] = std::bit_cast<double>(get_u64_le(in));
  return c;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_field_csv(const std::filesystem::path& path, const Vector& x, const Mesh& mesh) {
  if (x.size() != mesh.node_count()) throw ShapeMismatch("field does not match mesh node count");
  auto out = open_out(path);
  out << "# nodes=" << x.size() << " mesh=" << mesh.n_ele_x() << "x" << mesh.n_ele_y() << '\n';
  for (Eigen::Index i = 0; i < x.size(); ++i) out << format_double(x[i]) << '\n';
}

Vector read_field_csv(const std::filesystem::path& path, int* nx, int* ny) {
  auto in = open_in(path);
  std::string header;
  std::getline(in, header);
  long nodes = 0;
  int mx = 0;
  int my = 0;
  if (std::sscanf(header.c_str(), "# nodes=%ld mesh=%dx%d", &nodes, &mx, &my) != 3) {
    throw MissingArtifact("'" + path.string() + "' is not a field CSV");
  }
  Vector x(nodes);
  for (long i = 0; i < nodes; ++i) {
    if (!(in >> x[i])) throw MissingArtifact("field CSV '" + path.string() + "' is truncated");
  }
  if (nx) *nx = mx;
  if (ny) *ny = my;
  return x;
}

void write_velocity_csv(const std::filesystem::path& path, const ObservationGrid& grid,
                        const VelocityMatrix& y) {
  if (y.rows() != grid.size()) throw ShapeMismatch("velocity rows do not match the grid");
  auto out = open_out(path);
  out << "# coords rows=" << grid.rows() << " cols=" << grid.cols() << '\n';
  out << "c1,c2,u1,u2\n";
  for (int i = 0; i < grid.size(); ++i) {
    out << format_double(grid[i].c1) << ',' << format_double(grid[i].c2) << ','
        << format_double(y(i, 0)) << ',' << format_double(y(i, 1)) << '\n';
  }
}

VelocityMatrix read_velocity_csv(const std::filesystem::path& path, int* rows, int* cols) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);
  int r = 0;
  int c = 0;
  if (std::sscanf(line.c_str(), "# coords rows=%d cols=%d", &r, &c) != 2) {
    throw MissingArtifact("'" + path.string() + "' is not a velocity CSV");
  }
  std::getline(in, line);
  VelocityMatrix y(static_cast<Eigen::Index>(r) * c, 2);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    if (!std::getline(in, line)) throw MissingArtifact("velocity CSV '" + path.string() + "' is truncated");
    double c1;
    double c2;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &c1, &c2, &y(i, 0), &y(i, 1)) != 4) {
      throw MissingArtifact("bad velocity CSV line in '" + path.string() + "'");
    }
  }
  if (rows) *rows = r;
  if (cols) *cols = c;
  return y;
}

void write_table_csv(const std::filesystem::path& path, const std::vector<std::string>& columns,
                     const std::vector<std::vector<double>>& rows) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << '\n';
  }
}

}  // namespace bmfia::io
