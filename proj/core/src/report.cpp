#include "bmfia/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bmfia/error.hpp"
#include "bmfia/io.hpp"

namespace bmfia {

double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw InvalidArgument("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double relative_l2(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ShapeMismatch("relative_l2 needs equal sizes");
  return (a - b).norm() / b.norm();
}

PosteriorReport make_report(const SparseGaussian& q, const Mesh& field_mesh, int mc_samples,
                            std::uint64_t seed, const Vector* x_truth, int slice_points) {
  if (q.dim() != field_mesh.node_count()) throw ShapeMismatch("q does not match the field mesh");
  if (mc_samples < 1 || slice_points < 2) throw InvalidArgument("report needs samples and slice points");
  if (x_truth && x_truth->size() != q.dim()) throw ShapeMismatch("ground truth does not match the field mesh");

  struct Line {
    const char* name;
    Point2 a;
    Point2 b;
  };
  const Line lines[] = {{"diagonal", {0.0, 0.0}, {1.0, 1.0}}, {"antidiagonal", {0.0, 1.0}, {1.0, 0.0}}};

  PosteriorReport rep;
  rep.mc_samples = mc_samples;
  rep.mean_x = q.mu();
  std::vector<FieldInterpolator> interps;
  for (const auto& line : lines) {
    SliceTable t;
    t.name = line.name;
    std::vector<Point2> pts;
    for (int i = 0; i < slice_points; ++i) {
      const double s = static_cast<double>(i) / (slice_points - 1);
      const Point2 p{line.a.c1 + s * (line.b.c1 - line.a.c1), line.a.c2 + s * (line.b.c2 - line.a.c2)};
      t.s.push_back(s);
      t.c1.push_back(p.c1);
      t.c2.push_back(p.c2);
      pts.push_back(p);
    }
    interps.emplace_back(field_mesh, pts);
    if (x_truth) {
      const Vector xt = interps.back().apply(*x_truth);
      for (Eigen::Index i = 0; i < xt.size(); ++i) t.truth.push_back(std::exp(xt[i]));
    }
    rep.slices.push_back(std::move(t));
  }

  // Streaming moments per node, stored draws per slice point.
  const int n = q.dim();
  Vector sum = Vector::Zero(n);
  Vector sum2 = Vector::Zero(n);
  std::vector<std::vector<std::vector<double>>> draws(
      rep.slices.size(), std::vector<std::vector<double>>(static_cast<std::size_t>(slice_points)));
  Rng rng(seed);
  for (int s = 0; s < mc_samples; ++s) {
    const Vector x = q.mu() + q.apply_factor(standard_normal(n, rng));
    const Vector k = x.array().exp();
    sum += k;
    sum2 += k.cwiseProduct(k);
    for (std::size_t l = 0; l < interps.size(); ++l) {
      const Vector xs = interps[l].apply(x);
      for (int i = 0; i < slice_points; ++i) draws[l][static_cast<std::size_t>(i)].push_back(std::exp(xs[i]));
    }
  }
  const double m = static_cast<double>(mc_samples);
  rep.mean_k = sum / m;
  const Vector var = (sum2 / m - rep.mean_k.cwiseProduct(rep.mean_k)).cwiseMax(0.0);
  rep.two_std_k = 2.0 * var.cwiseSqrt();

  std::size_t inside = 0;
  std::size_t total = 0;
  for (std::size_t l = 0; l < rep.slices.size(); ++l) {
    auto& t = rep.slices[l];
    for (int i = 0; i < slice_points; ++i) {
      const auto& d = draws[l][static_cast<std::size_t>(i)];
      t.p5.push_back(quantile(d, 0.05));
      t.p50.push_back(quantile(d, 0.50));
      t.p95.push_back(quantile(d, 0.95));
      if (!t.truth.empty()) {
        const double v = t.truth[static_cast<std::size_t>(i)];
        inside += (v >= t.p5.back() && v <= t.p95.back()) ? 1 : 0;
        ++total;
      }
    }
  }
  rep.coverage = total ? static_cast<double>(inside) / static_cast<double>(total)
                       : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

void PosteriorReport::write(const std::filesystem::path& dir, const Mesh& field_mesh) const {
  std::filesystem::create_directories(dir);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < field_mesh.node_count(); ++i) {
    const auto c = field_mesh.node_coord(i);
    rows.push_back({c.c1, c.c2, mean_x[i], mean_k[i], two_std_k[i]});
  }
  io::write_table_csv(dir / "posterior_field.csv", {"c1", "c2", "mean_x", "mean_k", "two_std_k"}, rows);
  for (const auto& t : slices) {
    std::vector<std::vector<double>> r;
    const bool has_truth = !t.truth.empty();
    for (std::size_t i = 0; i < t.s.size(); ++i) {
      std::vector<double> row{t.s[i], t.c1[i], t.c2[i], t.p5[i], t.p50[i], t.p95[i]};
      if (has_truth) row.push_back(t.truth[i]);
      r.push_back(row);
    }
    std::vector<std::string> cols{"s", "c1", "c2", "p5", "p50", "p95"};
    if (has_truth) cols.push_back("truth");
    io::write_table_csv(dir / ("slice_" + t.name + ".csv"), cols, r);
  }
  nlohmann::json summary{{"mc_samples", mc_samples}};
  summary["coverage_90"] = std::isnan(coverage) ? nlohmann::json(nullptr) : nlohmann::json(coverage);
  io::write_json(dir / "report_summary.json", summary);
}

}  // namespace bmfia
