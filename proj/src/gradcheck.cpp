#include "edgedepth/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "edgedepth/params.hpp"
#include "edgedepth/rng.hpp"

namespace edgedepth {

namespace {

std::vector<std::int64_t> pick_coords(std::int64_t n, int max_coords,
                                      std::uint64_t seed) {
  std::vector<std::int64_t> coords(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
  if (max_coords < 0 || static_cast<std::int64_t>(max_coords) >= n) return coords;
  Rng rng(seed + 0x517cc1b727220a95ull);
  for (std::size_t i = coords.size() - 1; i > 0; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_u64() % (i + 1));
    std::swap(coords[i], coords[j]);
  }
  coords.resize(static_cast<std::size_t>(max_coords));
  std::sort(coords.begin(), coords.end());
  return coords;
}

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const Shape& shape,
                           const std::vector<double>& x0, double eps, double tol,
                           int max_coords, std::uint64_t coord_seed) {
  if (!(eps > 0.0)) {
    throw ConfigError("grad_check: eps must be positive");
  }
  const std::int64_t n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(x0.size())) {
    throw ShapeError("grad_check: value count does not match " + shape_str(shape));
  }

  // Analytic pass.
  std::vector<double> analytic;
  {
    Graph g;
    Tensor x = g.leaf(shape, x0);
    Tensor loss = f(g, x);
    if (loss.numel() != 1) {
      throw ShapeError("grad_check: f must produce a single-element tensor");
    }
    if (!std::isfinite(loss.scalar())) {
      throw NumericError("grad_check: f(x) is not finite");
    }
    g.backward(loss);
    auto gr = x.grad();
    analytic.assign(gr.begin(), gr.end());
  }

  auto eval = [&](const std::vector<double>& xs) {
    Graph g;
    Tensor x = g.leaf(shape, xs);
    return f(g, x).scalar();
  };

  const std::vector<std::int64_t> coords = pick_coords(n, max_coords, coord_seed);
  GradCheckReport report;
  report.coords_checked = static_cast<int>(coords.size());
  std::vector<double> xs = x0;
  for (std::int64_t c : coords) {
    const std::size_t i = static_cast<std::size_t>(c);
    const double saved = xs[i];
    xs[i] = saved + eps;
    const double fp = eval(xs);
    xs[i] = saved - eps;
    const double fm = eval(xs);
    xs[i] = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    report.max_rel_err = std::max(report.max_rel_err, rel_err(analytic[i], numeric));
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

GradCheckReport grad_check_param(const std::function<Tensor(Graph&)>& f, Parameter& p,
                                 double eps, double tol, int max_coords,
                                 std::uint64_t coord_seed) {
  if (!(eps > 0.0)) {
    throw ConfigError("grad_check: eps must be positive");
  }
  std::vector<double> analytic;
  {
    Graph g;
    Tensor loss = f(g);
    if (loss.numel() != 1) {
      throw ShapeError("grad_check: f must produce a single-element tensor");
    }
    if (!std::isfinite(loss.scalar())) {
      throw NumericError("grad_check: f(x) is not finite");
    }
    g.backward(loss);
    p.grad.assign(p.values.size(), 0.0);
    g.accumulate_param_grads();
    analytic = p.grad;
  }

  auto eval = [&]() {
    Graph g;
    return f(g).scalar();
  };

  const std::vector<std::int64_t> coords =
      pick_coords(p.numel(), max_coords, coord_seed);
  GradCheckReport report;
  report.coords_checked = static_cast<int>(coords.size());
  for (std::int64_t c : coords) {
    const std::size_t i = static_cast<std::size_t>(c);
    const double saved = p.values[i];
    p.values[i] = saved + eps;
    const double fp = eval();
    p.values[i] = saved - eps;
    const double fm = eval();
    p.values[i] = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    report.max_rel_err = std::max(report.max_rel_err, rel_err(analytic[i], numeric));
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

std::vector<GradCheckRow> run_gradcheck(const std::vector<GradCheckCase>& cases,
                                        const std::string& scope) {
  std::vector<GradCheckRow> rows;
  for (const GradCheckCase& c : cases) {
    if (scope != "all" && c.name.rfind(scope, 0) != 0) continue;
    GradCheckReport rep = c.run();
    rows.push_back({c.name, c.shape_desc, rep.max_rel_err, rep.pass});
  }
  return rows;
}

}  // namespace edgedepth
