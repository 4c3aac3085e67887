#pragma once

#include <functional>
#include <string>
#include <vector>

#include "edgedepth/tensor.hpp"

namespace edgedepth {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  int coords_checked = 0;
};

// Scalar-valued function of one tensor, rebuilt on a fresh graph per call.
using ScalarFn = std::function<Tensor(Graph&, const Tensor&)>;

// Compares the analytic gradient of f at x0 against central finite
// differences, coordinate by coordinate. Relative error per coordinate is
// |a - n| / max(|a|, |n|, 1e-8). When max_coords >= 0 and smaller than the
// coordinate count, a deterministic sample of coordinates (seeded by
// coord_seed) is checked instead of all of them.
GradCheckReport grad_check(const ScalarFn& f, const Shape& shape,
                           const std::vector<double>& x0, double eps, double tol,
                           int max_coords = -1, std::uint64_t coord_seed = 0);

struct Parameter;

// Same comparison for a bound model parameter: the analytic side comes from
// accumulate_param_grads, the numeric side from perturbing the parameter
// values in place.
GradCheckReport grad_check_param(const std::function<Tensor(Graph&)>& f, Parameter& p,
                                 double eps, double tol, int max_coords = -1,
                                 std::uint64_t coord_seed = 0);

// A named check in the registry run by the `gradcheck` command.
struct GradCheckCase {
  std::string name;
  std::string shape_desc;
  std::function<GradCheckReport()> run;
};

struct GradCheckRow {
  std::string name;
  std::string shape_desc;
  double max_rel_err;
  bool pass;
};

// Full default suite: one case per primitive plus the composite network
// stages and the training loss.
std::vector<GradCheckCase> default_gradcheck_suite();

// Runs cases whose name starts with `scope` ("all" runs everything).
// Returns one row per executed case.
std::vector<GradCheckRow> run_gradcheck(const std::vector<GradCheckCase>& cases,
                                        const std::string& scope);

}  // namespace edgedepth
