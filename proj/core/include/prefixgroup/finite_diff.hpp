#pragma once

#include <functional>
#include <span>
#include <vector>

namespace pg {

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every coordinate.
// `f` must be deterministic; evaluation cost is 2 * params.size() calls.
std::vector<double> finite_difference_grad(const ScalarFunction& f, std::span<const double> params,
                                           double h);

// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
// turning rounding noise into large relative errors.
double relative_error(double a, double b, double floor = 1e-3);

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-3);

}  // namespace pg
