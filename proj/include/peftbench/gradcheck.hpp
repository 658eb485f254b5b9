#pragma once

#include <cstddef>
#include <functional>

#include "peftbench/tensor.hpp"

namespace peftbench {

using ScalarFn = std::function<Tensor(const Tensor&)>;

// Compares the reverse-mode gradient of f at x with central differences.
// Returns max over checked entries of |analytic - numeric| / (|analytic| + 1e-12).
// `max_entries` (0 = all) checks an evenly strided subset of large inputs.
double finite_diff_check(const ScalarFn& f, const Tensor& x, double eps, std::size_t max_entries = 0);

}  // namespace peftbench
