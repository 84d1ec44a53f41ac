#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "egsa/autograd.hpp"

namespace egsa {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t input_index = 0;   // which input holds the worst entry
    std::size_t element_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t entries_checked = 0;
};

/// Scalar-valued function of differentiable inputs, evaluated in 64-bit.
using ScalarFunction = std::function<Var<double>(std::span<const Var<double>>)>;

/// Compares reverse-mode gradients of `fn` with central finite differences.
/// Relative error is |a - n| / max(|a|, |n|, floor). The floor keeps entries with
/// near-zero gradients from being judged on the O(eps^2) truncation error alone.
GradCheckResult check_gradients(const ScalarFunction& fn, const std::vector<Tensor4d>& inputs, double eps = 1e-3,
                                double floor = 1e-2);

}  // namespace egsa
