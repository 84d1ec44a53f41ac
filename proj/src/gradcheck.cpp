#include "egsa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace egsa {

GradCheckResult check_gradients(const ScalarFunction& fn, const std::vector<Tensor4d>& inputs, double eps,
                                double floor) {
    std::vector<Var<double>> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(Var<double>::leaf(t, true));
    Var<double> loss = fn(leaves);
    backward(loss);

    GradCheckResult result;
    std::vector<Tensor4d> perturbed = inputs;
    auto evaluate = [&]() {
        NoGradGuard guard;
        std::vector<Var<double>> vars;
        vars.reserve(perturbed.size());
        for (const auto& t : perturbed) vars.push_back(Var<double>::constant(t));
        return fn(vars).value().item();
    };

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor4d analytic = leaves[k].grad();
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double original = inputs[k][i];
            perturbed[k][i] = original + eps;
            const double up = evaluate();
            perturbed[k][i] = original - eps;
            const double down = evaluate();
            perturbed[k][i] = original;

            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            const double rel = std::abs(a - numeric) / denom;
            ++result.entries_checked;
            if (rel > result.max_relative_error) {
                result.max_relative_error = rel;
                result.input_index = k;
                result.element_index = i;
                result.analytic = a;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace egsa
