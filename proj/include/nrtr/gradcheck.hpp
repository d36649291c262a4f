#pragma once

#include <functional>
#include <vector>

#include "nrtr/tensor.hpp"

namespace nrtr {

struct GradCheckResult {
    double max_rel_error = 0.0;
    int worst_input = -1;
    std::int64_t worst_coord = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    std::int64_t checked = 0;
};

/// Central-difference check of a scalar-valued tensor function on 64-bit
/// inputs. `f` must rebuild its graph from the current leaf values on each
/// call. Reported error is |analytic - numeric| / max(1, |analytic|),
/// maximized over the coordinates admitted by `include` (all, when empty) —
/// the hook excludes kink coordinates of piecewise ops.
inline GradCheckResult grad_check(
    const std::function<Tensor<double>(std::vector<Tensor<double>>&)>& f,
    std::vector<Tensor<double>>& inputs, double eps = 1e-3,
    const std::function<bool(int, std::int64_t)>& include = {}) {
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    Tensor<double> y = f(inputs);
    backward(y);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) {
        in.grad();  // materialize zeros if the input is unused
        analytic.emplace_back(in.grad().data(), in.grad().data() + in.numel());
    }

    GradCheckResult res;
    for (int i = 0; i < static_cast<int>(inputs.size()); ++i) {
        auto& vals = inputs[i].values();
        for (std::int64_t j = 0; j < inputs[i].numel(); ++j) {
            if (include && !include(i, j)) continue;
            const double saved = vals[j];
            vals[j] = saved + eps;
            const double f_plus = f(inputs).scalar();
            vals[j] = saved - eps;
            const double f_minus = f(inputs).scalar();
            vals[j] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * eps);
            const double a = analytic[i][static_cast<std::size_t>(j)];
            const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            ++res.checked;
            if (rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst_input = i;
                res.worst_coord = j;
                res.analytic = a;
                res.numeric = numeric;
            }
        }
    }
    return res;
}

}  // namespace nrtr
