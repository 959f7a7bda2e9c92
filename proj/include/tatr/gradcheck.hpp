#pragma once

#include <cmath>
#include <functional>

#include "tatr/tensor.hpp"

namespace tatr {

// Central-difference check of a scalar-valued function of one tensor.
// Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
template <typename S>
double grad_check(const std::function<TensorPtr<S>(const TensorPtr<S>&)>& fn,
                  const TensorPtr<S>& point, double step) {
    auto x = TensorT<S>::create(point->shape, point->data, true);
    auto y = fn(x);
    if (!y || y->numel() != 1) {
        throw ContractError("grad_check: function must produce a scalar");
    }
    backward(y);
    std::vector<S> analytic = x->grad;

    double worst = 0.0;
    for (std::size_t i = 0; i < x->data.size(); ++i) {
        const S saved = x->data[i];
        double plus, minus;
        {
            NoGradGuard ng;
            x->data[i] = saved + static_cast<S>(step);
            plus = static_cast<double>(fn(x)->item());
            x->data[i] = saved - static_cast<S>(step);
            minus = static_cast<double>(fn(x)->item());
            x->data[i] = saved;
        }
        const double numeric = (plus - minus) / (2.0 * step);
        const double a = static_cast<double>(analytic[i]);
        if (!std::isfinite(numeric) || !std::isfinite(a)) {
            throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(i));
        }
        const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        worst = std::max(worst, err);
    }
    return worst;
}

// Same check over a set of named leaf parameters of an arbitrary forward
// closure. `loss_fn` must rebuild the graph from current parameter data on
// every call. `max_coords` limits probed coordinates per parameter
// (deterministic stride subsample); <= 0 checks all of them.
template <typename S>
double grad_check_params(const std::function<TensorPtr<S>()>& loss_fn,
                         const std::vector<TensorPtr<S>>& params, double step,
                         std::int64_t max_coords = -1) {
    for (const auto& p : params) p->zero_grad();
    auto y = loss_fn();
    if (!y || y->numel() != 1) {
        throw ContractError("grad_check_params: loss must be scalar");
    }
    backward(y);
    std::vector<std::vector<S>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        p->ensure_grad();
        analytic.push_back(p->grad);
    }

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        const std::int64_t n = p->numel();
        const std::int64_t stride =
            (max_coords > 0 && n > max_coords) ? (n + max_coords - 1) / max_coords : 1;
        for (std::int64_t i = 0; i < n; i += stride) {
            const S saved = p->data[i];
            double plus, minus;
            {
                NoGradGuard ng;
                p->data[i] = saved + static_cast<S>(step);
                plus = static_cast<double>(loss_fn()->item());
                p->data[i] = saved - static_cast<S>(step);
                minus = static_cast<double>(loss_fn()->item());
                p->data[i] = saved;
            }
            const double numeric = (plus - minus) / (2.0 * step);
            const double a = static_cast<double>(analytic[pi][i]);
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                throw NumericError("grad_check_params: non-finite value at parameter " +
                                   std::to_string(pi) + " coordinate " + std::to_string(i));
            }
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace tatr
