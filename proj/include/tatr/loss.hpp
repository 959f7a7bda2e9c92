#pragma once

#include <cmath>
#include <vector>

#include "tatr/tensor.hpp"

namespace tatr {

// Class-balancing weights for one head: inverse frequency with a count floor
// of 1, clamped to [0.1, 100]. Uniform counts of total/C give weight 1.
inline std::vector<double> class_weights(const std::vector<std::int64_t>& positive_counts,
                                         std::int64_t total) {
    if (total < 1) throw DataError("class_weights: total must be >= 1");
    const auto C = static_cast<double>(positive_counts.size());
    std::vector<double> w(positive_counts.size());
    for (std::size_t c = 0; c < positive_counts.size(); ++c) {
        const auto cnt = positive_counts[c];
        if (cnt < 0) throw DataError("class_weights: negative count for class " + std::to_string(c));
        if (cnt > total) {
            throw DataError("class_weights: count " + std::to_string(cnt) + " exceeds total " +
                            std::to_string(total));
        }
        const double raw =
            static_cast<double>(total) / (C * static_cast<double>(std::max<std::int64_t>(cnt, 1)));
        w[c] = std::clamp(raw, 0.1, 100.0);
    }
    return w;
}

namespace detail {

template <typename S>
S softplus(S x) {
    // log(1 + e^x) without overflow for |x| <= 80 and far beyond
    return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace detail

// Weighted multi-label binary cross-entropy over logits [N,C]:
//   L = sum_c (-1/N) sum_n [ W_c y log(sigmoid(x)) + (1-y) log(1-sigmoid(x)) ]
// The weight scales the positive term only. Evaluated through softplus so no
// logit magnitude below ~700 can overflow.
template <typename S>
TensorPtr<S> weighted_bce(const TensorPtr<S>& logits, const TensorPtr<S>& labels,
                          const std::vector<S>& weights) {
    if (logits->rank() != 2 || labels->shape != logits->shape) {
        throw DimensionError("weighted_bce: logits " + shape_str(logits->shape) +
                             " vs labels " + shape_str(labels->shape));
    }
    const std::int64_t N = logits->shape[0], C = logits->shape[1];
    if (static_cast<std::int64_t>(weights.size()) != C) {
        throw DimensionError("weighted_bce: " + std::to_string(weights.size()) +
                             " weights for " + std::to_string(C) + " classes");
    }
    for (const auto y : labels->data) {
        if (y != S(0) && y != S(1)) {
            throw DataError("weighted_bce: labels must be binary");
        }
    }
    const S inv_n = S(1) / static_cast<S>(N);
    S acc = S(0);
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t c = 0; c < C; ++c) {
            const S x = logits->data[n * C + c];
            const S y = labels->data[n * C + c];
            acc += y == S(1) ? weights[c] * detail::softplus(-x) : detail::softplus(x);
        }
    }
    return detail::record<S>(
        TensorT<S>::scalar(acc * inv_n), {logits, labels},
        [logits, labels, weights, N, C, inv_n](TensorT<S>& o) {
            if (!logits->requires_grad) return;
            logits->ensure_grad();
            const S g = o.grad[0] * inv_n;
            for (std::int64_t n = 0; n < N; ++n) {
                for (std::int64_t c = 0; c < C; ++c) {
                    const S x = logits->data[n * C + c];
                    const S y = labels->data[n * C + c];
                    S sig;
                    if (x >= S(0)) {
                        sig = S(1) / (S(1) + std::exp(-x));
                    } else {
                        const S e = std::exp(x);
                        sig = e / (S(1) + e);
                    }
                    logits->grad[n * C + c] +=
                        g * (y == S(1) ? -weights[c] * (S(1) - sig) : sig);
                }
            }
        });
}

// Four-head total: plain unweighted sum. Rejects non-finite head losses with
// the offending head named.
template <typename S>
TensorPtr<S> total_loss(const TensorPtr<S>& l_instrument, const TensorPtr<S>& l_verb,
                        const TensorPtr<S>& l_target, const TensorPtr<S>& l_triplet) {
    const std::pair<const char*, const TensorPtr<S>&> heads[] = {
        {"instrument", l_instrument}, {"verb", l_verb}, {"target", l_target},
        {"triplet", l_triplet}};
    for (const auto& [name, l] : heads) {
        if (l->numel() != 1) {
            throw ContractError(std::string("total_loss: ") + name + " head loss is not scalar");
        }
        if (!std::isfinite(static_cast<double>(l->item()))) {
            throw NumericError(std::string("total_loss: non-finite loss on the ") + name +
                               " head");
        }
    }
    return add(add(l_instrument, l_verb), add(l_target, l_triplet));
}

}  // namespace tatr
