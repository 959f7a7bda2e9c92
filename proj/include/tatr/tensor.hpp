#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <limits>
#include <unordered_set>
#include <utility>

#include "tatr/common.hpp"

namespace tatr {

enum class Mode { train, eval };

// Thread-local switch for gradient tape recording. Evaluation paths disable
// recording to skip graph allocation; values are unaffected.
class GradMode {
public:
    static bool enabled() { return flag(); }
    static void set(bool on) { flag() = on; }

private:
    static bool& flag() {
        static thread_local bool f = true;
        return f;
    }
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev_); }

private:
    bool prev_;
};

template <typename S>
class TensorT;
template <typename S>
using TensorPtr = std::shared_ptr<TensorT<S>>;

// Dense row-major tensor participating in a define-by-run gradient tape.
// Values are immutable once created except for grad accumulation; the tape is
// rebuilt on every forward pass.
template <typename S>
class TensorT : public std::enable_shared_from_this<TensorT<S>> {
public:
    Shape shape;
    std::vector<S> data;
    bool requires_grad = false;
    std::vector<S> grad;  // empty until a backward pass reaches this tensor

    std::vector<TensorPtr<S>> parents;
    std::function<void()> backprop;

    static TensorPtr<S> create(Shape shape, std::vector<S> values, bool rg = false) {
        if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        for (auto d : shape) {
            if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
        }
        auto t = std::make_shared<TensorT<S>>();
        t->shape = std::move(shape);
        t->data = std::move(values);
        t->requires_grad = rg;
        return t;
    }

    static TensorPtr<S> zeros(Shape shape, bool rg = false) {
        auto n = numel_of(shape);
        return create(std::move(shape), std::vector<S>(static_cast<std::size_t>(n), S(0)), rg);
    }

    static TensorPtr<S> full(Shape shape, S value, bool rg = false) {
        auto n = numel_of(shape);
        return create(std::move(shape), std::vector<S>(static_cast<std::size_t>(n), value), rg);
    }

    static TensorPtr<S> scalar(S value, bool rg = false) { return create({1}, {value}, rg); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::size_t rank() const { return shape.size(); }
    std::int64_t dim(std::size_t i) const { return shape[i]; }
    bool leaf() const { return parents.empty(); }

    S item() const {
        if (numel() != 1) {
            throw ContractError("item() requires a scalar tensor, got shape " + shape_str(shape));
        }
        return data[0];
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), S(0));
    }
};

namespace detail {

// Registers `out` on the tape when recording is on and any parent needs grad.
// `back` reads out.grad and accumulates into the parents' grad buffers.
template <typename S>
TensorPtr<S> record(TensorPtr<S> out, std::vector<TensorPtr<S>> parents,
                    std::function<void(TensorT<S>&)> back) {
    bool any = false;
    for (const auto& p : parents) any = any || (p && p->requires_grad);
    if (GradMode::enabled() && any) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        TensorT<S>* raw = out.get();
        out->backprop = [raw, back = std::move(back)]() { back(*raw); };
    }
    return out;
}

template <typename S>
void require_same_shape(const TensorPtr<S>& a, const TensorPtr<S>& b, const char* op) {
    if (a->shape != b->shape) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                             " vs " + shape_str(b->shape));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S>
TensorPtr<S> add(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<S> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
    return detail::record<S>(
        TensorT<S>::create(a->shape, std::move(out)), {a, b}, [a, b](TensorT<S>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < o.grad.size(); ++i) b->grad[i] += o.grad[i];
            }
        });
}

template <typename S>
TensorPtr<S> sub(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<S> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] - b->data[i];
    return detail::record<S>(
        TensorT<S>::create(a->shape, std::move(out)), {a, b}, [a, b](TensorT<S>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < o.grad.size(); ++i) b->grad[i] -= o.grad[i];
            }
        });
}

template <typename S>
TensorPtr<S> mul(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<S> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
    return detail::record<S>(
        TensorT<S>::create(a->shape, std::move(out)), {a, b}, [a, b](TensorT<S>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < o.grad.size(); ++i) b->grad[i] += o.grad[i] * a->data[i];
            }
        });
}

template <typename S>
TensorPtr<S> scale(const TensorPtr<S>& a, S factor) {
    std::vector<S> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * factor;
    return detail::record<S>(
        TensorT<S>::create(a->shape, std::move(out)), {a}, [a, factor](TensorT<S>& o) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i] * factor;
        });
}

template <typename S>
TensorPtr<S> add_scalar(const TensorPtr<S>& a, S value) {
    std::vector<S> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + value;
    return detail::record<S>(
        TensorT<S>::create(a->shape, std::move(out)), {a}, [a](TensorT<S>& o) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
        });
}

// x [n, m] + v [m] broadcast over rows. The one documented broadcast of add.
template <typename S>
TensorPtr<S> add_rowvec(const TensorPtr<S>& x, const TensorPtr<S>& v) {
    if (x->rank() != 2 || v->numel() != x->shape[1]) {
        throw DimensionError("add_rowvec: cannot broadcast " + shape_str(v->shape) + " over " +
                             shape_str(x->shape));
    }
    const std::int64_t n = x->shape[0], m = x->shape[1];
    std::vector<S> out(x->data.size());
    for (std::int64_t i = 0; i < n; ++i) {
        const S* src = x->data.data() + i * m;
        S* dst = out.data() + i * m;
        for (std::int64_t j = 0; j < m; ++j) dst[j] = src[j] + v->data[j];
    }
    return detail::record<S>(
        TensorT<S>::create(x->shape, std::move(out)), {x, v}, [x, v, n, m](TensorT<S>& o) {
            if (x->requires_grad) {
                x->ensure_grad();
                for (std::size_t i = 0; i < o.grad.size(); ++i) x->grad[i] += o.grad[i];
            }
            if (v->requires_grad) {
                v->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    const S* g = o.grad.data() + i * m;
                    for (std::int64_t j = 0; j < m; ++j) v->grad[j] += g[j];
                }
            }
        });
}

template <typename S>
TensorPtr<S> relu(const TensorPtr<S>& a) {
    std::vector<S> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] > S(0) ? a->data[i] : S(0);
    return detail::record<S>(
        TensorT<S>::create(a->shape, std::move(out)), {a}, [a](TensorT<S>& o) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                if (a->data[i] > S(0)) a->grad[i] += o.grad[i];
            }
        });
}

template <typename S>
TensorPtr<S> sigmoid(const TensorPtr<S>& a) {
    // outputs clamped to the open interval: strictly in (0,1) even where the
    // rounded quotient would saturate
    const S hi = std::nextafter(S(1), S(0));
    const S lo = std::numeric_limits<S>::min();
    std::vector<S> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const S x = a->data[i];
        S y;
        // evaluate through exp(-|x|) so neither branch overflows
        if (x >= S(0)) {
            y = S(1) / (S(1) + std::exp(-x));
        } else {
            const S e = std::exp(x);
            y = e / (S(1) + e);
        }
        out[i] = std::clamp(y, lo, hi);
    }
    auto result = TensorT<S>::create(a->shape, std::move(out));
    return detail::record<S>(result, {a}, [a, raw = result.get()](TensorT<S>& o) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const S y = raw->data[i];
            a->grad[i] += o.grad[i] * y * (S(1) - y);
        }
    });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename S>
TensorPtr<S> reshape(const TensorPtr<S>& a, Shape new_shape) {
    if (numel_of(new_shape) != a->numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a->shape) + " as " +
                             shape_str(new_shape));
    }
    return detail::record<S>(
        TensorT<S>::create(std::move(new_shape), a->data), {a}, [a](TensorT<S>& o) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) a->grad[i] += o.grad[i];
        });
}

namespace detail {

inline std::vector<std::int64_t> strides_of(const Shape& shape) {
    std::vector<std::int64_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

}  // namespace detail

template <typename S>
TensorPtr<S> permute(const TensorPtr<S>& a, const std::vector<std::size_t>& perm) {
    if (perm.size() != a->rank()) {
        throw DimensionError("permute: order has " + std::to_string(perm.size()) +
                             " axes for tensor " + shape_str(a->shape));
    }
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = a->shape[perm[i]];
    const auto in_strides = detail::strides_of(a->shape);
    const auto out_strides = detail::strides_of(out_shape);
    const auto n = a->numel();
    std::vector<S> out(static_cast<std::size_t>(n));
    std::vector<std::int64_t> gather(static_cast<std::size_t>(n));
    for (std::int64_t o = 0; o < n; ++o) {
        std::int64_t rem = o, src = 0;
        for (std::size_t ax = 0; ax < perm.size(); ++ax) {
            const auto idx = rem / out_strides[ax];
            rem -= idx * out_strides[ax];
            src += idx * in_strides[perm[ax]];
        }
        out[static_cast<std::size_t>(o)] = a->data[static_cast<std::size_t>(src)];
        gather[static_cast<std::size_t>(o)] = src;
    }
    return detail::record<S>(
        TensorT<S>::create(std::move(out_shape), std::move(out)), {a},
        [a, gather = std::move(gather)](TensorT<S>& o) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                a->grad[static_cast<std::size_t>(gather[i])] += o.grad[i];
            }
        });
}

template <typename S>
TensorPtr<S> select(const TensorPtr<S>& a, std::size_t axis, std::int64_t index) {
    if (axis >= a->rank()) {
        throw DimensionError("select: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(a->shape));
    }
    if (index < 0 || index >= a->shape[axis]) {
        throw DimensionError("select: index " + std::to_string(index) + " out of range for axis " +
                             std::to_string(axis) + " of " + shape_str(a->shape));
    }
    Shape out_shape;
    for (std::size_t i = 0; i < a->rank(); ++i) {
        if (i != axis) out_shape.push_back(a->shape[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    std::int64_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a->shape[i];
    for (std::size_t i = axis + 1; i < a->rank(); ++i) inner *= a->shape[i];
    const std::int64_t axis_n = a->shape[axis];
    std::vector<S> out(static_cast<std::size_t>(outer * inner));
    for (std::int64_t u = 0; u < outer; ++u) {
        const S* src = a->data.data() + (u * axis_n + index) * inner;
        std::copy(src, src + inner, out.data() + u * inner);
    }
    return detail::record<S>(
        TensorT<S>::create(std::move(out_shape), std::move(out)), {a},
        [a, outer, inner, axis_n, index](TensorT<S>& o) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::int64_t u = 0; u < outer; ++u) {
                S* dst = a->grad.data() + (u * axis_n + index) * inner;
                const S* g = o.grad.data() + u * inner;
                for (std::int64_t i = 0; i < inner; ++i) dst[i] += g[i];
            }
        });
}

template <typename S>
TensorPtr<S> concat(const std::vector<TensorPtr<S>>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const auto& first = parts.front();
    if (axis >= first->rank()) {
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(first->shape));
    }
    Shape out_shape = first->shape;
    std::int64_t total_axis = 0;
    for (const auto& p : parts) {
        if (p->rank() != first->rank()) {
            throw DimensionError("concat: rank mismatch " + shape_str(first->shape) + " vs " +
                                 shape_str(p->shape));
        }
        for (std::size_t i = 0; i < first->rank(); ++i) {
            if (i != axis && p->shape[i] != first->shape[i]) {
                throw DimensionError("concat: shape mismatch " + shape_str(first->shape) +
                                     " vs " + shape_str(p->shape));
            }
        }
        total_axis += p->shape[axis];
    }
    out_shape[axis] = total_axis;
    std::int64_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
    for (std::size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
    std::vector<S> out(static_cast<std::size_t>(outer * total_axis * inner));
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const auto pn = p->shape[axis];
        for (std::int64_t u = 0; u < outer; ++u) {
            const S* src = p->data.data() + u * pn * inner;
            S* dst = out.data() + (u * total_axis + offset) * inner;
            std::copy(src, src + pn * inner, dst);
        }
        offset += pn;
    }
    return detail::record<S>(
        TensorT<S>::create(std::move(out_shape), std::move(out)), parts,
        [parts, outer, inner, total_axis](TensorT<S>& o) {
            std::int64_t off = 0;
            for (const auto& p : parts) {
                const std::int64_t pn = p->numel() / (outer * inner);
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::int64_t u = 0; u < outer; ++u) {
                        const S* g = o.grad.data() + (u * total_axis + off) * inner;
                        S* dst = p->grad.data() + u * pn * inner;
                        for (std::int64_t i = 0; i < pn * inner; ++i) dst[i] += g[i];
                    }
                }
                off += pn;
            }
        });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
TensorPtr<S> sum(const TensorPtr<S>& a) {
    S acc = S(0);
    for (const auto v : a->data) acc += v;
    return detail::record<S>(
        TensorT<S>::scalar(acc), {a}, [a](TensorT<S>& o) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            const S g = o.grad[0];
            for (auto& v : a->grad) v += g;
        });
}

template <typename S>
TensorPtr<S> mean(const TensorPtr<S>& a) {
    const S inv = S(1) / static_cast<S>(a->numel());
    S acc = S(0);
    for (const auto v : a->data) acc += v;
    return detail::record<S>(
        TensorT<S>::scalar(acc * inv), {a}, [a, inv](TensorT<S>& o) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            const S g = o.grad[0] * inv;
            for (auto& v : a->grad) v += g;
        });
}

// Sum over one axis; the axis is removed from the shape.
template <typename S>
TensorPtr<S> sum_axis(const TensorPtr<S>& a, std::size_t axis) {
    if (axis >= a->rank()) {
        throw DimensionError("sum_axis: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(a->shape));
    }
    std::int64_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a->shape[i];
    for (std::size_t i = axis + 1; i < a->rank(); ++i) inner *= a->shape[i];
    const std::int64_t axis_n = a->shape[axis];
    Shape out_shape;
    for (std::size_t i = 0; i < a->rank(); ++i) {
        if (i != axis) out_shape.push_back(a->shape[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<S> out(static_cast<std::size_t>(outer * inner), S(0));
    for (std::int64_t u = 0; u < outer; ++u) {
        for (std::int64_t k = 0; k < axis_n; ++k) {
            const S* src = a->data.data() + (u * axis_n + k) * inner;
            S* dst = out.data() + u * inner;
            for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    }
    return detail::record<S>(
        TensorT<S>::create(std::move(out_shape), std::move(out)), {a},
        [a, outer, inner, axis_n](TensorT<S>& o) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::int64_t u = 0; u < outer; ++u) {
                const S* g = o.grad.data() + u * inner;
                for (std::int64_t k = 0; k < axis_n; ++k) {
                    S* dst = a->grad.data() + (u * axis_n + k) * inner;
                    for (std::int64_t i = 0; i < inner; ++i) dst[i] += g[i];
                }
            }
        });
}

template <typename S>
TensorPtr<S> mean_axis(const TensorPtr<S>& a, std::size_t axis) {
    const S inv = S(1) / static_cast<S>(a->shape[axis]);
    return scale(sum_axis(a, axis), inv);
}

// Mean over the trailing two (spatial) axes.
template <typename S>
TensorPtr<S> global_avg_pool(const TensorPtr<S>& a) {
    if (a->rank() < 2) {
        throw DimensionError("global_avg_pool: needs rank >= 2, got " + shape_str(a->shape));
    }
    const std::int64_t w = a->shape[a->rank() - 1];
    const std::int64_t h = a->shape[a->rank() - 2];
    const std::int64_t hw = h * w;
    const std::int64_t outer = a->numel() / hw;
    Shape out_shape(a->shape.begin(), a->shape.end() - 2);
    if (out_shape.empty()) out_shape.push_back(1);
    const S inv = S(1) / static_cast<S>(hw);
    std::vector<S> out(static_cast<std::size_t>(outer));
    for (std::int64_t u = 0; u < outer; ++u) {
        S acc = S(0);
        const S* src = a->data.data() + u * hw;
        for (std::int64_t i = 0; i < hw; ++i) acc += src[i];
        out[static_cast<std::size_t>(u)] = acc * inv;
    }
    return detail::record<S>(
        TensorT<S>::create(std::move(out_shape), std::move(out)), {a},
        [a, outer, hw, inv](TensorT<S>& o) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::int64_t u = 0; u < outer; ++u) {
                const S g = o.grad[static_cast<std::size_t>(u)] * inv;
                S* dst = a->grad.data() + u * hw;
                for (std::int64_t i = 0; i < hw; ++i) dst[i] += g;
            }
        });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void gemm_acc(const S* a, const S* b, S* c, std::int64_t n, std::int64_t k, std::int64_t m,
              bool transpose_a, bool transpose_b) {
    // c[n,m] += op(a) * op(b); plain loops ordered so the inner loop is
    // contiguous in c and vectorizable without float reassociation.
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const S av = transpose_a ? a[kk * n + i] : a[i * k + kk];
            const S* brow = transpose_b ? nullptr : b + kk * m;
            S* crow = c + i * m;
            if (!transpose_b) {
                for (std::int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
            } else {
                for (std::int64_t j = 0; j < m; ++j) crow[j] += av * b[j * k + kk];
            }
        }
    }
}

}  // namespace detail

template <typename S>
TensorPtr<S> matmul(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->rank() != 2 || b->rank() != 2) {
        throw DimensionError("matmul: expects rank-2 inputs, got " + shape_str(a->shape) +
                             " and " + shape_str(b->shape));
    }
    if (a->shape[1] != b->shape[0]) {
        throw DimensionError("matmul: inner extents differ, " + shape_str(a->shape) + " vs " +
                             shape_str(b->shape));
    }
    const std::int64_t n = a->shape[0], k = a->shape[1], m = b->shape[1];
    std::vector<S> out(static_cast<std::size_t>(n * m), S(0));
    detail::gemm_acc(a->data.data(), b->data.data(), out.data(), n, k, m, false, false);
    return detail::record<S>(
        TensorT<S>::create({n, m}, std::move(out)), {a, b}, [a, b, n, k, m](TensorT<S>& o) {
            if (a->requires_grad) {
                a->ensure_grad();
                // dA = dC * B^T
                detail::gemm_acc(o.grad.data(), b->data.data(), a->grad.data(), n, m, k, false,
                                 true);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                // dB = A^T * dC
                detail::gemm_acc(a->data.data(), o.grad.data(), b->grad.data(), k, n, m, true,
                                 false);
            }
        });
}

// Batched matmul: [B,n,k] x [B,k,m] -> [B,n,m].
template <typename S>
TensorPtr<S> bmm(const TensorPtr<S>& a, const TensorPtr<S>& b) {
    if (a->rank() != 3 || b->rank() != 3 || a->shape[0] != b->shape[0] ||
        a->shape[2] != b->shape[1]) {
        throw DimensionError("bmm: incompatible shapes " + shape_str(a->shape) + " and " +
                             shape_str(b->shape));
    }
    const std::int64_t bs = a->shape[0], n = a->shape[1], k = a->shape[2], m = b->shape[2];
    std::vector<S> out(static_cast<std::size_t>(bs * n * m), S(0));
    for (std::int64_t u = 0; u < bs; ++u) {
        detail::gemm_acc(a->data.data() + u * n * k, b->data.data() + u * k * m,
                         out.data() + u * n * m, n, k, m, false, false);
    }
    return detail::record<S>(
        TensorT<S>::create({bs, n, m}, std::move(out)), {a, b},
        [a, b, bs, n, k, m](TensorT<S>& o) {
            for (std::int64_t u = 0; u < bs; ++u) {
                if (a->requires_grad) {
                    a->ensure_grad();
                    detail::gemm_acc(o.grad.data() + u * n * m, b->data.data() + u * k * m,
                                     a->grad.data() + u * n * k, n, m, k, false, true);
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    detail::gemm_acc(a->data.data() + u * n * k, o.grad.data() + u * n * m,
                                     b->grad.data() + u * k * m, k, n, m, true, false);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

template <typename S>
TensorPtr<S> softmax(const TensorPtr<S>& a, std::size_t axis) {
    if (axis >= a->rank()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(a->shape));
    }
    std::int64_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a->shape[i];
    for (std::size_t i = axis + 1; i < a->rank(); ++i) inner *= a->shape[i];
    const std::int64_t axis_n = a->shape[axis];
    std::vector<S> out(a->data.size());
    for (std::int64_t u = 0; u < outer; ++u) {
        for (std::int64_t i = 0; i < inner; ++i) {
            const auto at = [&](std::int64_t k) { return (u * axis_n + k) * inner + i; };
            S mx = a->data[static_cast<std::size_t>(at(0))];
            for (std::int64_t k = 1; k < axis_n; ++k) mx = std::max(mx, a->data[at(k)]);
            S denom = S(0);
            for (std::int64_t k = 0; k < axis_n; ++k) {
                const S e = std::exp(a->data[at(k)] - mx);
                out[static_cast<std::size_t>(at(k))] = e;
                denom += e;
            }
            const S inv = S(1) / denom;
            for (std::int64_t k = 0; k < axis_n; ++k) out[static_cast<std::size_t>(at(k))] *= inv;
        }
    }
    auto result = TensorT<S>::create(a->shape, std::move(out));
    return detail::record<S>(
        result, {a}, [a, raw = result.get(), outer, inner, axis_n](TensorT<S>& o) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::int64_t u = 0; u < outer; ++u) {
                for (std::int64_t i = 0; i < inner; ++i) {
                    const auto at = [&](std::int64_t k) { return (u * axis_n + k) * inner + i; };
                    S dot = S(0);
                    for (std::int64_t k = 0; k < axis_n; ++k) dot += o.grad[at(k)] * raw->data[at(k)];
                    for (std::int64_t k = 0; k < axis_n; ++k) {
                        a->grad[at(k)] += raw->data[at(k)] * (o.grad[at(k)] - dot);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

// 1D cross-correlation over the trailing axis with zero padding at both ends.
// input [b,c,L], kernel [co,c,k], bias [co] -> [b,co,L+2p-k+1].
template <typename S>
TensorPtr<S> conv1d(const TensorPtr<S>& input, const TensorPtr<S>& kernel,
                    const TensorPtr<S>& bias, std::int64_t padding) {
    if (input->rank() != 3 || kernel->rank() != 3) {
        throw DimensionError("conv1d: expects input [b,c,L] and kernel [co,c,k], got " +
                             shape_str(input->shape) + " and " + shape_str(kernel->shape));
    }
    if (input->shape[1] != kernel->shape[1]) {
        throw DimensionError("conv1d: channel mismatch, input " + shape_str(input->shape) +
                             " vs kernel " + shape_str(kernel->shape));
    }
    const std::int64_t b = input->shape[0], c = input->shape[1], L = input->shape[2];
    const std::int64_t co = kernel->shape[0], k = kernel->shape[2];
    if (bias->numel() != co) {
        throw DimensionError("conv1d: bias " + shape_str(bias->shape) + " does not match " +
                             std::to_string(co) + " output channels");
    }
    if (padding < 0) throw ConfigError("conv1d: negative padding");
    const std::int64_t lo = L + 2 * padding - k + 1;
    if (lo < 1) {
        throw DimensionError("conv1d: kernel size " + std::to_string(k) +
                             " too large for length " + std::to_string(L) + " with padding " +
                             std::to_string(padding));
    }
    std::vector<S> out(static_cast<std::size_t>(b * co * lo));
    for (std::int64_t n = 0; n < b; ++n) {
        for (std::int64_t oc = 0; oc < co; ++oc) {
            S* orow = out.data() + (n * co + oc) * lo;
            std::fill(orow, orow + lo, bias->data[oc]);
            for (std::int64_t ic = 0; ic < c; ++ic) {
                const S* irow = input->data.data() + (n * c + ic) * L;
                const S* krow = kernel->data.data() + (oc * c + ic) * k;
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    const S kv = krow[kk];
                    const std::int64_t shift = kk - padding;
                    const std::int64_t start = std::max<std::int64_t>(0, -shift);
                    const std::int64_t stop = std::min(lo, L - shift);
                    for (std::int64_t ox = start; ox < stop; ++ox) {
                        orow[ox] += kv * irow[ox + shift];
                    }
                }
            }
        }
    }
    return detail::record<S>(
        TensorT<S>::create({b, co, lo}, std::move(out)), {input, kernel, bias},
        [input, kernel, bias, b, c, L, co, k, lo, padding](TensorT<S>& o) {
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (std::int64_t n = 0; n < b; ++n) {
                    for (std::int64_t oc = 0; oc < co; ++oc) {
                        const S* g = o.grad.data() + (n * co + oc) * lo;
                        S acc = S(0);
                        for (std::int64_t ox = 0; ox < lo; ++ox) acc += g[ox];
                        bias->grad[oc] += acc;
                    }
                }
            }
            if (input->requires_grad) input->ensure_grad();
            if (kernel->requires_grad) kernel->ensure_grad();
            for (std::int64_t n = 0; n < b; ++n) {
                for (std::int64_t oc = 0; oc < co; ++oc) {
                    const S* g = o.grad.data() + (n * co + oc) * lo;
                    for (std::int64_t ic = 0; ic < c; ++ic) {
                        const S* irow = input->data.data() + (n * c + ic) * L;
                        const S* krow = kernel->data.data() + (oc * c + ic) * k;
                        S* girow = input->requires_grad
                                       ? input->grad.data() + (n * c + ic) * L
                                       : nullptr;
                        S* gkrow = kernel->requires_grad
                                       ? kernel->grad.data() + (oc * c + ic) * k
                                       : nullptr;
                        for (std::int64_t kk = 0; kk < k; ++kk) {
                            const std::int64_t shift = kk - padding;
                            const std::int64_t start = std::max<std::int64_t>(0, -shift);
                            const std::int64_t stop = std::min(lo, L - shift);
                            if (gkrow) {
                                S acc = S(0);
                                for (std::int64_t ox = start; ox < stop; ++ox) {
                                    acc += g[ox] * irow[ox + shift];
                                }
                                gkrow[kk] += acc;
                            }
                            if (girow) {
                                const S kv = krow[kk];
                                for (std::int64_t ox = start; ox < stop; ++ox) {
                                    girow[ox + shift] += g[ox] * kv;
                                }
                            }
                        }
                    }
                }
            }
        });
}

// 2D cross-correlation, zero padding, square stride.
// input [b,c,h,w], kernel [co,c,kh,kw], bias [co] -> [b,co,ho,wo].
template <typename S>
TensorPtr<S> conv2d(const TensorPtr<S>& input, const TensorPtr<S>& kernel,
                    const TensorPtr<S>& bias, std::int64_t stride, std::int64_t padding) {
    if (input->rank() != 4 || kernel->rank() != 4) {
        throw DimensionError("conv2d: expects input [b,c,h,w] and kernel [co,c,kh,kw], got " +
                             shape_str(input->shape) + " and " + shape_str(kernel->shape));
    }
    if (input->shape[1] != kernel->shape[1]) {
        throw DimensionError("conv2d: channel mismatch, input " + shape_str(input->shape) +
                             " vs kernel " + shape_str(kernel->shape));
    }
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (padding < 0) throw ConfigError("conv2d: negative padding");
    const std::int64_t b = input->shape[0], c = input->shape[1];
    const std::int64_t h = input->shape[2], w = input->shape[3];
    const std::int64_t co = kernel->shape[0], kh = kernel->shape[2], kw = kernel->shape[3];
    if (bias->numel() != co) {
        throw DimensionError("conv2d: bias " + shape_str(bias->shape) + " does not match " +
                             std::to_string(co) + " output channels");
    }
    const std::int64_t ho = (h + 2 * padding - kh) / stride + 1;
    const std::int64_t wo = (w + 2 * padding - kw) / stride + 1;
    if (h + 2 * padding < kh || w + 2 * padding < kw) {
        throw DimensionError("conv2d: kernel " + shape_str(kernel->shape) +
                             " too large for input " + shape_str(input->shape) + " with padding " +
                             std::to_string(padding));
    }
    std::vector<S> out(static_cast<std::size_t>(b * co * ho * wo));
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < b; ++n) {
        for (std::int64_t oc = 0; oc < co; ++oc) {
            S* oplane = out.data() + (n * co + oc) * ho * wo;
            std::fill(oplane, oplane + ho * wo, bias->data[oc]);
            for (std::int64_t ic = 0; ic < c; ++ic) {
                const S* iplane = input->data.data() + (n * c + ic) * h * w;
                const S* kplane = kernel->data.data() + (oc * c + ic) * kh * kw;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                        const S kv = kplane[ky * kw + kx];
                        for (std::int64_t oy = 0; oy < ho; ++oy) {
                            const std::int64_t iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= h) continue;
                            const S* irow = iplane + iy * w;
                            S* orow = oplane + oy * wo;
                            const std::int64_t base = kx - padding;
                            std::int64_t ox0 = 0, ox1 = wo;
                            // clamp so ix = ox*stride + base stays in [0, w)
                            while (ox0 < wo && ox0 * stride + base < 0) ++ox0;
                            while (ox1 > ox0 && (ox1 - 1) * stride + base >= w) --ox1;
                            if (stride == 1) {
                                const S* ir = irow + base;
                                for (std::int64_t ox = ox0; ox < ox1; ++ox) {
                                    orow[ox] += kv * ir[ox];
                                }
                            } else {
                                for (std::int64_t ox = ox0; ox < ox1; ++ox) {
                                    orow[ox] += kv * irow[ox * stride + base];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return detail::record<S>(
        TensorT<S>::create({b, co, ho, wo}, std::move(out)), {input, kernel, bias},
        [input, kernel, bias, b, c, h, w, co, kh, kw, ho, wo, stride,
         padding](TensorT<S>& o) {
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (std::int64_t oc = 0; oc < co; ++oc) {
                    S acc = S(0);
                    for (std::int64_t n = 0; n < b; ++n) {
                        const S* g = o.grad.data() + (n * co + oc) * ho * wo;
                        for (std::int64_t i = 0; i < ho * wo; ++i) acc += g[i];
                    }
                    bias->grad[oc] += acc;
                }
            }
            if (kernel->requires_grad) {
                kernel->ensure_grad();
#pragma omp parallel for schedule(static)
                for (std::int64_t oc = 0; oc < co; ++oc) {
                    for (std::int64_t ic = 0; ic < c; ++ic) {
                        S* gk = kernel->grad.data() + (oc * c + ic) * kh * kw;
                        for (std::int64_t n = 0; n < b; ++n) {
                            const S* g = o.grad.data() + (n * co + oc) * ho * wo;
                            const S* iplane = input->data.data() + (n * c + ic) * h * w;
                            for (std::int64_t ky = 0; ky < kh; ++ky) {
                                for (std::int64_t kx = 0; kx < kw; ++kx) {
                                    S acc = S(0);
                                    for (std::int64_t oy = 0; oy < ho; ++oy) {
                                        const std::int64_t iy = oy * stride - padding + ky;
                                        if (iy < 0 || iy >= h) continue;
                                        const S* irow = iplane + iy * w;
                                        const S* grow = g + oy * wo;
                                        const std::int64_t base = kx - padding;
                                        std::int64_t ox0 = 0, ox1 = wo;
                                        while (ox0 < wo && ox0 * stride + base < 0) ++ox0;
                                        while (ox1 > ox0 && (ox1 - 1) * stride + base >= w) --ox1;
                                        for (std::int64_t ox = ox0; ox < ox1; ++ox) {
                                            acc += grow[ox] * irow[ox * stride + base];
                                        }
                                    }
                                    gk[ky * kw + kx] += acc;
                                }
                            }
                        }
                    }
                }
            }
            if (input->requires_grad) {
                input->ensure_grad();
#pragma omp parallel for schedule(static)
                for (std::int64_t n = 0; n < b; ++n) {
                    for (std::int64_t oc = 0; oc < co; ++oc) {
                        const S* g = o.grad.data() + (n * co + oc) * ho * wo;
                        for (std::int64_t ic = 0; ic < c; ++ic) {
                            S* gi = input->grad.data() + (n * c + ic) * h * w;
                            const S* kplane = kernel->data.data() + (oc * c + ic) * kh * kw;
                            for (std::int64_t ky = 0; ky < kh; ++ky) {
                                for (std::int64_t kx = 0; kx < kw; ++kx) {
                                    const S kv = kplane[ky * kw + kx];
                                    for (std::int64_t oy = 0; oy < ho; ++oy) {
                                        const std::int64_t iy = oy * stride - padding + ky;
                                        if (iy < 0 || iy >= h) continue;
                                        S* girow = gi + iy * w;
                                        const S* grow = g + oy * wo;
                                        const std::int64_t base = kx - padding;
                                        std::int64_t ox0 = 0, ox1 = wo;
                                        while (ox0 < wo && ox0 * stride + base < 0) ++ox0;
                                        while (ox1 > ox0 && (ox1 - 1) * stride + base >= w) --ox1;
                                        for (std::int64_t ox = ox0; ox < ox1; ++ox) {
                                            girow[ox * stride + base] += grow[ox] * kv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

// Running moments for one normalization site. Updated in train mode by
// exponential moving average, consumed in eval mode. Held as plain tensors
// (never on the tape) so checkpoints can adopt them in place.
template <typename S>
struct BatchNormState {
    TensorPtr<S> running_mean;
    TensorPtr<S> running_var;
    S momentum = S(0.1);

    BatchNormState() = default;
    explicit BatchNormState(std::int64_t channels, S mom = S(0.1))
        : running_mean(TensorT<S>::zeros({channels})),
          running_var(TensorT<S>::full({channels}, S(1))),
          momentum(mom) {}
};

// Normalizes over every axis except `channel_axis`. Population (biased)
// variance is used both for normalization and the running update.
template <typename S>
TensorPtr<S> batchnorm(const TensorPtr<S>& input, const TensorPtr<S>& gamma,
                       const TensorPtr<S>& beta, BatchNormState<S>& state, Mode mode,
                       S eps = S(1e-5), std::size_t channel_axis = 1) {
    if (channel_axis >= input->rank()) {
        throw DimensionError("batchnorm: channel axis " + std::to_string(channel_axis) +
                             " out of range for " + shape_str(input->shape));
    }
    const std::int64_t C = input->shape[channel_axis];
    if (gamma->numel() != C || beta->numel() != C) {
        throw DimensionError("batchnorm: gamma " + shape_str(gamma->shape) + " / beta " +
                             shape_str(beta->shape) + " do not match " + std::to_string(C) +
                             " channels");
    }
    if (!state.running_mean || state.running_mean->numel() != C) {
        throw DimensionError("batchnorm: state tracks " +
                             std::to_string(state.running_mean ? state.running_mean->numel() : 0) +
                             " channels, input has " + std::to_string(C));
    }
    std::int64_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < channel_axis; ++i) outer *= input->shape[i];
    for (std::size_t i = channel_axis + 1; i < input->rank(); ++i) inner *= input->shape[i];
    const std::int64_t per_channel = outer * inner;

    std::vector<S> use_mean(static_cast<std::size_t>(C));
    std::vector<S> use_var(static_cast<std::size_t>(C));
    if (mode == Mode::train) {
        if (per_channel < 2) {
            throw DataError("batchnorm: degenerate batch, " + std::to_string(per_channel) +
                            " element(s) per channel in train mode");
        }
        const S inv_n = S(1) / static_cast<S>(per_channel);
        for (std::int64_t ch = 0; ch < C; ++ch) {
            S m = S(0);
            for (std::int64_t u = 0; u < outer; ++u) {
                const S* src = input->data.data() + (u * C + ch) * inner;
                for (std::int64_t i = 0; i < inner; ++i) m += src[i];
            }
            m *= inv_n;
            S v = S(0);
            for (std::int64_t u = 0; u < outer; ++u) {
                const S* src = input->data.data() + (u * C + ch) * inner;
                for (std::int64_t i = 0; i < inner; ++i) {
                    const S d = src[i] - m;
                    v += d * d;
                }
            }
            v *= inv_n;
            use_mean[ch] = m;
            use_var[ch] = v;
            state.running_mean->data[ch] = (S(1) - state.momentum) * state.running_mean->data[ch] +
                                           state.momentum * m;
            state.running_var->data[ch] = (S(1) - state.momentum) * state.running_var->data[ch] +
                                          state.momentum * v;
        }
    } else {
        use_mean = state.running_mean->data;
        use_var = state.running_var->data;
    }

    std::vector<S> inv_std(static_cast<std::size_t>(C));
    for (std::int64_t ch = 0; ch < C; ++ch) inv_std[ch] = S(1) / std::sqrt(use_var[ch] + eps);

    std::vector<S> xhat(input->data.size());
    std::vector<S> out(input->data.size());
    for (std::int64_t u = 0; u < outer; ++u) {
        for (std::int64_t ch = 0; ch < C; ++ch) {
            const S* src = input->data.data() + (u * C + ch) * inner;
            S* xh = xhat.data() + (u * C + ch) * inner;
            S* dst = out.data() + (u * C + ch) * inner;
            const S m = use_mean[ch], is = inv_std[ch];
            const S g = gamma->data[ch], bt = beta->data[ch];
            for (std::int64_t i = 0; i < inner; ++i) {
                xh[i] = (src[i] - m) * is;
                dst[i] = g * xh[i] + bt;
            }
        }
    }
    const bool train_stats = (mode == Mode::train);
    return detail::record<S>(
        TensorT<S>::create(input->shape, std::move(out)), {input, gamma, beta},
        [input, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), outer, inner,
         C, per_channel, train_stats](TensorT<S>& o) {
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            std::vector<S> sum_dy(static_cast<std::size_t>(C), S(0));
            std::vector<S> sum_dy_xhat(static_cast<std::size_t>(C), S(0));
            for (std::int64_t u = 0; u < outer; ++u) {
                for (std::int64_t ch = 0; ch < C; ++ch) {
                    const S* g = o.grad.data() + (u * C + ch) * inner;
                    const S* xh = xhat.data() + (u * C + ch) * inner;
                    S sd = S(0), sdx = S(0);
                    for (std::int64_t i = 0; i < inner; ++i) {
                        sd += g[i];
                        sdx += g[i] * xh[i];
                    }
                    sum_dy[ch] += sd;
                    sum_dy_xhat[ch] += sdx;
                }
            }
            if (gamma->requires_grad) {
                for (std::int64_t ch = 0; ch < C; ++ch) gamma->grad[ch] += sum_dy_xhat[ch];
            }
            if (beta->requires_grad) {
                for (std::int64_t ch = 0; ch < C; ++ch) beta->grad[ch] += sum_dy[ch];
            }
            if (!input->requires_grad) return;
            input->ensure_grad();
            const S inv_n = S(1) / static_cast<S>(per_channel);
            for (std::int64_t u = 0; u < outer; ++u) {
                for (std::int64_t ch = 0; ch < C; ++ch) {
                    const S* g = o.grad.data() + (u * C + ch) * inner;
                    const S* xh = xhat.data() + (u * C + ch) * inner;
                    S* gi = input->grad.data() + (u * C + ch) * inner;
                    const S scale_ = gamma->data[ch] * inv_std[ch];
                    if (train_stats) {
                        const S mg = sum_dy[ch] * inv_n;
                        const S mgx = sum_dy_xhat[ch] * inv_n;
                        for (std::int64_t i = 0; i < inner; ++i) {
                            gi[i] += scale_ * (g[i] - mg - xh[i] * mgx);
                        }
                    } else {
                        for (std::int64_t i = 0; i < inner; ++i) gi[i] += scale_ * g[i];
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// multi-head scaled dot-product attention
// ---------------------------------------------------------------------------

// q [b,nq,d], k [b,nk,d], v [b,nk,d] -> [b,nq,d]. Pure attention: no learned
// projections, softmax over the key axis per head.
template <typename S>
TensorPtr<S> multi_head_attention(const TensorPtr<S>& q, const TensorPtr<S>& k,
                                  const TensorPtr<S>& v, std::int64_t heads) {
    if (q->rank() != 3 || k->rank() != 3 || v->rank() != 3) {
        throw DimensionError("multi_head_attention: expects [b,n,d] inputs, got " +
                             shape_str(q->shape) + ", " + shape_str(k->shape) + ", " +
                             shape_str(v->shape));
    }
    const std::int64_t b = q->shape[0], nq = q->shape[1], d = q->shape[2];
    const std::int64_t nk = k->shape[1];
    if (k->shape[0] != b || v->shape[0] != b || k->shape[2] != d || v->shape[2] != d ||
        v->shape[1] != nk) {
        throw DimensionError("multi_head_attention: incompatible shapes " + shape_str(q->shape) +
                             ", " + shape_str(k->shape) + ", " + shape_str(v->shape));
    }
    if (heads < 1 || d % heads != 0) {
        throw ConfigError("multi_head_attention: feature dimension " + std::to_string(d) +
                          " not divisible by " + std::to_string(heads) + " heads");
    }
    const std::int64_t dh = d / heads;
    // [b,n,heads,dh] -> [b,heads,n,dh] -> [b*heads,n,dh]
    const auto split = [&](const TensorPtr<S>& t, std::int64_t n) {
        return reshape(permute(reshape(t, {b, n, heads, dh}), {0, 2, 1, 3}), {b * heads, n, dh});
    };
    auto qh = split(q, nq);
    auto kh = split(k, nk);
    auto vh = split(v, nk);
    auto scores = scale(bmm(qh, permute(kh, {0, 2, 1})), S(1) / static_cast<S>(std::sqrt(double(dh))));
    auto attn = softmax(scores, 2);
    auto ctx = bmm(attn, vh);
    return reshape(permute(reshape(ctx, {b, heads, nq, dh}), {0, 2, 1, 3}), {b, nq, d});
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Non-leaf grads are reset per call so
// repeated backward passes accumulate additively into leaves.
template <typename S>
void backward(const TensorPtr<S>& loss) {
    if (!loss) throw ContractError("backward: null loss");
    if (loss->numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss->shape));
    }
    if (!loss->requires_grad) {
        throw ContractError("backward: loss is not connected to any requires_grad tensor");
    }
    // iterative post-order DFS over the requires_grad subgraph
    std::vector<TensorT<S>*> order;
    std::unordered_set<TensorT<S>*> visited;
    std::vector<std::pair<TensorT<S>*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorT<S>* p = node->parents[next++].get();
            if (p && p->requires_grad && visited.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (auto* t : order) {
        if (t->leaf()) {
            t->ensure_grad();
        } else {
            t->grad.assign(t->data.size(), S(0));
        }
    }
    if (loss->leaf()) {
        loss->grad[0] += S(1);
    } else {
        loss->grad[0] = S(1);
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop();
    }
}

}  // namespace tatr
