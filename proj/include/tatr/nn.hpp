#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tatr/tensor.hpp"

namespace tatr {

// Flat registry of named tensors. `params` receive gradients and optimizer
// updates; `buffers` (batch-norm running moments) are plain state. Both go
// into checkpoints. Names must be unique within a model.
template <typename S>
struct ParamSet {
    std::vector<std::pair<std::string, TensorPtr<S>>> params;
    std::vector<std::pair<std::string, TensorPtr<S>>> buffers;

    void add_param(const std::string& name, const TensorPtr<S>& t) {
        for (const auto& [n, _] : params) {
            if (n == name) throw ContractError("duplicate parameter name: " + name);
        }
        params.emplace_back(name, t);
    }
    void add_buffer(const std::string& name, const TensorPtr<S>& t) {
        for (const auto& [n, _] : buffers) {
            if (n == name) throw ContractError("duplicate buffer name: " + name);
        }
        buffers.emplace_back(name, t);
    }

    std::vector<TensorPtr<S>> param_tensors() const {
        std::vector<TensorPtr<S>> out;
        out.reserve(params.size());
        for (const auto& [_, t] : params) out.push_back(t);
        return out;
    }
};

namespace detail {

// Kaiming-style uniform fan-in init.
template <typename S>
TensorPtr<S> init_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(std::max<std::int64_t>(1, fan_in)));
    const auto n = numel_of(shape);
    std::vector<S> vals(static_cast<std::size_t>(n));
    for (auto& v : vals) v = static_cast<S>(rng.uniform(-bound, bound));
    return TensorT<S>::create(std::move(shape), std::move(vals), true);
}

}  // namespace detail

template <typename S>
struct Conv2dLayer {
    TensorPtr<S> weight;  // [co, ci, k, k]
    TensorPtr<S> bias;    // [co]
    std::int64_t stride = 1;
    std::int64_t padding = 0;

    Conv2dLayer() = default;
    Conv2dLayer(std::int64_t ci, std::int64_t co, std::int64_t k, std::int64_t stride_,
                std::int64_t padding_, Rng& rng)
        : stride(stride_), padding(padding_) {
        weight = detail::init_uniform<S>({co, ci, k, k}, ci * k * k, rng);
        bias = TensorT<S>::zeros({co}, true);
    }

    TensorPtr<S> forward(const TensorPtr<S>& x) const {
        return conv2d(x, weight, bias, stride, padding);
    }

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        ps.add_param(prefix + ".weight", weight);
        ps.add_param(prefix + ".bias", bias);
    }
};

template <typename S>
struct Conv1dLayer {
    TensorPtr<S> weight;  // [co, ci, k]
    TensorPtr<S> bias;    // [co]
    std::int64_t padding = 0;

    Conv1dLayer() = default;
    Conv1dLayer(std::int64_t ci, std::int64_t co, std::int64_t k, std::int64_t padding_, Rng& rng)
        : padding(padding_) {
        weight = detail::init_uniform<S>({co, ci, k}, ci * k, rng);
        bias = TensorT<S>::zeros({co}, true);
    }

    TensorPtr<S> forward(const TensorPtr<S>& x) const {
        return conv1d(x, weight, bias, padding);
    }

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        ps.add_param(prefix + ".weight", weight);
        ps.add_param(prefix + ".bias", bias);
    }
};

template <typename S>
struct BatchNormLayer {
    TensorPtr<S> gamma;
    TensorPtr<S> beta;
    mutable BatchNormState<S> state;
    std::size_t channel_axis = 1;
    S eps = S(1e-5);

    BatchNormLayer() = default;
    explicit BatchNormLayer(std::int64_t channels, std::size_t channel_axis_ = 1)
        : state(channels), channel_axis(channel_axis_) {
        gamma = TensorT<S>::full({channels}, S(1), true);
        beta = TensorT<S>::zeros({channels}, true);
    }

    TensorPtr<S> forward(const TensorPtr<S>& x, Mode mode) const {
        return batchnorm(x, gamma, beta, state, mode, eps, channel_axis);
    }

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        ps.add_param(prefix + ".gamma", gamma);
        ps.add_param(prefix + ".beta", beta);
        ps.add_buffer(prefix + ".running_mean", state.running_mean);
        ps.add_buffer(prefix + ".running_var", state.running_var);
    }
};

template <typename S>
struct LinearLayer {
    TensorPtr<S> weight;  // [in, out]
    TensorPtr<S> bias;    // [out]

    LinearLayer() = default;
    LinearLayer(std::int64_t in, std::int64_t out, Rng& rng) {
        weight = detail::init_uniform<S>({in, out}, in, rng);
        bias = TensorT<S>::zeros({out}, true);
    }

    // x [n, in] -> [n, out]
    TensorPtr<S> forward(const TensorPtr<S>& x) const {
        return add_rowvec(matmul(x, weight), bias);
    }

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        ps.add_param(prefix + ".weight", weight);
        ps.add_param(prefix + ".bias", bias);
    }
};

// Self-attention block with learned q/k/v/out projections and a residual
// connection around the attention.
template <typename S>
struct AttentionBlock {
    LinearLayer<S> q_proj, k_proj, v_proj, out_proj;
    std::int64_t heads = 4;

    AttentionBlock() = default;
    AttentionBlock(std::int64_t dim, std::int64_t heads_, Rng& rng)
        : q_proj(dim, dim, rng),
          k_proj(dim, dim, rng),
          v_proj(dim, dim, rng),
          out_proj(dim, dim, rng),
          heads(heads_) {}

    // tokens [b, n, d] -> [b, n, d]
    TensorPtr<S> forward(const TensorPtr<S>& tokens) const {
        const std::int64_t b = tokens->shape[0], n = tokens->shape[1], d = tokens->shape[2];
        auto flat = reshape(tokens, {b * n, d});
        auto q = reshape(q_proj.forward(flat), {b, n, d});
        auto k = reshape(k_proj.forward(flat), {b, n, d});
        auto v = reshape(v_proj.forward(flat), {b, n, d});
        auto ctx = multi_head_attention(q, k, v, heads);
        auto out = reshape(out_proj.forward(reshape(ctx, {b * n, d})), {b, n, d});
        return add(tokens, out);
    }

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        q_proj.register_into(ps, prefix + ".q");
        k_proj.register_into(ps, prefix + ".k");
        v_proj.register_into(ps, prefix + ".v");
        out_proj.register_into(ps, prefix + ".out");
    }
};

}  // namespace tatr
