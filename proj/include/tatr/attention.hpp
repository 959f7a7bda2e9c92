#pragma once

#include <cmath>
#include <optional>

#include "tatr/nn.hpp"

namespace tatr {

// -- tensor ops for gated temporal fusion -------------------------------------

// Per-slice gating: out[b,i,c,y,x] = w[b,i,c] * f[b,i,c,y,x]. Gates broadcast
// over the spatial axes only.
template <typename S>
TensorPtr<S> scale_frames(const TensorPtr<S>& f, const TensorPtr<S>& w) {
    if (f->rank() != 5 || w->rank() != 3 || f->shape[0] != w->shape[0] ||
        f->shape[1] != w->shape[1] || f->shape[2] != w->shape[2]) {
        throw DimensionError("scale_frames: gates " + shape_str(w->shape) +
                             " do not match features " + shape_str(f->shape));
    }
    const std::int64_t bm = w->numel() / w->shape[2], c = f->shape[2];
    const std::int64_t hw = f->shape[3] * f->shape[4];
    std::vector<S> out(f->data.size());
    for (std::int64_t u = 0; u < bm * c; ++u) {
        const S g = w->data[u];
        const S* src = f->data.data() + u * hw;
        S* dst = out.data() + u * hw;
        for (std::int64_t i = 0; i < hw; ++i) dst[i] = g * src[i];
    }
    return detail::record<S>(
        TensorT<S>::create(f->shape, std::move(out)), {f, w}, [f, w, bm, c, hw](TensorT<S>& o) {
            if (f->requires_grad) {
                f->ensure_grad();
                for (std::int64_t u = 0; u < bm * c; ++u) {
                    const S g = w->data[u];
                    const S* go = o.grad.data() + u * hw;
                    S* gf = f->grad.data() + u * hw;
                    for (std::int64_t i = 0; i < hw; ++i) gf[i] += g * go[i];
                }
            }
            if (w->requires_grad) {
                w->ensure_grad();
                for (std::int64_t u = 0; u < bm * c; ++u) {
                    const S* go = o.grad.data() + u * hw;
                    const S* src = f->data.data() + u * hw;
                    S acc = S(0);
                    for (std::int64_t i = 0; i < hw; ++i) acc += go[i] * src[i];
                    w->grad[u] += acc;
                }
            }
        });
}

// Gated temporal sum: out[b,c,y,x] = sum_i w[b,i,c] * f[b,i,c,y,x].
// Collapses the clip axis of per-frame class maps.
template <typename S>
TensorPtr<S> fuse_frames(const TensorPtr<S>& f, const TensorPtr<S>& w) {
    if (f->rank() != 5 || w->rank() != 3 || f->shape[0] != w->shape[0] ||
        f->shape[1] != w->shape[1] || f->shape[2] != w->shape[2]) {
        throw DimensionError("fuse_frames: gates " + shape_str(w->shape) +
                             " do not match features " + shape_str(f->shape));
    }
    const std::int64_t b = f->shape[0], m = f->shape[1], c = f->shape[2];
    const std::int64_t hw = f->shape[3] * f->shape[4];
    std::vector<S> out(static_cast<std::size_t>(b * c * hw), S(0));
    for (std::int64_t n = 0; n < b; ++n) {
        for (std::int64_t i = 0; i < m; ++i) {
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const S g = w->data[(n * m + i) * c + ch];
                const S* src = f->data.data() + ((n * m + i) * c + ch) * hw;
                S* dst = out.data() + (n * c + ch) * hw;
                for (std::int64_t p = 0; p < hw; ++p) dst[p] += g * src[p];
            }
        }
    }
    return detail::record<S>(
        TensorT<S>::create({b, c, f->shape[3], f->shape[4]}, std::move(out)), {f, w},
        [f, w, b, m, c, hw](TensorT<S>& o) {
            if (f->requires_grad) f->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            for (std::int64_t n = 0; n < b; ++n) {
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        const S g = w->data[(n * m + i) * c + ch];
                        const S* go = o.grad.data() + (n * c + ch) * hw;
                        const S* src = f->data.data() + ((n * m + i) * c + ch) * hw;
                        if (f->requires_grad) {
                            S* gf = f->grad.data() + ((n * m + i) * c + ch) * hw;
                            for (std::int64_t p = 0; p < hw; ++p) gf[p] += g * go[p];
                        }
                        if (w->requires_grad) {
                            S acc = S(0);
                            for (std::int64_t p = 0; p < hw; ++p) acc += go[p] * src[p];
                            w->grad[(n * m + i) * c + ch] += acc;
                        }
                    }
                }
            }
        });
}

// Spatial-map broadcast: out[n,c,y,x] = x[n,c,y,x] * a[n,1,y,x].
template <typename S>
TensorPtr<S> scale_by_map(const TensorPtr<S>& x, const TensorPtr<S>& a) {
    if (x->rank() != 4 || a->rank() != 4 || a->shape[1] != 1 || x->shape[0] != a->shape[0] ||
        x->shape[2] != a->shape[2] || x->shape[3] != a->shape[3]) {
        throw DimensionError("scale_by_map: map " + shape_str(a->shape) +
                             " does not broadcast over " + shape_str(x->shape));
    }
    const std::int64_t n = x->shape[0], c = x->shape[1], hw = x->shape[2] * x->shape[3];
    std::vector<S> out(x->data.size());
    for (std::int64_t u = 0; u < n; ++u) {
        const S* amap = a->data.data() + u * hw;
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const S* src = x->data.data() + (u * c + ch) * hw;
            S* dst = out.data() + (u * c + ch) * hw;
            for (std::int64_t p = 0; p < hw; ++p) dst[p] = src[p] * amap[p];
        }
    }
    return detail::record<S>(
        TensorT<S>::create(x->shape, std::move(out)), {x, a}, [x, a, n, c, hw](TensorT<S>& o) {
            if (x->requires_grad) {
                x->ensure_grad();
                for (std::int64_t u = 0; u < n; ++u) {
                    const S* amap = a->data.data() + u * hw;
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        const S* go = o.grad.data() + (u * c + ch) * hw;
                        S* gx = x->grad.data() + (u * c + ch) * hw;
                        for (std::int64_t p = 0; p < hw; ++p) gx[p] += go[p] * amap[p];
                    }
                }
            }
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::int64_t u = 0; u < n; ++u) {
                    S* ga = a->grad.data() + u * hw;
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        const S* go = o.grad.data() + (u * c + ch) * hw;
                        const S* src = x->data.data() + (u * c + ch) * hw;
                        for (std::int64_t p = 0; p < hw; ++p) ga[p] += go[p] * src[p];
                    }
                }
            }
        });
}

// -- configuration -------------------------------------------------------------

enum class FusionPosition { early, late };

// Temporal attention configuration: fusion position relative to the
// instrument-CAM guidance, stack depth, which component branches carry a
// temporal module, and the temporal kernel width.
struct TemporalConfig {
    FusionPosition position = FusionPosition::late;
    int layers = 2;
    bool on_verb = true;
    bool on_instrument = false;
    bool on_target = false;
    std::int64_t kernel = 3;

    void validate() const {
        if (layers != 1 && layers != 2) {
            throw ConfigError("temporal attention supports 1 or 2 layers, got " +
                              std::to_string(layers));
        }
        if (kernel < 1 || kernel % 2 == 0) {
            throw ConfigError("temporal kernel must be odd and positive, got " +
                              std::to_string(kernel));
        }
    }
};

// -- temporal attention ----------------------------------------------------------

// Gate generator of one temporal attention layer: spatial pooling, 1D
// convolution along the clip axis (class maps as channels, same-length
// padding), batch normalization over the class channel, sigmoid.
template <typename S>
struct TamGate {
    Conv1dLayer<S> conv;
    BatchNormLayer<S> bn;

    TamGate() = default;
    TamGate(std::int64_t classes, std::int64_t kernel, Rng& rng)
        : conv(classes, classes, kernel, kernel / 2, rng), bn(classes) {
        if (kernel % 2 == 0) {
            throw ConfigError("temporal gate kernel must be odd, got " + std::to_string(kernel));
        }
    }

    // f [b,m,c,h,w] -> gates [b,m,c], every entry strictly in (0,1)
    TensorPtr<S> forward(const TensorPtr<S>& f, Mode mode) const {
        auto pooled = global_avg_pool(f);                    // [b,m,c]
        auto seq = permute(pooled, {0, 2, 1});               // [b,c,m]
        auto pre = bn.forward(conv.forward(seq), mode);      // [b,c,m]
        return permute(sigmoid(pre), {0, 2, 1});             // [b,m,c]
    }

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        conv.register_into(ps, prefix + ".conv");
        bn.register_into(ps, prefix + ".bn");
    }
};

// Temporal attention over per-frame class maps. One layer gates and fuses the
// clip axis in a single step; the stacked variant first gates every frame
// slice, renormalizes and rectifies, then gates and fuses.
template <typename S>
struct TemporalAttention {
    TamGate<S> gate1;
    TamGate<S> gate2;
    BatchNormLayer<S> mid_bn;  // between the stacked layers, class channel
    int layers = 1;

    TemporalAttention() = default;
    TemporalAttention(std::int64_t classes, const TemporalConfig& cfg, Rng& rng)
        : gate1(classes, cfg.kernel, rng), layers(cfg.layers) {
        cfg.validate();
        if (layers == 2) {
            gate2 = TamGate<S>(classes, cfg.kernel, rng);
            mid_bn = BatchNormLayer<S>(classes, 2);
        }
    }

    // f [b,m,c,h,w] -> fused [b,c,h,w]
    TensorPtr<S> apply(const TensorPtr<S>& f, Mode mode) const {
        if (layers == 1) {
            return fuse_frames(f, gate1.forward(f, mode));
        }
        auto gated = scale_frames(f, gate1.forward(f, mode));
        auto mid = relu(mid_bn.forward(gated, mode));
        return fuse_frames(mid, gate2.forward(mid, mode));
    }

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        gate1.register_into(ps, prefix + ".gate1");
        if (layers == 2) {
            mid_bn.register_into(ps, prefix + ".mid_bn");
            gate2.register_into(ps, prefix + ".gate2");
        }
    }
};

// -- guided attention --------------------------------------------------------------

// Class-activation-guided attention for one component branch. Attention
// scores are the scaled per-location dot product between projected input
// features and projected CAM context; the spatial softmax is rescaled so a
// uniform attention map passes features through unchanged, and the attended
// features map to class channels through a 1x1 projection.
template <typename S>
struct GuidedAttention {
    Conv2dLayer<S> query_proj;    // in -> attn_dim, 1x1
    Conv2dLayer<S> context_proj;  // cam channels -> attn_dim, 1x1
    Conv2dLayer<S> class_proj;    // in -> classes, 1x1
    std::int64_t attn_dim = 0;

    GuidedAttention() = default;
    GuidedAttention(std::int64_t in, std::int64_t cam_channels, std::int64_t classes,
                    std::int64_t attn_dim_, Rng& rng)
        : query_proj(in, attn_dim_, 1, 1, 0, rng),
          context_proj(cam_channels, attn_dim_, 1, 1, 0, rng),
          class_proj(in, classes, 1, 1, 0, rng),
          attn_dim(attn_dim_) {}

    // features [n,in,h,w], cam [n,cam,h,w] -> [n,classes,h,w]
    TensorPtr<S> forward(const TensorPtr<S>& features, const TensorPtr<S>& cam) const {
        if (features->shape[2] != cam->shape[2] || features->shape[3] != cam->shape[3]) {
            throw DimensionError("guided attention: spatial extents differ, features " +
                                 shape_str(features->shape) + " vs cam " + shape_str(cam->shape));
        }
        const std::int64_t n = features->shape[0];
        const std::int64_t h = features->shape[2], w = features->shape[3];
        auto q = query_proj.forward(features);
        auto ctx = context_proj.forward(cam);
        auto scores = scale(sum_axis(mul(q, ctx), 1),
                            S(1) / static_cast<S>(std::sqrt(static_cast<double>(attn_dim))));
        auto attn = softmax(reshape(scores, {n, h * w}), 1);
        auto attn_map = reshape(scale(attn, static_cast<S>(h * w)), {n, 1, h, w});
        return class_proj.forward(scale_by_map(features, attn_map));
    }

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        query_proj.register_into(ps, prefix + ".query");
        context_proj.register_into(ps, prefix + ".context");
        class_proj.register_into(ps, prefix + ".cls");
    }
};

}  // namespace tatr
