#pragma once

#include <optional>

#include "tatr/attention.hpp"
#include "tatr/backbone.hpp"
#include "tatr/decoder.hpp"

namespace tatr {

struct ModelConfig {
    std::int64_t height = 64;
    std::int64_t width = 112;
    std::int64_t m = 6;  // clip size
    std::array<std::int64_t, 4> widths = {16, 32, 64, 128};
    std::int64_t wsl_width = 64;
    std::int64_t scene_channels = 64;
    std::int64_t attn_dim = 32;
    std::int64_t embed_dim = 64;
    std::int64_t decoder_layers = 2;
    std::int64_t decoder_heads = 4;
    TemporalConfig temporal;

    void validate() const {
        if (m < 1) throw ConfigError("clip size m must be >= 1, got " + std::to_string(m));
        if (height < 16 || width < 16) {
            throw ConfigError("input resolution must be at least 16x16");
        }
        for (auto w : widths) {
            if (w < 1) throw ConfigError("backbone widths must be positive");
        }
        if (embed_dim % decoder_heads != 0) {
            throw ConfigError("decoder embedding width " + std::to_string(embed_dim) +
                              " is not divisible by " + std::to_string(decoder_heads) + " heads");
        }
        temporal.validate();
    }
};

// The full recognizer: shared per-frame backbone, weakly supervised
// instrument localization, CAM-guided verb/target branches with temporal
// attention per configuration, scene bottleneck and the triplet decoder.
template <typename S>
class TripletModel {
public:
    struct Output {
        DecoderOutput<S> logits;
        TensorPtr<S> wsl_logits;  // spatial mean of the current frame's CAM
        TensorPtr<S> cam;         // [b,m,6,h',w']
        TensorPtr<S> scene;       // [b,scene_channels,h',w']
        TensorPtr<S> h_i;         // instrument map fed to the decoder
        TensorPtr<S> h_v;         // fused verb map
        TensorPtr<S> h_t;         // target map
    };

    explicit TripletModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        auto rng = Rng(hash_combine(seed, 0x6d6f64656cULL));
        backbone_ = Backbone<S>(cfg.widths, rng);
        const auto d = backbone_.out_channels();
        wsl_ = WslHead<S>(d, cfg.wsl_width, kInstrumentClasses, rng);
        scene_ = SceneBottleneck<S>(d, cfg.scene_channels, rng);
        const bool late = cfg.temporal.position == FusionPosition::late;
        // in late fusion the verb branch is guided before temporal fusion and
        // consumes backbone features; in early fusion it is guided after and
        // consumes the fused verb-channel map
        guided_verb_ = GuidedAttention<S>(late ? d : kVerbClasses, kInstrumentClasses,
                                          kVerbClasses, cfg.attn_dim, rng);
        guided_target_ =
            GuidedAttention<S>(d, kInstrumentClasses, kTargetClasses, cfg.attn_dim, rng);
        if (!late) early_proj_ = Conv2dLayer<S>(d, kVerbClasses, 1, 1, 0, rng);
        if (cfg.temporal.on_verb) {
            tam_verb_ = TemporalAttention<S>(kVerbClasses, cfg.temporal, rng);
        }
        if (cfg.temporal.on_instrument) {
            tam_instrument_ = TemporalAttention<S>(kInstrumentClasses, cfg.temporal, rng);
        }
        if (cfg.temporal.on_target) {
            tam_target_ = TemporalAttention<S>(kTargetClasses, cfg.temporal, rng);
        }
        decoder_ = TripletDecoder<S>(cfg.scene_channels, cfg.embed_dim, cfg.decoder_layers,
                                     cfg.decoder_heads, rng);
    }

    // clips [b,3,m,h,w] -> logits and inspection maps
    Output forward(const TensorPtr<S>& clips, Mode mode) const {
        if (clips->rank() != 5 || clips->shape[1] != 3 || clips->shape[2] != cfg_.m ||
            clips->shape[3] != cfg_.height || clips->shape[4] != cfg_.width) {
            throw DimensionError("model expects clips [b,3," + std::to_string(cfg_.m) + "," +
                                 std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) +
                                 "], got " + shape_str(clips->shape));
        }
        const std::int64_t b = clips->shape[0], m = cfg_.m;
        auto frames = reshape(permute(clips, {0, 2, 1, 3, 4}),
                              {b * m, 3, cfg_.height, cfg_.width});
        auto feats = backbone_.forward(frames, mode);  // [bm,d,h',w']
        const std::int64_t d = feats->shape[1], hp = feats->shape[2], wp = feats->shape[3];
        auto cam = wsl_.forward(feats);  // [bm,6,h',w']

        auto feats5 = reshape(feats, {b, m, d, hp, wp});
        auto cam5 = reshape(cam, {b, m, kInstrumentClasses, hp, wp});
        auto last_feats = select(feats5, 1, m - 1);
        auto last_cam = select(cam5, 1, m - 1);

        Output out;
        out.cam = cam5;
        out.wsl_logits = global_avg_pool(last_cam);
        out.scene = scene_.forward(last_feats);

        // instrument branch
        out.h_i = tam_instrument_ ? tam_instrument_->apply(cam5, mode) : last_cam;

        // verb branch
        if (cfg_.temporal.position == FusionPosition::late) {
            auto vmaps = guided_verb_.forward(feats, cam);  // per frame, [bm,10,h',w']
            auto vmaps5 = reshape(vmaps, {b, m, kVerbClasses, hp, wp});
            out.h_v = tam_verb_ ? tam_verb_->apply(vmaps5, mode) : select(vmaps5, 1, m - 1);
        } else {
            auto proj = reshape(early_proj_->forward(feats), {b, m, kVerbClasses, hp, wp});
            auto fused = tam_verb_ ? tam_verb_->apply(proj, mode) : select(proj, 1, m - 1);
            out.h_v = guided_verb_.forward(fused, last_cam);  // current frame only
        }

        // target branch
        if (tam_target_) {
            auto tmaps = reshape(guided_target_.forward(feats, cam),
                                 {b, m, kTargetClasses, hp, wp});
            out.h_t = tam_target_->apply(tmaps, mode);
        } else {
            out.h_t = guided_target_.forward(last_feats, last_cam);
        }

        out.logits = decoder_.forward(out.scene, out.h_i, out.h_v, out.h_t);
        return out;
    }

    ParamSet<S> params() const {
        ParamSet<S> ps;
        backbone_.register_into(ps, "backbone");
        wsl_.register_into(ps, "wsl");
        scene_.register_into(ps, "scene");
        guided_verb_.register_into(ps, "guided_verb");
        guided_target_.register_into(ps, "guided_target");
        if (early_proj_) early_proj_->register_into(ps, "early_proj");
        if (tam_verb_) tam_verb_->register_into(ps, "tam_verb");
        if (tam_instrument_) tam_instrument_->register_into(ps, "tam_instrument");
        if (tam_target_) tam_target_->register_into(ps, "tam_target");
        decoder_.register_into(ps, "decoder");
        return ps;
    }

    const ModelConfig& config() const { return cfg_; }
    const Backbone<S>& backbone() const { return backbone_; }
    const WslHead<S>& wsl() const { return wsl_; }
    const SceneBottleneck<S>& scene_bottleneck() const { return scene_; }
    const GuidedAttention<S>& guided_verb() const { return guided_verb_; }
    const GuidedAttention<S>& guided_target() const { return guided_target_; }
    const TemporalAttention<S>* temporal_verb() const {
        return tam_verb_ ? &*tam_verb_ : nullptr;
    }
    const TripletDecoder<S>& decoder() const { return decoder_; }

private:
    ModelConfig cfg_;
    Backbone<S> backbone_;
    WslHead<S> wsl_;
    SceneBottleneck<S> scene_;
    GuidedAttention<S> guided_verb_;
    GuidedAttention<S> guided_target_;
    std::optional<Conv2dLayer<S>> early_proj_;
    std::optional<TemporalAttention<S>> tam_verb_;
    std::optional<TemporalAttention<S>> tam_instrument_;
    std::optional<TemporalAttention<S>> tam_target_;
    TripletDecoder<S> decoder_;
};

}  // namespace tatr
