#pragma once

#include <vector>

#include "tatr/nn.hpp"
#include "tatr/taxonomy.hpp"

namespace tatr {

template <typename S>
struct DecoderOutput {
    TensorPtr<S> y_ivt;  // [b,100]
    TensorPtr<S> y_i;    // [b,6], spatial mean of the instrument map
    TensorPtr<S> y_v;    // [b,10]
    TensorPtr<S> y_t;    // [b,15]
};

// Triplet decoder: pools each component map and the scene features into one
// token each, embeds them to a common width, runs stacked self-attention with
// residual connections, and maps the pooled tokens to the 100 triplet logits.
// Component logits are the spatial means of the incoming maps.
template <typename S>
struct TripletDecoder {
    LinearLayer<S> embed_i, embed_v, embed_t, embed_scene;
    std::vector<AttentionBlock<S>> blocks;
    LinearLayer<S> head;

    TripletDecoder() = default;
    TripletDecoder(std::int64_t scene_channels, std::int64_t embed_dim, std::int64_t layers,
                   std::int64_t heads, Rng& rng)
        : embed_i(kInstrumentClasses, embed_dim, rng),
          embed_v(kVerbClasses, embed_dim, rng),
          embed_t(kTargetClasses, embed_dim, rng),
          embed_scene(scene_channels, embed_dim, rng),
          head(embed_dim, kTripletClasses, rng) {
        for (std::int64_t l = 0; l < layers; ++l) blocks.emplace_back(embed_dim, heads, rng);
    }

    DecoderOutput<S> forward(const TensorPtr<S>& scene, const TensorPtr<S>& h_i,
                             const TensorPtr<S>& h_v, const TensorPtr<S>& h_t) const {
        for (const auto* map : {&h_i, &h_v, &h_t}) {
            if ((*map)->shape[2] != scene->shape[2] || (*map)->shape[3] != scene->shape[3]) {
                throw DimensionError("decoder: spatial extents differ, scene " +
                                     shape_str(scene->shape) + " vs map " +
                                     shape_str((*map)->shape));
            }
        }
        const std::int64_t b = scene->shape[0];
        const std::int64_t d = head.weight->shape[0];

        DecoderOutput<S> out;
        out.y_i = global_avg_pool(h_i);
        out.y_v = global_avg_pool(h_v);
        out.y_t = global_avg_pool(h_t);
        auto scene_pool = global_avg_pool(scene);

        auto tokens = concat<S>({reshape(embed_i.forward(out.y_i), {b, 1, d}),
                                 reshape(embed_v.forward(out.y_v), {b, 1, d}),
                                 reshape(embed_t.forward(out.y_t), {b, 1, d}),
                                 reshape(embed_scene.forward(scene_pool), {b, 1, d})},
                                1);
        for (const auto& block : blocks) tokens = block.forward(tokens);
        out.y_ivt = head.forward(mean_axis(tokens, 1));
        return out;
    }

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        embed_i.register_into(ps, prefix + ".embed_i");
        embed_v.register_into(ps, prefix + ".embed_v");
        embed_t.register_into(ps, prefix + ".embed_t");
        embed_scene.register_into(ps, prefix + ".embed_scene");
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            blocks[l].register_into(ps, prefix + ".block" + std::to_string(l));
        }
        head.register_into(ps, prefix + ".head");
    }
};

}  // namespace tatr
