#pragma once

#include <array>

#include "tatr/nn.hpp"

namespace tatr {

// Per-frame visual feature extractor: four conv-bn-relu stages, each with a
// stride-2 3x3 convolution, for a total stride of 16. Frames are processed
// independently with shared weights; no temporal mixing happens here.
template <typename S>
struct Backbone {
    static constexpr std::int64_t stride = 16;

    std::array<Conv2dLayer<S>, 4> convs;
    std::array<BatchNormLayer<S>, 4> bns;

    Backbone() = default;
    Backbone(const std::array<std::int64_t, 4>& widths, Rng& rng) {
        std::int64_t in = 3;
        for (std::size_t s = 0; s < 4; ++s) {
            convs[s] = Conv2dLayer<S>(in, widths[s], 3, 2, 1, rng);
            bns[s] = BatchNormLayer<S>(widths[s]);
            in = widths[s];
        }
    }

    std::int64_t out_channels() const { return convs[3].weight->shape[0]; }

    // frames [n,3,h,w] -> [n,d,h/16,w/16] (rounded up per stage)
    TensorPtr<S> forward(const TensorPtr<S>& frames, Mode mode) const {
        auto x = frames;
        for (std::size_t s = 0; s < 4; ++s) {
            x = relu(bns[s].forward(convs[s].forward(x), mode));
        }
        return x;
    }

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        for (std::size_t s = 0; s < 4; ++s) {
            const auto stage = prefix + ".stage" + std::to_string(s);
            convs[s].register_into(ps, stage + ".conv");
            bns[s].register_into(ps, stage + ".bn");
        }
    }
};

// Weakly supervised instrument localization: two 3x3 convolutions and a 1x1
// class mapping onto the 6 instrument channels. The class activation maps
// pool to the instrument logits.
template <typename S>
struct WslHead {
    Conv2dLayer<S> conv1, conv2, cls;

    WslHead() = default;
    WslHead(std::int64_t in, std::int64_t width, std::int64_t classes, Rng& rng)
        : conv1(in, width, 3, 1, 1, rng),
          conv2(width, width, 3, 1, 1, rng),
          cls(width, classes, 1, 1, 0, rng) {}

    // features [n,d,h,w] -> cam [n,classes,h,w]
    TensorPtr<S> forward(const TensorPtr<S>& features) const {
        return cls.forward(relu(conv2.forward(relu(conv1.forward(features)))));
    }

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        conv1.register_into(ps, prefix + ".conv1");
        conv2.register_into(ps, prefix + ".conv2");
        cls.register_into(ps, prefix + ".cls");
    }
};

// Low-level scene feature bottleneck: a single 1x1 projection of the current
// frame's features.
template <typename S>
struct SceneBottleneck {
    Conv2dLayer<S> proj;

    SceneBottleneck() = default;
    SceneBottleneck(std::int64_t in, std::int64_t out, Rng& rng) : proj(in, out, 1, 1, 0, rng) {}

    TensorPtr<S> forward(const TensorPtr<S>& last_frame_features) const {
        return proj.forward(last_frame_features);
    }

    void register_into(ParamSet<S>& ps, const std::string& prefix) const {
        proj.register_into(ps, prefix + ".proj");
    }
};

}  // namespace tatr
