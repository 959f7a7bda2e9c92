#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tatr/data.hpp"

namespace tatr {

// Synthetic stand-in for a surgical triplet dataset. Scenes are a textured
// background, a target patch color-coded by target class, and an instrument
// blob color-coded by instrument class. The verb is coded by the blob's
// appearance over time: the `temporal_pair` verbs render identically in any
// single frame (same position/shape distribution, blob level uniform over
// {level_lo, level_hi}) and differ only in temporal evolution -- constant
// level versus alternating level each frame.
struct SynthSpec {
    std::int64_t height = 64;
    std::int64_t width = 112;
    std::int64_t videos = 2;
    std::int64_t frames_per_video = 100;
    std::int64_t folds = 1;
    std::int64_t segment_min = 8;
    std::int64_t segment_max = 16;
    std::vector<int> triplets = {0, 1, 2, 3};  // rows of the generated taxonomy
    std::array<int, 2> temporal_pair = {0, 1};  // verb ids of the temporally-coded pair
    double noise = 0.02;
    double level_lo = 0.45;
    double level_hi = 0.95;

    void validate(const TripletTaxonomy& taxonomy) const;
};

// Deterministic for a fixed seed; labels follow the generating script.
Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed);

// Round-robin fold assignment for the generated video ids.
std::map<std::string, std::vector<std::string>> synth_folds(const SynthSpec& spec);

}  // namespace tatr
