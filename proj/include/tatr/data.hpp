#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tatr/common.hpp"
#include "tatr/taxonomy.hpp"

namespace tatr {

// One video frame as planar CHW float pixels in [0,1].
struct Frame {
    std::vector<float> image;  // 3*h*w
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::string video_id;
    std::int64_t index = 0;
};

// Binary presence labels for one frame across all four vocabularies. The
// component vectors are always derived from the triplet vector through the
// taxonomy, so consistency holds by construction.
struct LabelVector {
    std::vector<std::uint8_t> triplet;     // 100
    std::vector<std::uint8_t> instrument;  // 6
    std::vector<std::uint8_t> verb;        // 10
    std::vector<std::uint8_t> target;      // 15

    static LabelVector from_triplets(const std::vector<std::uint8_t>& bits,
                                     const TripletTaxonomy& taxonomy);
    bool consistent_with(const TripletTaxonomy& taxonomy) const;
    bool operator==(const LabelVector&) const = default;
};

struct Video {
    std::string id;
    std::vector<Frame> frames;
    std::vector<LabelVector> labels;
};

// Causal window of exactly m frame indices ending at t; the left boundary is
// padded by repeating frame 0. Label is the one of frame t.
struct VideoClip {
    const Video* video = nullptr;
    std::vector<std::int64_t> frame_indices;
    std::int64_t t = 0;

    const LabelVector& label() const { return video->labels[static_cast<std::size_t>(t)]; }
};

struct Dataset {
    TripletTaxonomy taxonomy;
    std::vector<Video> videos;
    std::int64_t height = 0;
    std::int64_t width = 0;

    std::int64_t total_frames() const {
        std::int64_t n = 0;
        for (const auto& v : videos) n += static_cast<std::int64_t>(v.frames.size());
        return n;
    }
};

// One clip per time step t in 0..N-1.
std::vector<VideoClip> make_clips(const Video& video, std::int64_t m);

// -- dataset files -----------------------------------------------------------
//
//   <root>/taxonomy.txt        100 rows "k,i,v,t"
//   <root>/splits.txt          one fold per line: "<fold>: <vid> <vid> ..."
//   <root>/labels/<vid>.txt    one row per frame: "t,b0,...,b99" (ASCII, no header)
//   <root>/frames/<vid>/<t 6 digits>.ppm   binary P6

std::map<std::string, std::vector<std::string>> load_split_file(const std::string& path);

// Loads the videos of the requested folds (all folds when `folds` is empty),
// resizing frames to height x width when the stored size differs.
Dataset load_dataset(const std::string& root, const std::vector<std::string>& folds,
                     std::int64_t height, std::int64_t width);

void save_dataset(const Dataset& ds, const std::string& root,
                  const std::map<std::string, std::vector<std::string>>& folds);

// -- augmentation ------------------------------------------------------------

struct AugmentParams {
    bool flip = false;
    float brightness = 1.0f;
    float contrast = 1.0f;
};

// flip ~ Bernoulli(0.5); brightness, contrast ~ U[0.8, 1.2]
AugmentParams draw_augment_params(Rng& rng);

// dst = clamp(((src - 0.5) * contrast + 0.5) * brightness, 0, 1), with
// optional horizontal flip. src and dst are 3*h*w planes and may not alias.
void apply_augment(const float* src, float* dst, std::int64_t h, std::int64_t w,
                   const AugmentParams& p);

// Materialized augmented clip: the same draw applied to all m frames.
struct AugmentedClip {
    std::vector<std::vector<float>> frames;
    LabelVector label;
};

AugmentedClip augment(const VideoClip& clip, std::uint64_t seed);

// -- sampling -----------------------------------------------------------------

struct ClipRef {
    std::size_t video = 0;
    std::int64_t t = 0;
};

// Seed-determined epoch permutations over every clip of every video,
// interleaving videos; batch sizes are `batch` except possibly the last.
class BatchSampler {
public:
    BatchSampler(const Dataset& dataset, std::int64_t m, std::int64_t batch, std::uint64_t seed);

    std::vector<std::vector<ClipRef>> epoch(std::int64_t epoch_index) const;
    std::int64_t clips_per_epoch() const { return static_cast<std::int64_t>(all_.size()); }
    std::int64_t batches_per_epoch() const;

private:
    const Dataset* dataset_;
    std::int64_t m_;
    std::int64_t batch_;
    std::uint64_t seed_;
    std::vector<ClipRef> all_;
};

// -- image helpers ------------------------------------------------------------

void write_ppm(const std::string& path, const float* chw, std::int64_t h, std::int64_t w);
std::vector<float> read_ppm(const std::string& path, std::int64_t& h, std::int64_t& w);
std::vector<float> resize_bilinear(const float* chw, std::int64_t h, std::int64_t w,
                                   std::int64_t out_h, std::int64_t out_w);

}  // namespace tatr
