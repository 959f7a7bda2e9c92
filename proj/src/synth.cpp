#include "tatr/synth.hpp"

#include <algorithm>
#include <cmath>

namespace tatr {

namespace {

struct Rgb {
    float r, g, b;
};

constexpr Rgb kInstrumentPalette[kInstrumentClasses] = {
    {1.00f, 0.20f, 0.20f}, {0.20f, 1.00f, 0.25f}, {0.25f, 0.45f, 1.00f},
    {1.00f, 0.95f, 0.20f}, {1.00f, 0.25f, 1.00f}, {0.20f, 0.95f, 1.00f},
};

Rgb target_color(int t) {
    // evenly spaced hues, moderate saturation
    const float hue = static_cast<float>(t) / static_cast<float>(kTargetClasses) * 6.0f;
    const int sector = static_cast<int>(hue) % 6;
    const float f = hue - std::floor(hue);
    const float v = 1.0f, s = 0.65f;
    const float p = v * (1 - s), q = v * (1 - s * f), u = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: return {v, u, p};
        case 1: return {q, v, p};
        case 2: return {p, v, u};
        case 3: return {p, q, v};
        case 4: return {u, p, v};
        default: return {v, p, q};
    }
}

// Per-segment description; a frame is a pure function of this plus the
// within-segment step, so static-verb segments repeat one image exactly.
struct Segment {
    int triplet = 0;
    TripletTuple tuple;
    std::int64_t length = 0;
    double cx = 0, cy = 0;          // blob center, fraction of width/height
    bool level_high = false;        // constant-verb level bit
    int phase = 0;                  // alternating-verb start bit
    std::uint64_t texture_key = 0;  // static background texture
};

double hash01(std::uint64_t key, std::uint64_t idx) {
    return static_cast<double>(hash_combine(key, idx) >> 11) * 0x1.0p-53;
}

// Blob shapes keyed by verb id; the temporal pair shares the disc so single
// frames of the two classes are indistinguishable.
bool blob_covers(int verb, const std::array<int, 2>& pair, double dx, double dy, double r) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    if (verb == pair[0] || verb == pair[1]) return dx * dx + dy * dy <= r * r;
    switch (verb % 8) {
        case 0: return ax <= r && ay <= r;                                   // square
        case 1: {                                                            // ring
            const double d2 = dx * dx + dy * dy;
            return d2 <= r * r && d2 >= 0.35 * r * r;
        }
        case 2: return ax <= r && ay <= 0.45 * r;                            // horizontal bar
        case 3: return ax <= 0.45 * r && ay <= r;                            // vertical bar
        case 4: return (ax <= 0.4 * r && ay <= r) || (ay <= 0.4 * r && ax <= r);  // cross
        case 5: return ax + ay <= r;                                         // diamond
        case 6:                                                              // two dots
            return (dx + 0.6 * r) * (dx + 0.6 * r) + dy * dy <= 0.2 * r * r ||
                   (dx - 0.6 * r) * (dx - 0.6 * r) + dy * dy <= 0.2 * r * r;
        default: return dy >= -r && dy <= r && ax <= (r - 0.5 * (dy + r)) * 0.9;  // wedge
    }
}

Frame render_frame(const SynthSpec& spec, const Segment& seg, std::int64_t step,
                   const std::string& vid, std::int64_t index) {
    const auto h = spec.height, w = spec.width;
    Frame f;
    f.video_id = vid;
    f.index = index;
    f.height = h;
    f.width = w;
    f.image.resize(static_cast<std::size_t>(3 * h * w));

    // background with static per-segment texture
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const float base =
                0.08f + static_cast<float>(spec.noise *
                                           hash01(seg.texture_key,
                                                  static_cast<std::uint64_t>(y * w + x)));
            for (std::int64_t c = 0; c < 3; ++c) f.image[(c * h + y) * w + x] = base;
        }
    }

    // target patch (lower-right region)
    const Rgb tc = target_color(seg.tuple.target);
    const std::int64_t py0 = static_cast<std::int64_t>(0.55 * static_cast<double>(h));
    const std::int64_t py1 = static_cast<std::int64_t>(0.92 * static_cast<double>(h));
    const std::int64_t px0 = static_cast<std::int64_t>(0.50 * static_cast<double>(w));
    const std::int64_t px1 = static_cast<std::int64_t>(0.92 * static_cast<double>(w));
    for (std::int64_t y = py0; y < py1; ++y) {
        for (std::int64_t x = px0; x < px1; ++x) {
            f.image[(0 * h + y) * w + x] = 0.55f * tc.r;
            f.image[(1 * h + y) * w + x] = 0.55f * tc.g;
            f.image[(2 * h + y) * w + x] = 0.55f * tc.b;
        }
    }

    // instrument blob; level encodes the verb's temporal program
    double level;
    if (seg.tuple.verb == spec.temporal_pair[0]) {
        level = seg.level_high ? spec.level_hi : spec.level_lo;
    } else if (seg.tuple.verb == spec.temporal_pair[1]) {
        level = ((step + seg.phase) % 2 == 0) ? spec.level_lo : spec.level_hi;
    } else {
        level = spec.level_hi;
    }
    const Rgb ic = kInstrumentPalette[seg.tuple.instrument];
    const double r = std::max(3.0, 0.16 * static_cast<double>(std::min(h, w)));
    const double bx = seg.cx * static_cast<double>(w), by = seg.cy * static_cast<double>(h);
    const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(by - r - 1));
    const std::int64_t y1 = std::min<std::int64_t>(h, static_cast<std::int64_t>(by + r + 2));
    const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(bx - r - 1));
    const std::int64_t x1 = std::min<std::int64_t>(w, static_cast<std::int64_t>(bx + r + 2));
    for (std::int64_t y = y0; y < y1; ++y) {
        for (std::int64_t x = x0; x < x1; ++x) {
            if (!blob_covers(seg.tuple.verb, spec.temporal_pair,
                             static_cast<double>(x) - bx, static_cast<double>(y) - by, r)) {
                continue;
            }
            f.image[(0 * h + y) * w + x] = static_cast<float>(level * ic.r);
            f.image[(1 * h + y) * w + x] = static_cast<float>(level * ic.g);
            f.image[(2 * h + y) * w + x] = static_cast<float>(level * ic.b);
        }
    }
    return f;
}

}  // namespace

void SynthSpec::validate(const TripletTaxonomy& taxonomy) const {
    if (height < 16 || width < 16) {
        throw ConfigError("synthetic resolution must be at least 16x16");
    }
    if (videos < 1 || frames_per_video < 1) {
        throw ConfigError("synthetic spec needs at least one video and one frame");
    }
    if (folds < 1 || folds > videos) {
        throw ConfigError("fold count must be in [1, videos]");
    }
    if (segment_min < 2 || segment_max < segment_min) {
        throw ConfigError("segment bounds must satisfy 2 <= min <= max");
    }
    if (triplets.empty()) throw ConfigError("synthetic spec lists no active triplets");
    for (auto k : triplets) {
        if (k < 0 || k >= kTripletClasses) {
            throw ConfigError("active triplet index " + std::to_string(k) + " out of range");
        }
    }
    if (temporal_pair[0] == temporal_pair[1]) {
        throw ConfigError("temporal verb pair must name two distinct verbs");
    }
    if (!(level_lo < level_hi) || level_lo < 0.0 || level_hi > 1.0) {
        throw ConfigError("levels must satisfy 0 <= lo < hi <= 1");
    }
    // the temporally-coded pair must appear as two active triplets that agree
    // on instrument and target, otherwise no frame-indistinguishable classes
    // exist
    bool paired = false;
    for (auto ka : triplets) {
        for (auto kb : triplets) {
            const auto& a = taxonomy.tuple(ka);
            const auto& b = taxonomy.tuple(kb);
            if (a.verb == temporal_pair[0] && b.verb == temporal_pair[1] &&
                a.instrument == b.instrument && a.target == b.target) {
                paired = true;
            }
        }
    }
    if (!paired) {
        throw ConfigError(
            "synthetic spec has fewer than 2 temporally-coded classes: no active triplet pair "
            "differs only in the temporal verb pair");
    }
}

Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
    Dataset ds;
    ds.taxonomy = TripletTaxonomy::default_synthetic();
    ds.height = spec.height;
    ds.width = spec.width;
    spec.validate(ds.taxonomy);

    const auto root_rng = Rng(seed);
    for (std::int64_t v = 0; v < spec.videos; ++v) {
        Video video;
        video.id = "vid" + std::string(v < 10 ? "0" : "") + std::to_string(v);
        auto rng = root_rng.fork(static_cast<std::uint64_t>(v) + 1);

        // first cover every active triplet in shuffled order, then draw freely
        auto coverage = spec.triplets;
        rng.shuffle(coverage);
        std::size_t seg_count = 0;
        std::int64_t frame = 0;
        while (frame < spec.frames_per_video) {
            Segment seg;
            seg.triplet = seg_count < coverage.size()
                              ? coverage[seg_count]
                              : spec.triplets[static_cast<std::size_t>(rng.uniform_int(
                                    0, static_cast<std::int64_t>(spec.triplets.size()) - 1))];
            seg.tuple = ds.taxonomy.tuple(seg.triplet);
            seg.length = std::min(rng.uniform_int(spec.segment_min, spec.segment_max),
                                  spec.frames_per_video - frame);
            seg.cx = rng.uniform(0.15, 0.85);
            seg.cy = rng.uniform(0.15, 0.45);
            seg.level_high = rng.bernoulli(0.5);
            seg.phase = static_cast<int>(rng.uniform_int(0, 1));
            seg.texture_key = rng.bits();
            ++seg_count;

            std::vector<std::uint8_t> bits(kTripletClasses, 0);
            bits[static_cast<std::size_t>(seg.triplet)] = 1;
            const auto label = LabelVector::from_triplets(bits, ds.taxonomy);
            for (std::int64_t k = 0; k < seg.length; ++k) {
                video.frames.push_back(render_frame(spec, seg, k, video.id, frame + k));
                video.labels.push_back(label);
            }
            frame += seg.length;
        }
        ds.videos.push_back(std::move(video));
    }
    return ds;
}

std::map<std::string, std::vector<std::string>> synth_folds(const SynthSpec& spec) {
    std::map<std::string, std::vector<std::string>> folds;
    for (std::int64_t v = 0; v < spec.videos; ++v) {
        const std::string fold = "fold" + std::to_string(v % spec.folds);
        const std::string vid = "vid" + std::string(v < 10 ? "0" : "") + std::to_string(v);
        folds[fold].push_back(vid);
    }
    return folds;
}

}  // namespace tatr
