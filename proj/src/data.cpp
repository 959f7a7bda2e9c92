#include "tatr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace tatr {

LabelVector LabelVector::from_triplets(const std::vector<std::uint8_t>& bits,
                                       const TripletTaxonomy& taxonomy) {
    if (static_cast<int>(bits.size()) != kTripletClasses) {
        throw DataError("triplet label vector must have " + std::to_string(kTripletClasses) +
                        " entries, got " + std::to_string(bits.size()));
    }
    LabelVector lv;
    lv.triplet = bits;
    lv.instrument.assign(kInstrumentClasses, 0);
    lv.verb.assign(kVerbClasses, 0);
    lv.target.assign(kTargetClasses, 0);
    for (int k = 0; k < kTripletClasses; ++k) {
        if (!bits[static_cast<std::size_t>(k)]) continue;
        const auto& t = taxonomy.tuple(k);
        lv.instrument[static_cast<std::size_t>(t.instrument)] = 1;
        lv.verb[static_cast<std::size_t>(t.verb)] = 1;
        lv.target[static_cast<std::size_t>(t.target)] = 1;
    }
    return lv;
}

bool LabelVector::consistent_with(const TripletTaxonomy& taxonomy) const {
    return *this == LabelVector::from_triplets(triplet, taxonomy);
}

std::vector<VideoClip> make_clips(const Video& video, std::int64_t m) {
    if (m < 1) throw ConfigError("clip size m must be >= 1, got " + std::to_string(m));
    const auto n = static_cast<std::int64_t>(video.frames.size());
    if (n < 1) throw DataError("video " + video.id + " has no frames");
    if (video.labels.size() != video.frames.size()) {
        throw DataError("video " + video.id + " has " + std::to_string(video.frames.size()) +
                        " frames but " + std::to_string(video.labels.size()) + " labels");
    }
    std::vector<VideoClip> clips;
    clips.reserve(static_cast<std::size_t>(n));
    for (std::int64_t t = 0; t < n; ++t) {
        VideoClip c;
        c.video = &video;
        c.t = t;
        c.frame_indices.resize(static_cast<std::size_t>(m));
        for (std::int64_t j = 0; j < m; ++j) {
            c.frame_indices[static_cast<std::size_t>(j)] =
                std::max<std::int64_t>(0, t - m + 1 + j);
        }
        clips.push_back(std::move(c));
    }
    return clips;
}

// -- split files ---------------------------------------------------------------

std::map<std::string, std::vector<std::string>> load_split_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open split file: " + path);
    std::map<std::string, std::vector<std::string>> folds;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected '<fold>: ids...'");
        }
        const std::string fold = line.substr(0, colon);
        if (fold.empty() || folds.count(fold)) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": bad or repeated fold name");
        }
        std::istringstream rest(line.substr(colon + 1));
        std::vector<std::string> ids;
        std::string id;
        while (rest >> id) ids.push_back(id);
        folds.emplace(fold, std::move(ids));
    }
    return folds;
}

// -- label files ----------------------------------------------------------------

namespace {

std::vector<std::vector<std::uint8_t>> load_label_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open label file: " + path);
    std::vector<std::vector<std::uint8_t>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        if (!std::getline(ls, field, ',')) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": empty record");
        }
        std::int64_t t = 0;
        try {
            t = std::stoll(field);
        } catch (...) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": bad frame index '" +
                             field + "'");
        }
        if (t != static_cast<std::int64_t>(rows.size())) {
            throw DataError(path + ":" + std::to_string(lineno) + ": frame index " +
                            std::to_string(t) + " out of order, expected " +
                            std::to_string(rows.size()));
        }
        std::vector<std::uint8_t> bits;
        bits.reserve(kTripletClasses);
        while (std::getline(ls, field, ',')) {
            if (field != "0" && field != "1") {
                throw ParseError(path + ":" + std::to_string(lineno) + ": label flag '" + field +
                                 "' is not 0/1");
            }
            bits.push_back(field == "1" ? 1 : 0);
        }
        if (static_cast<int>(bits.size()) != kTripletClasses) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(kTripletClasses) + " flags, got " +
                             std::to_string(bits.size()));
        }
        rows.push_back(std::move(bits));
    }
    if (rows.empty()) throw DataError("label file has no records: " + path);
    return rows;
}

std::string frame_path(const std::string& root, const std::string& vid, std::int64_t t) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06lld.ppm", static_cast<long long>(t));
    return root + "/frames/" + vid + "/" + name;
}

}  // namespace

Dataset load_dataset(const std::string& root, const std::vector<std::string>& folds,
                     std::int64_t height, std::int64_t width) {
    Dataset ds;
    ds.taxonomy = TripletTaxonomy::load(root + "/taxonomy.txt");
    ds.height = height;
    ds.width = width;

    const auto split = load_split_file(root + "/splits.txt");
    std::vector<std::string> video_ids;
    if (folds.empty()) {
        for (const auto& [_, ids] : split) video_ids.insert(video_ids.end(), ids.begin(), ids.end());
    } else {
        for (const auto& f : folds) {
            const auto it = split.find(f);
            if (it == split.end()) {
                throw ConfigError("fold '" + f + "' not present in " + root + "/splits.txt");
            }
            video_ids.insert(video_ids.end(), it->second.begin(), it->second.end());
        }
    }
    std::sort(video_ids.begin(), video_ids.end());

    for (const auto& vid : video_ids) {
        Video video;
        video.id = vid;
        const auto rows = load_label_file(root + "/labels/" + vid + ".txt");
        for (std::size_t t = 0; t < rows.size(); ++t) {
            video.labels.push_back(LabelVector::from_triplets(rows[t], ds.taxonomy));
            Frame f;
            f.video_id = vid;
            f.index = static_cast<std::int64_t>(t);
            std::int64_t fh = 0, fw = 0;
            auto img = read_ppm(frame_path(root, vid, f.index), fh, fw);
            if (fh != height || fw != width) {
                img = resize_bilinear(img.data(), fh, fw, height, width);
            }
            f.image = std::move(img);
            f.height = height;
            f.width = width;
            video.frames.push_back(std::move(f));
        }
        ds.videos.push_back(std::move(video));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& root,
                  const std::map<std::string, std::vector<std::string>>& folds) {
    std::error_code ec;
    fs::create_directories(root + "/labels", ec);
    if (ec) throw IoError("cannot create " + root + "/labels: " + ec.message());
    ds.taxonomy.save(root + "/taxonomy.txt");

    std::ofstream sp(root + "/splits.txt");
    if (!sp) throw IoError("cannot write " + root + "/splits.txt");
    for (const auto& [fold, ids] : folds) {
        sp << fold << ':';
        for (const auto& id : ids) sp << ' ' << id;
        sp << '\n';
    }

    for (const auto& video : ds.videos) {
        fs::create_directories(root + "/frames/" + video.id, ec);
        if (ec) throw IoError("cannot create frame directory for " + video.id);
        std::ofstream lf(root + "/labels/" + video.id + ".txt");
        if (!lf) throw IoError("cannot write labels for " + video.id);
        for (std::size_t t = 0; t < video.frames.size(); ++t) {
            lf << t;
            for (auto b : video.labels[t].triplet) lf << ',' << static_cast<int>(b);
            lf << '\n';
            write_ppm(frame_path(root, video.id, static_cast<std::int64_t>(t)),
                      video.frames[t].image.data(), video.frames[t].height,
                      video.frames[t].width);
        }
    }
}

// -- augmentation ----------------------------------------------------------------

AugmentParams draw_augment_params(Rng& rng) {
    AugmentParams p;
    p.flip = rng.bernoulli(0.5);
    p.brightness = static_cast<float>(rng.uniform(0.8, 1.2));
    p.contrast = static_cast<float>(rng.uniform(0.8, 1.2));
    return p;
}

void apply_augment(const float* src, float* dst, std::int64_t h, std::int64_t w,
                   const AugmentParams& p) {
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < h; ++y) {
            const float* srow = src + (c * h + y) * w;
            float* drow = dst + (c * h + y) * w;
            for (std::int64_t x = 0; x < w; ++x) {
                float v = p.flip ? srow[w - 1 - x] : srow[x];
                // neutral factors skipped so an identity draw is exact
                if (p.contrast != 1.0f) v = (v - 0.5f) * p.contrast + 0.5f;
                if (p.brightness != 1.0f) v *= p.brightness;
                drow[x] = std::clamp(v, 0.0f, 1.0f);
            }
        }
    }
}

AugmentedClip augment(const VideoClip& clip, std::uint64_t seed) {
    auto rng = Rng(seed);
    const auto p = draw_augment_params(rng);
    AugmentedClip out;
    out.label = clip.label();
    out.frames.reserve(clip.frame_indices.size());
    for (const auto idx : clip.frame_indices) {
        const auto& f = clip.video->frames[static_cast<std::size_t>(idx)];
        std::vector<float> img(f.image.size());
        apply_augment(f.image.data(), img.data(), f.height, f.width, p);
        out.frames.push_back(std::move(img));
    }
    return out;
}

// -- sampling ----------------------------------------------------------------------

BatchSampler::BatchSampler(const Dataset& dataset, std::int64_t m, std::int64_t batch,
                           std::uint64_t seed)
    : dataset_(&dataset), m_(m), batch_(batch), seed_(seed) {
    if (batch < 1) throw ConfigError("batch size must be >= 1, got " + std::to_string(batch));
    if (m < 1) throw ConfigError("clip size m must be >= 1, got " + std::to_string(m));
    for (std::size_t v = 0; v < dataset.videos.size(); ++v) {
        const auto n = static_cast<std::int64_t>(dataset.videos[v].frames.size());
        for (std::int64_t t = 0; t < n; ++t) all_.push_back({v, t});
    }
    if (all_.empty()) throw ConfigError("dataset has no clips to sample");
}

std::int64_t BatchSampler::batches_per_epoch() const {
    return (clips_per_epoch() + batch_ - 1) / batch_;
}

std::vector<std::vector<ClipRef>> BatchSampler::epoch(std::int64_t epoch_index) const {
    auto order = all_;
    auto rng = Rng(hash_combine(seed_, static_cast<std::uint64_t>(epoch_index)));
    rng.shuffle(order);
    std::vector<std::vector<ClipRef>> batches;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_)) {
        const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

// -- image IO -----------------------------------------------------------------------

void write_ppm(const std::string& path, const float* chw, std::int64_t h, std::int64_t w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image: " + path);
    out << "P6\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            for (std::int64_t c = 0; c < 3; ++c) {
                const float v = std::clamp(chw[(c * h + y) * w + x], 0.0f, 1.0f);
                row[static_cast<std::size_t>(x * 3 + c)] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("failed writing image: " + path);
}

std::vector<float> read_ppm(const std::string& path, std::int64_t& h, std::int64_t& w) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw ParseError(path + ": not a binary PPM (P6) file");
    std::int64_t ww = 0, hh = 0, maxval = 0;
    in >> ww >> hh >> maxval;
    if (!in || ww < 1 || hh < 1 || maxval != 255) {
        throw ParseError(path + ": unsupported PPM header");
    }
    in.get();  // single whitespace after header
    std::vector<unsigned char> raw(static_cast<std::size_t>(ww * hh * 3));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw ParseError(path + ": truncated pixel data");
    }
    w = ww;
    h = hh;
    std::vector<float> chw(raw.size());
    for (std::int64_t y = 0; y < hh; ++y) {
        for (std::int64_t x = 0; x < ww; ++x) {
            for (std::int64_t c = 0; c < 3; ++c) {
                chw[(c * hh + y) * ww + x] =
                    static_cast<float>(raw[static_cast<std::size_t>((y * ww + x) * 3 + c)]) /
                    255.0f;
            }
        }
    }
    return chw;
}

std::vector<float> resize_bilinear(const float* chw, std::int64_t h, std::int64_t w,
                                   std::int64_t out_h, std::int64_t out_w) {
    std::vector<float> out(static_cast<std::size_t>(3 * out_h * out_w));
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
            const double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
            const std::int64_t y0 = std::clamp<std::int64_t>(
                static_cast<std::int64_t>(std::floor(fy)), 0, h - 1);
            const std::int64_t y1 = std::min<std::int64_t>(y0 + 1, h - 1);
            const double wy = std::clamp(fy - static_cast<double>(y0), 0.0, 1.0);
            for (std::int64_t ox = 0; ox < out_w; ++ox) {
                const double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
                const std::int64_t x0 = std::clamp<std::int64_t>(
                    static_cast<std::int64_t>(std::floor(fx)), 0, w - 1);
                const std::int64_t x1 = std::min<std::int64_t>(x0 + 1, w - 1);
                const double wx = std::clamp(fx - static_cast<double>(x0), 0.0, 1.0);
                const auto at = [&](std::int64_t y, std::int64_t x) {
                    return static_cast<double>(chw[(c * h + y) * w + x]);
                };
                const double top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
                const double bot = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
                out[(c * out_h + oy) * out_w + ox] =
                    static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return out;
}

}  // namespace tatr
