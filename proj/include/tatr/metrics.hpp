#pragma once

#include <array>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tatr/data.hpp"
#include "tatr/taxonomy.hpp"

namespace tatr {

// Per-frame triplet scores with ground truth, grouped by video. Frame indices
// are strictly increasing within a video regardless of insertion order.
struct FrameScores {
    std::int64_t t = 0;
    std::vector<double> scores;  // 100 triplet scores
    LabelVector truth;
};

struct PredictionLog {
    std::map<std::string, std::vector<FrameScores>> videos;

    void add(const std::string& video_id, std::int64_t t, std::vector<double> scores,
             LabelVector truth);
};

// Uninterpolated AP (sum of precision at positive ranks / positive count),
// descending scores, ties kept in original order. nullopt when no positives.
std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<std::uint8_t>& labels);

// Component and pair scores projected from triplet scores: each entry is the
// maximum over the triplet scores whose taxonomy tuple contains it; entries
// backed by no triplet stay 0.
struct ProjectedScores {
    std::vector<double> instrument;  // 6
    std::vector<double> verb;        // 10
    std::vector<double> target;      // 15
    std::vector<double> iv;          // 60
    std::vector<double> it;          // 90
};

ProjectedScores project_components(const std::vector<double>& triplet_scores,
                                   const TripletTaxonomy& taxonomy);

// Binary pair labels projected from ground-truth triplet bits.
void project_pair_labels(const std::vector<std::uint8_t>& triplet_bits,
                         const TripletTaxonomy& taxonomy, std::vector<std::uint8_t>& iv,
                         std::vector<std::uint8_t>& it);

enum class Head { instrument = 0, verb, target, iv, it, ivt };
inline constexpr std::array<const char*, 6> kHeadNames = {"i", "v", "t", "iv", "it", "ivt"};
inline constexpr std::array<int, 6> kHeadSizes = {
    kInstrumentClasses, kVerbClasses, kTargetClasses, kIvPairs, kItPairs, kTripletClasses};

// Video-specific AP report: per-video class-mean APs averaged over videos,
// with per-class tables (class means over the videos where the class is
// defined) and the per-video breakdown.
struct EvalReport {
    std::array<std::optional<double>, 6> aggregates;
    std::array<std::vector<std::optional<double>>, 6> per_class;
    std::map<std::string, std::array<std::optional<double>, 6>> per_video;

    double ap(Head h) const {
        const auto& v = aggregates[static_cast<std::size_t>(h)];
        return v ? *v : std::numeric_limits<double>::quiet_NaN();
    }
};

EvalReport video_ap(const PredictionLog& log, const TripletTaxonomy& taxonomy);

// -- serialization ------------------------------------------------------------

// One record per frame: "video_id,t,s0,...,s99".
void write_prediction_log(std::ostream& out, const PredictionLog& log);
void write_prediction_log_file(const std::string& path, const PredictionLog& log);

// Scores read back from a prediction log, joined with ground truth labels.
PredictionLog read_prediction_log(const std::string& path, const Dataset& truth);

void write_report_csv(std::ostream& out, const EvalReport& report,
                      const TripletTaxonomy& taxonomy);
void write_report_text(std::ostream& out, const EvalReport& report,
                       const TripletTaxonomy& taxonomy);

}  // namespace tatr
