#pragma once

#include <string>
#include <vector>

#include "tatr/common.hpp"

namespace tatr {

inline constexpr int kInstrumentClasses = 6;
inline constexpr int kVerbClasses = 10;
inline constexpr int kTargetClasses = 15;
inline constexpr int kTripletClasses = 100;
inline constexpr int kIvPairs = kInstrumentClasses * kVerbClasses;    // 60
inline constexpr int kItPairs = kInstrumentClasses * kTargetClasses;  // 90

struct TripletTuple {
    int instrument = 0;
    int verb = 0;
    int target = 0;

    bool operator==(const TripletTuple&) const = default;
};

// Bijective map from the 100 triplet indices to component index tuples, plus
// display names for all four vocabularies. Total over 0..99 and injective as
// a tuple map.
class TripletTaxonomy {
public:
    static TripletTaxonomy from_rows(std::vector<TripletTuple> rows);

    // Deterministic built-in map used by the synthetic data generator. Rows
    // 0..3 are pinned to the tuples the generator's default scene set uses.
    static TripletTaxonomy default_synthetic();

    // 100-row mapping file, one "k,i,v,t" record per line.
    static TripletTaxonomy load(const std::string& path);
    void save(const std::string& path) const;

    const TripletTuple& tuple(int triplet) const;
    int size() const { return static_cast<int>(rows_.size()); }

    static int iv_index(int instrument, int verb) { return instrument * kVerbClasses + verb; }
    static int it_index(int instrument, int target) {
        return instrument * kTargetClasses + target;
    }

    const std::string& instrument_name(int i) const { return instrument_names_[i]; }
    const std::string& verb_name(int v) const { return verb_names_[v]; }
    const std::string& target_name(int t) const { return target_names_[t]; }
    std::string triplet_name(int k) const;

private:
    std::vector<TripletTuple> rows_;
    std::vector<std::string> instrument_names_;
    std::vector<std::string> verb_names_;
    std::vector<std::string> target_names_;
};

}  // namespace tatr
