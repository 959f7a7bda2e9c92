#include "tatr/taxonomy.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace tatr {

namespace {

std::vector<std::string> numbered_names(const char* stem, int count) {
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        names.push_back(std::string(stem) + (i < 10 ? "0" : "") + std::to_string(i));
    }
    return names;
}

}  // namespace

TripletTaxonomy TripletTaxonomy::from_rows(std::vector<TripletTuple> rows) {
    if (static_cast<int>(rows.size()) != kTripletClasses) {
        throw DataError("taxonomy must have exactly " + std::to_string(kTripletClasses) +
                        " rows, got " + std::to_string(rows.size()));
    }
    std::set<std::tuple<int, int, int>> seen;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& r = rows[k];
        if (r.instrument < 0 || r.instrument >= kInstrumentClasses || r.verb < 0 ||
            r.verb >= kVerbClasses || r.target < 0 || r.target >= kTargetClasses) {
            throw DataError("taxonomy row " + std::to_string(k) + " has out-of-range tuple (" +
                            std::to_string(r.instrument) + "," + std::to_string(r.verb) + "," +
                            std::to_string(r.target) + ")");
        }
        if (!seen.insert({r.instrument, r.verb, r.target}).second) {
            throw DataError("taxonomy row " + std::to_string(k) + " repeats tuple (" +
                            std::to_string(r.instrument) + "," + std::to_string(r.verb) + "," +
                            std::to_string(r.target) + ")");
        }
    }
    TripletTaxonomy tx;
    tx.rows_ = std::move(rows);
    tx.instrument_names_ = numbered_names("instrument", kInstrumentClasses);
    tx.verb_names_ = numbered_names("verb", kVerbClasses);
    tx.target_names_ = numbered_names("target", kTargetClasses);
    return tx;
}

TripletTaxonomy TripletTaxonomy::default_synthetic() {
    // Tuples the synthetic scene set relies on; rows 0 and 1 differ only in
    // the verb so their scenes are identical frame by frame.
    const std::vector<TripletTuple> pinned = {
        {0, 0, 0}, {0, 1, 0}, {1, 2, 1}, {2, 3, 2}, {3, 4, 3}, {4, 5, 4}};
    std::vector<TripletTuple> all;
    all.reserve(kInstrumentClasses * kVerbClasses * kTargetClasses);
    for (int i = 0; i < kInstrumentClasses; ++i)
        for (int v = 0; v < kVerbClasses; ++v)
            for (int t = 0; t < kTargetClasses; ++t) all.push_back({i, v, t});
    Rng rng(0x7a70u);  // fixed: the default taxonomy never changes
    rng.shuffle(all);
    std::vector<TripletTuple> rows = pinned;
    for (const auto& t : all) {
        if (static_cast<int>(rows.size()) == kTripletClasses) break;
        if (std::find(rows.begin(), rows.end(), t) == rows.end()) rows.push_back(t);
    }
    return from_rows(std::move(rows));
}

TripletTaxonomy TripletTaxonomy::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open taxonomy file: " + path);
    std::vector<TripletTuple> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        int k = 0, i = 0, v = 0, t = 0;
        char c1 = 0, c2 = 0, c3 = 0;
        if (!(ls >> k >> c1 >> i >> c2 >> v >> c3 >> t) || c1 != ',' || c2 != ',' || c3 != ',') {
            throw ParseError(path + ":" + std::to_string(lineno) + ": malformed taxonomy row");
        }
        if (k != static_cast<int>(rows.size())) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected triplet index " +
                             std::to_string(rows.size()) + ", got " + std::to_string(k));
        }
        rows.push_back({i, v, t});
    }
    return from_rows(std::move(rows));
}

void TripletTaxonomy::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write taxonomy file: " + path);
    for (std::size_t k = 0; k < rows_.size(); ++k) {
        out << k << ',' << rows_[k].instrument << ',' << rows_[k].verb << ',' << rows_[k].target
            << '\n';
    }
    if (!out) throw IoError("failed writing taxonomy file: " + path);
}

const TripletTuple& TripletTaxonomy::tuple(int triplet) const {
    if (triplet < 0 || triplet >= static_cast<int>(rows_.size())) {
        throw DataError("triplet index " + std::to_string(triplet) + " out of range");
    }
    return rows_[static_cast<std::size_t>(triplet)];
}

std::string TripletTaxonomy::triplet_name(int k) const {
    const auto& t = tuple(k);
    return instrument_name(t.instrument) + "-" + verb_name(t.verb) + "-" +
           target_name(t.target);
}

}  // namespace tatr
