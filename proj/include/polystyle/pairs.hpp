#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polystyle/corpus.hpp"

namespace polystyle {

/// An augmented-corpus item reduced to what pairing needs.
struct PairItem {
    std::string id;
    std::string speaker;
    int cluster = 0;
};

/// positive: same speaker, other cluster. negative: same cluster, other speaker.
struct Triplet {
    std::string anchor_id;
    std::string positive_id;
    std::string negative_id;

    bool operator==(const Triplet&) const = default;
};

struct TripletSet {
    std::vector<Triplet> triplets;
    std::size_t skipped_anchors = 0;
};

/// One triplet per eligible anchor, in anchor-id order. The positive and the
/// negative are drawn uniformly from a per-anchor stream seeded by
/// (seed, anchor id), so the result does not depend on processing order.
TripletSet build_triplets(const std::vector<PairItem>& items, std::uint64_t seed);

struct PairSet {
    std::vector<PairRecord> pairs;
    std::size_t duplicates_removed = 0;
    std::size_t downsampled = 0;
};

/// (anchor, positive, 0) and (anchor, negative, 1) per triplet, deduplicated
/// on the unordered id pair plus label, then downsampled to equal label counts.
PairSet triplets_to_pairs(const std::vector<Triplet>& triplets, std::uint64_t seed);

struct SplitConfig {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Indices into the pair list, ascending within each split.
struct PairSplits {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Stratified by label: each label is shuffled and cut separately, with the
/// split totals fixed at round(fraction * n).
PairSplits split_pairs(const std::vector<PairRecord>& pairs, const SplitConfig& cfg);

std::string splits_json(const PairSplits& splits);
PairSplits parse_splits_json(const std::string& text, std::size_t n_pairs);

}  // namespace polystyle
