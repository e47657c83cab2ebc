#include "polystyle/pairs.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include <json.hpp>

#include "polystyle/error.hpp"
#include "polystyle/types.hpp"

namespace polystyle {

TripletSet build_triplets(const std::vector<PairItem>& items, std::uint64_t seed) {
    std::vector<const PairItem*> sorted;
    for (const auto& it : items) sorted.push_back(&it);
    std::sort(sorted.begin(), sorted.end(),
              [](const PairItem* a, const PairItem* b) { return a->id < b->id; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i]->id == sorted[i - 1]->id) throw Error(Errc::DuplicateId, "duplicate id \"" + sorted[i]->id + "\"");
    }

    std::map<std::string, std::vector<const PairItem*>> by_speaker;
    std::map<int, std::vector<const PairItem*>> by_cluster;
    for (const auto* it : sorted) {
        by_speaker[it->speaker].push_back(it);
        by_cluster[it->cluster].push_back(it);
    }
    if (by_speaker.size() < 2) throw Error(Errc::NoValidTriplets, "need at least 2 speakers");
    if (by_cluster.size() < 2) throw Error(Errc::NoValidTriplets, "need at least 2 clusters");

    TripletSet out;
    std::vector<const PairItem*> positives, negatives;
    for (const auto* anchor : sorted) {
        positives.clear();
        negatives.clear();
        for (const auto* p : by_speaker[anchor->speaker]) {
            if (p->cluster != anchor->cluster) positives.push_back(p);
        }
        for (const auto* n : by_cluster[anchor->cluster]) {
            if (n->speaker != anchor->speaker) negatives.push_back(n);
        }
        if (positives.empty() || negatives.empty()) {
            ++out.skipped_anchors;
            continue;
        }
        std::mt19937_64 gen(derive_seed(seed, anchor->id));
        const auto& pos = *positives[std::uniform_int_distribution<std::size_t>(0, positives.size() - 1)(gen)];
        const auto& neg = *negatives[std::uniform_int_distribution<std::size_t>(0, negatives.size() - 1)(gen)];
        out.triplets.push_back({anchor->id, pos.id, neg.id});
    }
    if (out.triplets.empty()) {
        throw Error(Errc::NoValidTriplets, "no anchor has both a positive and a negative partner");
    }
    return out;
}

PairSet triplets_to_pairs(const std::vector<Triplet>& triplets, std::uint64_t seed) {
    PairSet out;
    std::set<std::tuple<std::string, std::string, int>> seen;
    std::vector<PairRecord> unique;
    auto add = [&](const std::string& a, const std::string& b, int label) {
        auto key = a < b ? std::make_tuple(a, b, label) : std::make_tuple(b, a, label);
        if (!seen.insert(std::move(key)).second) {
            ++out.duplicates_removed;
            return;
        }
        unique.push_back({a, b, label});
    };
    for (const auto& t : triplets) {
        add(t.anchor_id, t.positive_id, 0);
        add(t.anchor_id, t.negative_id, 1);
    }

    std::vector<std::size_t> zeros, ones;
    for (std::size_t i = 0; i < unique.size(); ++i) (unique[i].label == 0 ? zeros : ones).push_back(i);
    std::vector<bool> keep(unique.size(), true);
    auto& larger = zeros.size() > ones.size() ? zeros : ones;
    const std::size_t target = std::min(zeros.size(), ones.size());
    if (larger.size() > target) {
        std::mt19937_64 gen(seed);
        std::shuffle(larger.begin(), larger.end(), gen);
        for (std::size_t i = target; i < larger.size(); ++i) keep[larger[i]] = false;
        out.downsampled = larger.size() - target;
    }
    for (std::size_t i = 0; i < unique.size(); ++i) {
        if (keep[i]) out.pairs.push_back(std::move(unique[i]));
    }
    return out;
}

void SplitConfig::validate() const {
    for (double f : {train, val, test}) {
        if (!(f >= 0.0 && f <= 1.0)) throw Error(Errc::ConfigInvalid, "split fractions must lie in [0, 1]");
    }
    if (std::abs(train + val + test - 1.0) > 1e-9) {
        throw Error(Errc::ConfigInvalid, "split fractions must sum to 1");
    }
}

PairSplits split_pairs(const std::vector<PairRecord>& pairs, const SplitConfig& cfg) {
    cfg.validate();
    if (pairs.size() < 10) {
        throw Error(Errc::TooFewPairs, "need at least 10 pairs to split, got " + std::to_string(pairs.size()));
    }
    const auto n = static_cast<long>(pairs.size());
    const long n_train = std::lround(cfg.train * static_cast<double>(n));
    const long n_val = std::min(n - n_train, std::lround(cfg.val * static_cast<double>(n)));

    std::vector<std::size_t> by_label[2];
    for (std::size_t i = 0; i < pairs.size(); ++i) by_label[pairs[i].label == 0 ? 0 : 1].push_back(i);
    std::mt19937_64 gen(cfg.seed);
    for (auto& v : by_label) std::shuffle(v.begin(), v.end(), gen);

    const auto n0 = static_cast<long>(by_label[0].size());
    const auto n1 = static_cast<long>(by_label[1].size());
    long train0 = std::min(n0, std::lround(cfg.train * static_cast<double>(n0)));
    long val0 = std::min(n0 - train0, std::lround(cfg.val * static_cast<double>(n0)));
    long train1 = std::clamp(n_train - train0, 0L, n1);
    long val1 = std::clamp(n_val - val0, 0L, n1 - train1);
    // Hand any shortfall on label 1 back to label 0.
    train0 = std::min(n0, n_train - train1);
    val0 = std::min(n0 - train0, n_val - val1);

    PairSplits out;
    auto cut = [](const std::vector<std::size_t>& src, long train, long val, PairSplits& dst) {
        const auto t = static_cast<std::size_t>(train);
        const auto v = static_cast<std::size_t>(val);
        dst.train.insert(dst.train.end(), src.begin(), src.begin() + static_cast<long>(t));
        dst.val.insert(dst.val.end(), src.begin() + static_cast<long>(t), src.begin() + static_cast<long>(t + v));
        dst.test.insert(dst.test.end(), src.begin() + static_cast<long>(t + v), src.end());
    };
    cut(by_label[0], train0, val0, out);
    cut(by_label[1], train1, val1, out);
    for (auto* v : {&out.train, &out.val, &out.test}) std::sort(v->begin(), v->end());
    return out;
}

std::string splits_json(const PairSplits& splits) {
    nlohmann::json j{{"train", splits.train}, {"val", splits.val}, {"test", splits.test}};
    return j.dump() + "\n";
}

PairSplits parse_splits_json(const std::string& text, std::size_t n_pairs) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::MalformedLine, std::string("split manifest: ") + e.what());
    }
    PairSplits out;
    std::vector<bool> used(n_pairs, false);
    for (auto [name, dst] : {std::pair{"train", &out.train}, {"val", &out.val}, {"test", &out.test}}) {
        if (!j.contains(name) || !j[name].is_array()) {
            throw Error(Errc::SchemaViolation, std::string("split manifest lacks \"") + name + "\"");
        }
        for (const auto& x : j[name]) {
            if (!x.is_number_unsigned() || x.get<std::size_t>() >= n_pairs) {
                throw Error(Errc::SchemaViolation, "split index out of range");
            }
            const auto i = x.get<std::size_t>();
            if (used[i]) throw Error(Errc::SchemaViolation, "pair index appears in two splits");
            used[i] = true;
            dst->push_back(i);
        }
    }
    return out;
}

}  // namespace polystyle
