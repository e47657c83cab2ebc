#include <doctest.h>

#include <cmath>
#include <random>

#include "polystyle/augment.hpp"
#include "polystyle/error.hpp"
#include "polystyle/vecmath.hpp"
#include "support.hpp"

using namespace polystyle;
using testing::code_of;
using testing::vec;

namespace {

EmbeddedText item(const std::string& id, const std::string& speaker, Source src, const Vector& v) {
    return {{id, speaker, "en", "text", src}, normalize(v)};
}

ClusterResult assign(const std::vector<EmbeddedText>& items, const std::vector<int>& clusters) {
    ClusterResult r;
    int n = 0;
    for (int c : clusters) n = std::max(n, c + 1);
    r.members.resize(static_cast<std::size_t>(n));
    r.centroids.assign(static_cast<std::size_t>(n), Vector());
    r.radii.assign(static_cast<std::size_t>(n), 0.0);
    for (std::size_t i = 0; i < items.size(); ++i) {
        r.assignment[items[i].record.id] = clusters[i];
        r.members[static_cast<std::size_t>(clusters[i])].push_back(items[i].record.id);
    }
    return r;
}

}  // namespace

TEST_CASE("keep rule") {
    const AugmentConfig cfg;
    CHECK(externals_to_keep(10, 3, cfg) == 7);
    CHECK(externals_to_keep(100, 3, cfg) == 15);
    CHECK(externals_to_keep(1, 3, cfg) == 1);
    CHECK(externals_to_keep(0, 3, cfg) == 0);
    CHECK(externals_to_keep(20, 0, cfg) == 14);
    CHECK(externals_to_keep(22, 0, cfg) == 15);

    AugmentConfig counted;
    counted.count_speaker_items = true;
    CHECK(externals_to_keep(10, 10, counted) == 10);  // ceil(0.7 * 20) = 14, capped by what exists
    CHECK(externals_to_keep(4, 6, counted) == 4);
    CHECK(externals_to_keep(2, 1, counted) == 2);

    AugmentConfig bad;
    bad.keep_fraction = 0.0;
    CHECK(code_of([&] { bad.validate(); }) == Errc::ConfigInvalid);
    CHECK(code_of([] { parse_augment_scope("speaker"); }) == Errc::ConfigInvalid);
}

TEST_CASE("augment keeps the closest externals and drops speakerless clusters") {
    std::vector<EmbeddedText> items{
        item("s1", "alice", Source::Speaker, vec({1, 0, 0})),
        item("s2", "alice", Source::Speaker, vec({1, 0.1, 0})),
        item("x1", "alice", Source::External, vec({1, 0.05, 0})),
        item("x2", "alice", Source::External, vec({0, 1, 0})),
        item("x3", "alice", Source::External, vec({1, 0, 0.5})),
        item("x4", "alice", Source::External, vec({0, 0, 1})),
        item("y1", "bob", Source::External, vec({0, 0, 1})),
    };
    const auto clusters = assign(items, {0, 0, 0, 0, 0, 0, 1});
    for (AugmentScope scope : {AugmentScope::ClusterSpeaker, AugmentScope::Cluster}) {
        AugmentConfig cfg;
        cfg.scope = scope;
        const auto r = augment(items, clusters, cfg);
        CHECK(r.dropped_clusters == std::set<int>{1});
        REQUIRE(r.groups.size() == 1);
        const auto& g = r.groups[0];
        CHECK(g.speaker == "alice");
        CHECK(g.speaker_ids == std::vector<std::string>{"s1", "s2"});
        CHECK(g.kept_external_ids == std::vector<std::string>{"x1", "x3", "x2"});  // ceil(2.8) = 3
        CHECK(g.dropped_external_ids == std::vector<std::string>{"x4"});
        CHECK(r.kept_ids == std::set<std::string>{"s1", "s2", "x1", "x2", "x3"});
        const Vector centroid = mean_pool(std::vector<Vector>{items[0].embedding, items[1].embedding});
        CHECK(r.scores.at("x4") == doctest::Approx(cosine_similarity(centroid, items[5].embedding)).epsilon(1e-12));
    }
}

TEST_CASE("augment errors") {
    const std::vector<EmbeddedText> items{item("x1", "a", Source::External, vec({1, 0}))};
    CHECK(code_of([&] { augment(items, assign(items, {0}), AugmentConfig{}); }) == Errc::NoSpeakerData);
    const std::vector<EmbeddedText> more{item("s1", "a", Source::Speaker, vec({1, 0})),
                                         item("s2", "a", Source::Speaker, vec({1, 0}))};
    CHECK(code_of([&] { augment(more, assign(items, {0}), AugmentConfig{}); }) == Errc::InconsistentInput);
}

TEST_CASE("augment rule holds over random cluster compositions") {
    std::mt19937_64 gen(77);
    const std::vector<std::string> speakers{"ann", "ben", "cat"};
    for (int trial = 0; trial < 60; ++trial) {
        const AugmentScope scope = trial % 2 ? AugmentScope::Cluster : AugmentScope::ClusterSpeaker;
        const int n_clusters = std::uniform_int_distribution<int>(1, 5)(gen);
        std::vector<EmbeddedText> items;
        std::vector<int> labels;
        int next = 0;
        for (int c = 0; c < n_clusters; ++c) {
            const bool has_speaker = c == 0 || std::bernoulli_distribution(0.7)(gen);
            const int n_spk = has_speaker ? std::uniform_int_distribution<int>(1, 6)(gen) : 0;
            const int n_ext = std::uniform_int_distribution<int>(0, 40)(gen);
            for (int i = 0; i < n_spk + n_ext; ++i) {
                const auto& spk = speakers[static_cast<std::size_t>(
                    i < n_spk && scope == AugmentScope::ClusterSpeaker ? 0 : std::uniform_int_distribution<int>(0, 2)(gen))];
                items.push_back(item("i" + std::to_string(next++), spk, i < n_spk ? Source::Speaker : Source::External,
                                     testing::random_vector(gen, 5)));
                labels.push_back(c);
            }
        }
        AugmentConfig cfg;
        cfg.scope = scope;
        const auto r = augment(items, assign(items, labels), cfg);

        // Recompute what every group should keep.
        std::map<std::pair<int, std::string>, std::pair<std::size_t, std::size_t>> counts;  // spk, ext
        std::set<int> with_speaker;
        for (std::size_t i = 0; i < items.size(); ++i) {
            const std::string key = scope == AugmentScope::ClusterSpeaker ? items[i].record.speaker : "";
            auto& [s, e] = counts[{labels[i], key}];
            if (items[i].record.source == Source::Speaker) {
                ++s;
                with_speaker.insert(labels[i]);
            } else {
                ++e;
            }
        }
        for (int c = 0; c < n_clusters; ++c) CHECK((r.dropped_clusters.count(c) == 1) == (with_speaker.count(c) == 0));
        for (const auto& g : r.groups) {
            const std::string key = scope == AugmentScope::ClusterSpeaker ? g.speaker : "";
            const auto [s, e] = counts.at({g.cluster, key});
            const std::size_t expected = s == 0 ? 0 : std::min<std::size_t>(15, static_cast<std::size_t>(std::ceil(0.7 * e - 1e-9)));
            CHECK(g.kept_external_ids.size() == expected);
            CHECK(g.kept_external_ids.size() + g.dropped_external_ids.size() == e);
            CHECK(g.speaker_ids.size() == s);
            for (std::size_t k = 1; k < g.kept_external_ids.size(); ++k) {
                CHECK(r.scores.at(g.kept_external_ids[k - 1]) >= r.scores.at(g.kept_external_ids[k]));
            }
            if (!g.kept_external_ids.empty() && !g.dropped_external_ids.empty()) {
                CHECK(r.scores.at(g.kept_external_ids.back()) >= r.scores.at(g.dropped_external_ids.front()));
            }
        }
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (items[i].record.source == Source::Speaker) CHECK(r.kept_ids.count(items[i].record.id) == 1);
            if (r.dropped_clusters.count(labels[i])) CHECK(r.kept_ids.count(items[i].record.id) == 0);
        }
    }
}

TEST_CASE("quality report") {
    const auto empty = quality_report(AugmentReport{});
    CHECK(empty.groups == 0);
    CHECK(empty.kept_external == 0);
    CHECK(!empty.style_match_fraction);

    std::vector<EmbeddedText> items{item("s1", "alice", Source::Speaker, vec({1, 0})),
                                    item("x1", "alice", Source::External, vec({1, 0.1})),
                                    item("x2", "alice", Source::External, vec({0.9, 0.2}))};
    const auto r = augment(items, assign(items, {0, 0, 0}), AugmentConfig{});
    TruthTable truth;
    truth["x1"] = {"alice", "alice", 0, "en", Source::External};
    truth["x2"] = {"d00", "alice", 0, "en", Source::External};
    const auto q = quality_report(r, &truth);
    CHECK(q.kept_speaker == 1);
    CHECK(q.kept_external == 2);
    CHECK(q.dropped_external == 0);
    REQUIRE(q.style_match_fraction);
    CHECK(*q.style_match_fraction == 0.5);
    CHECK(!augment_report_json(r, q).empty());
}
