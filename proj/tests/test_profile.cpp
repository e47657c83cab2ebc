#include <doctest.h>

#include <random>

#include "polystyle/error.hpp"
#include "polystyle/profile.hpp"
#include "support.hpp"

using namespace polystyle;
using testing::code_of;
using testing::vec;

namespace {

std::vector<LatentItem> random_latents(std::mt19937_64& gen, int n) {
    const char* speakers[] = {"ann", "bo"};
    const char* langs[] = {"en", "fr", "de"};
    std::vector<LatentItem> out;
    for (int i = 0; i < n; ++i) {
        out.push_back({"x" + std::to_string(i), speakers[i % 2], langs[(i / 2) % 3], testing::random_vector(gen, 4)});
    }
    return out;
}

const StyleProfile& find(const std::vector<StyleProfile>& ps, const std::string& spk, const std::string& lang) {
    for (const auto& p : ps) {
        if (p.speaker == spk && p.language == lang) return p;
    }
    FAIL("missing profile " << spk << "/" << lang);
    return ps.front();
}

}  // namespace

TEST_CASE("single sample profile is that sample") {
    const std::vector<LatentItem> items{{"a", "ann", "en", vec({0.3, -1, 2})}};
    const auto ps = build_profiles(items, ProfileScope::Both);
    REQUIRE(ps.size() == 2);
    CHECK(ps[0].language == "*");
    CHECK(ps[1].language == "en");
    for (const auto& p : ps) {
        CHECK(p.vector == vec({0.3, -1, 2}));
        CHECK(p.n_samples == 1);
        CHECK(p.contributing_ids == std::vector<std::string>{"a"});
    }
}

TEST_CASE("profiles ignore item order") {
    std::mt19937_64 gen(4);
    auto items = random_latents(gen, 30);
    const auto ref = build_profiles(items, ProfileScope::Both);
    for (int t = 0; t < 5; ++t) {
        std::shuffle(items.begin(), items.end(), gen);
        const auto ps = build_profiles(items, ProfileScope::Both);
        REQUIRE(ps.size() == ref.size());
        for (std::size_t k = 0; k < ps.size(); ++k) {
            CHECK(ps[k].speaker == ref[k].speaker);
            CHECK(ps[k].language == ref[k].language);
            CHECK(ps[k].vector == ref[k].vector);
        }
    }
}

TEST_CASE("pooled profile is the sample-weighted mean of language profiles") {
    std::mt19937_64 gen(9);
    const auto items = random_latents(gen, 41);
    const auto ps = build_profiles(items, ProfileScope::Both);
    CHECK(ps.size() == 2 * 4);
    for (const char* spk : {"ann", "bo"}) {
        Vector sum = Vector::Zero(4);
        std::size_t n = 0;
        for (const char* lang : {"en", "fr", "de"}) {
            const auto& p = find(ps, spk, lang);
            sum += static_cast<double>(p.n_samples) * p.vector;
            n += p.n_samples;
        }
        const auto& pooled = find(ps, spk, "*");
        CHECK(pooled.n_samples == n);
        CHECK((pooled.vector - sum / static_cast<double>(n)).cwiseAbs().maxCoeff() < 1e-9);
    }
    CHECK(build_profiles(items, ProfileScope::Pooled).size() == 2);
    CHECK(build_profiles(items, ProfileScope::PerLanguage).size() == 6);
}

TEST_CASE("profile errors") {
    CHECK(code_of([] { build_profiles(std::vector<LatentItem>{}, ProfileScope::Both); }) == Errc::EmptyGroup);
    const std::vector<LatentItem> dup{{"a", "s", "en", vec({1})}, {"a", "s", "en", vec({2})}};
    CHECK(code_of([&] { build_profiles(dup, ProfileScope::Both); }) == Errc::DuplicateId);
    const std::vector<LatentItem> dims{{"a", "s", "en", vec({1})}, {"b", "s", "en", vec({2, 3})}};
    CHECK(code_of([&] { build_profiles(dims, ProfileScope::Both); }) == Errc::DimensionMismatch);
}

TEST_CASE("encoding goes through the shared encoder") {
    const EncoderModel m = EncoderModel::glorot({3, 5, 2}, 3);
    const std::vector<ProfileItem> items{{"a", "s", "en", vec({1, 2, 3})}, {"b", "s", "en", vec({0, 1, 0})}};
    const auto latents = encode_items(m, items);
    REQUIRE(latents.size() == 2);
    CHECK(latents[1].latent == encode(m, vec({0, 1, 0})));
    const auto ps = build_profiles(m, items, ProfileScope::Pooled);
    CHECK((ps[0].vector - 0.5 * (latents[0].latent + latents[1].latent)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("ranking") {
    const Vector profile = vec({1, 0});
    const std::vector<Candidate> cands{
        {"c", vec({1, 1})}, {"b", vec({2, 0})}, {"a", vec({0, 3})}, {"d", vec({1, 1})}, {"e", vec({-1, 0})}};
    const auto r = rank_candidates(profile, cands);
    REQUIRE(r.size() == 5);
    CHECK(r[0].id == "b");
    CHECK(r[0].score == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r[1].id == "c");  // tied with d on cosine, lower id first
    CHECK(r[2].id == "d");
    CHECK(r[3].id == "a");
    CHECK(r[4].id == "e");
    for (int k = 0; k < 5; ++k) CHECK(r[static_cast<std::size_t>(k)].rank == k + 1);
    CHECK(code_of([&] { rank_candidates(profile, {}); }) == Errc::EmptyCandidates);
    CHECK(ranking_json(r).find("\"b\"") != std::string::npos);
}

TEST_CASE("projection export") {
    std::mt19937_64 gen(2);
    const auto ps = build_profiles(random_latents(gen, 24), ProfileScope::Both);
    const auto proj = export_profiles_projection(ps);
    CHECK(proj.points.rows() == static_cast<Eigen::Index>(ps.size()));
    const std::string csv = projection_csv(ps, proj);
    CHECK(csv.rfind("speaker,language,x,y\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(ps.size()) + 1);
    CHECK(csv.find("\nann,*,") != std::string::npos);

    const std::vector<StyleProfile> two(ps.begin(), ps.begin() + 2);
    CHECK(code_of([&] { export_profiles_projection(two); }) == Errc::InsufficientData);
    std::vector<StyleProfile> same(3, ps.front());
    CHECK(code_of([&] { export_profiles_projection(same); }) == Errc::DegenerateCovariance);

    const auto records = to_profile_records(ps);
    CHECK(records.size() == ps.size());
    CHECK(records[0].speaker == ps[0].speaker);
}

TEST_CASE("forest gate keeps same-style items and never empties a group") {
    // Most of ann's latents point along +x; a3 and a5 point the other way.
    std::vector<LatentItem> items{{"a1", "ann", "en", vec({1, 0.1})},
                                  {"a2", "ann", "en", vec({1.2, 0.1})},
                                  {"a3", "ann", "fr", vec({-1, -0.1})},
                                  {"a4", "ann", "fr", vec({0.8, 0.1})},
                                  {"a5", "ann", "de", vec({-1.2, -0.1})},
                                  {"b1", "bo", "en", vec({0.1, 1})},
                                  {"b2", "bo", "en", vec({-0.1, 1})}};
    // Label 0 pairs point the same way, label 1 pairs opposite ways.
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> scale(0.1, 1.5);
    Matrix x(400, 4);
    std::vector<int> y;
    for (int i = 0; i < 400; ++i) {
        const Vector a = testing::random_vector(gen, 2);
        const int label = i % 2;
        const Vector b = (label == 0 ? 1.0 : -1.0) * scale(gen) * a;
        x.row(i) = pair_features(a, b).transpose();
        y.push_back(label);
    }
    ForestConfig cfg;
    cfg.n_trees = 25;
    const auto forest = train_forest(x, y, cfg);
    const auto gate = forest_gate(forest, items);
    CHECK(gate.rejected_ids == std::vector<std::string>{"a3"});
    // "ann/de" holds only an outlier, so it is kept whole rather than emptied.
    CHECK(gate.ungated_groups == std::vector<std::string>{"ann/de"});
    std::set<std::string> kept;
    for (const auto& k : gate.kept) kept.insert(k.id);
    CHECK(kept.count("a5") == 1);
    CHECK(kept.size() + gate.rejected_ids.size() == items.size());
    CHECK(!profiles_audit_json(build_profiles(gate.kept, ProfileScope::Both), &gate).empty());
}
