#include "polystyle/profile.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include <json.hpp>

#include "polystyle/error.hpp"
#include "polystyle/log.hpp"

namespace polystyle {

using json = nlohmann::json;

std::vector<LatentItem> encode_items(const EncoderModel& model, const std::vector<ProfileItem>& items) {
    std::vector<LatentItem> out;
    out.reserve(items.size());
    if (items.empty()) return out;
    Matrix inputs(model.input_dim(), static_cast<Eigen::Index>(items.size()));
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].embedding.size() != model.input_dim()) {
            throw Error(Errc::DimensionMismatch, "item \"" + items[i].id + "\" has dim " +
                                                     std::to_string(items[i].embedding.size()) + ", encoder expects " +
                                                     std::to_string(model.input_dim()));
        }
        inputs.col(static_cast<Eigen::Index>(i)) = items[i].embedding;
    }
    const Matrix latents = encode_batch(model, inputs);
    for (std::size_t i = 0; i < items.size(); ++i) {
        out.push_back({items[i].id, items[i].speaker, items[i].language,
                       latents.col(static_cast<Eigen::Index>(i))});
    }
    return out;
}

namespace {

StyleProfile pool(const std::string& speaker, const std::string& language,
                  const std::vector<const LatentItem*>& members) {
    if (members.empty()) throw Error(Errc::EmptyGroup, "no samples for " + speaker + "/" + language);
    std::vector<std::string> ids;
    std::vector<Vector> vs;
    for (const auto* m : members) {
        ids.push_back(m->id);
        vs.push_back(m->latent);
    }
    StyleProfile p;
    p.speaker = speaker;
    p.language = language;
    p.vector = mean_pool_by_id(ids, vs);
    p.n_samples = members.size();
    std::sort(ids.begin(), ids.end());
    p.contributing_ids = std::move(ids);
    return p;
}

}  // namespace

std::vector<StyleProfile> build_profiles(const std::vector<LatentItem>& items, ProfileScope scope) {
    if (items.empty()) throw Error(Errc::EmptyGroup, "no items to build profiles from");
    std::map<std::string, std::vector<const LatentItem*>> by_speaker;
    std::map<std::pair<std::string, std::string>, std::vector<const LatentItem*>> by_language;
    std::set<std::string> seen;
    const auto dim = items.front().latent.size();
    for (const auto& it : items) {
        if (it.latent.size() != dim) throw Error(Errc::DimensionMismatch, "latents differ in dim");
        if (!seen.insert(it.id).second) throw Error(Errc::DuplicateId, "duplicate id \"" + it.id + "\"");
        by_speaker[it.speaker].push_back(&it);
        by_language[{it.speaker, it.language}].push_back(&it);
    }
    std::vector<StyleProfile> out;
    for (const auto& [speaker, members] : by_speaker) {
        if (scope != ProfileScope::PerLanguage) out.push_back(pool(speaker, kPooledLanguage, members));
        if (scope == ProfileScope::Pooled) continue;
        for (auto it = by_language.lower_bound({speaker, ""}); it != by_language.end() && it->first.first == speaker;
             ++it) {
            out.push_back(pool(speaker, it->first.second, it->second));
        }
    }
    return out;
}

std::vector<StyleProfile> build_profiles(const EncoderModel& model, const std::vector<ProfileItem>& items,
                                         ProfileScope scope) {
    return build_profiles(encode_items(model, items), scope);
}

GateResult forest_gate(const ForestModel& forest, const std::vector<LatentItem>& items, double max_proba) {
    std::map<std::string, Vector> provisional;
    for (const auto& p : build_profiles(items, ProfileScope::Pooled)) provisional[p.speaker] = p.vector;

    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < items.size(); ++i) groups[{items[i].speaker, items[i].language}].push_back(i);

    std::vector<char> keep(items.size(), 0);
    GateResult out;
    for (const auto& [key, idx] : groups) {
        bool any = false;
        for (auto i : idx) {
            const Vector f = pair_features(items[i].latent, provisional.at(items[i].speaker));
            keep[i] = predict_proba(forest, f) < max_proba;
            any = any || keep[i];
        }
        if (!any) {
            const std::string name = key.first + "/" + key.second;
            log::warn("forest gate rejected every sample of " + name + "; keeping the group ungated");
            out.ungated_groups.push_back(name);
            for (auto i : idx) keep[i] = 1;
        }
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (keep[i]) out.kept.push_back(items[i]);
        else out.rejected_ids.push_back(items[i].id);
    }
    std::sort(out.rejected_ids.begin(), out.rejected_ids.end());
    return out;
}

std::vector<RankedCandidate> rank_candidates(const Vector& profile, const std::vector<Candidate>& candidates) {
    if (candidates.empty()) throw Error(Errc::EmptyCandidates, "no candidates to rank");
    std::vector<RankedCandidate> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) out.push_back({c.id, cosine_similarity(profile, c.latent), 0});
    std::sort(out.begin(), out.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
        return a.score != b.score ? a.score > b.score : a.id < b.id;
    });
    for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i + 1);
    return out;
}

std::string ranking_json(const std::vector<RankedCandidate>& ranking) {
    std::string out = "[";
    for (std::size_t i = 0; i < ranking.size(); ++i) {
        if (i) out += ",";
        out += "\n  {\"id\": " + json(ranking[i].id).dump() + ", \"score\": " + format_double(ranking[i].score) +
               ", \"rank\": " + std::to_string(ranking[i].rank) + "}";
    }
    out += ranking.empty() ? "]\n" : "\n]\n";
    return out;
}

std::vector<ProfileRecord> to_profile_records(const std::vector<StyleProfile>& profiles) {
    std::vector<ProfileRecord> out;
    for (const auto& p : profiles) out.push_back({p.speaker, p.language, p.vector});
    return out;
}

Projection2D export_profiles_projection(const std::vector<StyleProfile>& profiles) {
    if (profiles.size() < 3) {
        throw Error(Errc::InsufficientData, "projection needs at least 3 profiles, got " +
                                                std::to_string(profiles.size()));
    }
    std::vector<Vector> vs;
    for (const auto& p : profiles) vs.push_back(p.vector);
    return pca_project(vs);
}

std::string projection_csv(const std::vector<StyleProfile>& profiles, const Projection2D& projection) {
    if (static_cast<Eigen::Index>(profiles.size()) != projection.points.rows()) {
        throw Error(Errc::LengthMismatch, "profile and projection counts differ");
    }
    std::string out = "speaker,language,x,y\n";
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        out += profiles[i].speaker + "," + profiles[i].language + "," + format_double(projection.points(r, 0)) +
               "," + format_double(projection.points(r, 1)) + "\n";
    }
    return out;
}

std::string profiles_audit_json(const std::vector<StyleProfile>& profiles, const GateResult* gate) {
    json j;
    j["profiles"] = json::array();
    for (const auto& p : profiles) {
        j["profiles"].push_back({{"speaker", p.speaker},
                                 {"language", p.language},
                                 {"n_samples", p.n_samples},
                                 {"ids", p.contributing_ids}});
    }
    if (gate) {
        j["gate"] = {{"rejected_ids", gate->rejected_ids}, {"ungated_groups", gate->ungated_groups}};
    } else {
        j["gate"] = nullptr;
    }
    return j.dump(1) + "\n";
}

}  // namespace polystyle
