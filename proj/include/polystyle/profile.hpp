#pragma once

#include <span>
#include <string>
#include <vector>

#include "polystyle/corpus.hpp"
#include "polystyle/forest.hpp"
#include "polystyle/siamese.hpp"
#include "polystyle/types.hpp"
#include "polystyle/vecmath.hpp"

namespace polystyle {

inline constexpr const char* kPooledLanguage = "*";

struct ProfileItem {
    std::string id;
    std::string speaker;
    std::string language;
    Vector embedding;
};

struct LatentItem {
    std::string id;
    std::string speaker;
    std::string language;
    Vector latent;
};

struct StyleProfile {
    std::string speaker;
    std::string language;  // ISO code or "*"
    Vector vector;
    std::size_t n_samples = 0;
    std::vector<std::string> contributing_ids;  // sorted
};

enum class ProfileScope { PerLanguage, Pooled, Both };

std::vector<LatentItem> encode_items(const EncoderModel& model, const std::vector<ProfileItem>& items);

/// Mean latent per speaker ("*") and/or per (speaker, language), pooled in
/// id order. Output is sorted by (speaker, language) with "*" first.
std::vector<StyleProfile> build_profiles(const std::vector<LatentItem>& items, ProfileScope scope);
std::vector<StyleProfile> build_profiles(const EncoderModel& model, const std::vector<ProfileItem>& items,
                                         ProfileScope scope);

struct GateResult {
    std::vector<LatentItem> kept;
    std::vector<std::string> rejected_ids;
    std::vector<std::string> ungated_groups;  // "speaker/language" kept whole after emptying
};

/// Keeps an item when the forest calls it the same style as its speaker's
/// provisional pooled profile (probability of label 1 below `max_proba`).
/// A (speaker, language) group that would lose every item is kept whole.
GateResult forest_gate(const ForestModel& forest, const std::vector<LatentItem>& items, double max_proba = 0.5);

struct RankedCandidate {
    std::string id;
    double score = 0.0;
    int rank = 0;
};

struct Candidate {
    std::string id;
    Vector latent;
};

/// Cosine to the profile, descending; ties by id ascending. Ranks from 1.
std::vector<RankedCandidate> rank_candidates(const Vector& profile, const std::vector<Candidate>& candidates);

std::string ranking_json(const std::vector<RankedCandidate>& ranking);

std::vector<ProfileRecord> to_profile_records(const std::vector<StyleProfile>& profiles);

/// Needs at least 3 profiles.
Projection2D export_profiles_projection(const std::vector<StyleProfile>& profiles);
/// speaker,language,x,y
std::string projection_csv(const std::vector<StyleProfile>& profiles, const Projection2D& projection);

std::string profiles_audit_json(const std::vector<StyleProfile>& profiles, const GateResult* gate);

}  // namespace polystyle
