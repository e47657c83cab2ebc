#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "polystyle/cluster.hpp"
#include "polystyle/corpus.hpp"
#include "polystyle/embedder.hpp"

namespace polystyle {

/// Which items share a speaker centroid when ranking external text.
enum class AugmentScope {
    ClusterSpeaker,  // one centroid per (cluster, speaker dataset)
    Cluster,         // one centroid per cluster over all its speaker items
};

std::string_view to_string(AugmentScope s) noexcept;
AugmentScope parse_augment_scope(std::string_view s);

struct AugmentConfig {
    std::size_t top_k_cap = 15;
    double keep_fraction = 0.70;
    AugmentScope scope = AugmentScope::ClusterSpeaker;
    bool count_speaker_items = false;  // include speaker items in n for the keep rule

    void validate() const;
};

/// min(top_k_cap, ceil(keep_fraction * n)) externals, never more than exist.
std::size_t externals_to_keep(std::size_t n_external, std::size_t n_speaker, const AugmentConfig& cfg);

struct AugmentGroup {
    int cluster = 0;
    std::string speaker;  // dataset owner; dominant speaker in Cluster scope
    std::vector<std::string> speaker_ids;
    std::vector<std::string> kept_external_ids;     // best score first
    std::vector<std::string> dropped_external_ids;  // best score first
    Vector centroid;                                // empty when the group has no speaker items
};

struct AugmentReport {
    std::size_t n_clusters = 0;
    std::vector<AugmentGroup> groups;
    std::set<int> dropped_clusters;
    std::map<std::string, double> scores;  // cosine to the group centroid
    std::set<std::string> kept_ids;
};

/// Scores every item of each surviving cluster against the mean of its
/// speaker embeddings and keeps all speaker items plus the top externals.
/// Clusters without speaker items are dropped.
AugmentReport augment(const std::vector<EmbeddedText>& items, const ClusterResult& clusters,
                      const AugmentConfig& cfg);

struct ScoreSummary {
    std::size_t count = 0;
    double min = 0.0;
    double mean = 0.0;
    double max = 0.0;
};

struct QualitySummary {
    std::size_t groups = 0;
    std::size_t dropped_clusters = 0;
    std::size_t kept_speaker = 0;
    std::size_t kept_external = 0;
    std::size_t dropped_external = 0;
    ScoreSummary kept_scores;
    ScoreSummary dropped_scores;
    std::optional<double> style_match_fraction;  // needs ground truth
};

QualitySummary quality_report(const AugmentReport& report, const TruthTable* truth = nullptr);

/// augment-report.json contents.
std::string augment_report_json(const AugmentReport& report, const QualitySummary& quality);

}  // namespace polystyle
