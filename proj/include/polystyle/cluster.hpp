#pragma once

#include <map>
#include <string>
#include <vector>

#include "polystyle/corpus.hpp"
#include "polystyle/types.hpp"

namespace polystyle {

enum class Metric { CosineDistance, Euclidean };

std::string_view to_string(Metric m) noexcept;
Metric parse_metric(std::string_view s);

struct ClusterConfig {
    Metric metric = Metric::CosineDistance;
    double max_radius = 0.35;
    bool renormalize_centroids = false;

    void validate() const;
};

/// One merge, naming each side by its smallest member id.
struct MergeStep {
    std::string cluster_a;
    std::string cluster_b;
    double distance = 0.0;

    bool operator==(const MergeStep&) const = default;
};

struct ClusterResult {
    std::map<std::string, int> assignment;
    std::vector<std::vector<std::string>> members;  // sorted ids per cluster
    std::vector<Vector> centroids;
    std::vector<double> radii;
    std::vector<MergeStep> merge_log;

    std::size_t size() const { return centroids.size(); }
};

/// Distance under `metric`. A cosine distance involving a zero vector is +inf.
double metric_distance(Metric metric, const Vector& a, const Vector& b);

/// Arithmetic mean of `vectors` in the given order, optionally re-normalized.
Vector cluster_centroid(const std::vector<const Vector*>& vectors, const ClusterConfig& cfg);

struct IdEmbedding {
    std::string id;
    Vector embedding;
};

/// Bottom-up centroid-linkage clustering. At each step the closest pair of
/// clusters whose union keeps every member within max_radius of the merged
/// centroid is merged; ties go to the pair with the lexicographically least
/// (smaller key, larger key), a cluster's key being its least member id.
/// Final clusters are indexed densely in key order.
ClusterResult agglomerate(const std::vector<IdEmbedding>& items, const ClusterConfig& cfg);
ClusterResult agglomerate(const std::vector<EmbeddedText>& items, const ClusterConfig& cfg);

struct ClusterStats {
    std::size_t size = 0;
    std::size_t speaker_count = 0;
    std::size_t external_count = 0;
};

std::vector<ClusterStats> cluster_stats(const ClusterResult& result,
                                        const std::vector<TextRecord>& items);

std::vector<ClusterLabel> to_cluster_labels(const ClusterResult& result);

/// Rebuilds members/centroids/radii from clusters.jsonl rows plus embeddings.
ClusterResult from_cluster_labels(const std::vector<ClusterLabel>& labels,
                                  const std::vector<IdEmbedding>& items, const ClusterConfig& cfg);

}  // namespace polystyle
