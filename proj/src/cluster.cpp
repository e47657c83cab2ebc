#include "polystyle/cluster.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>
#include <unordered_map>

#include "polystyle/error.hpp"
#include "polystyle/vecmath.hpp"

namespace polystyle {

std::string_view to_string(Metric m) noexcept {
    return m == Metric::CosineDistance ? "cosine_distance" : "euclidean";
}

Metric parse_metric(std::string_view s) {
    if (s == "cosine_distance" || s == "cosine") return Metric::CosineDistance;
    if (s == "euclidean") return Metric::Euclidean;
    throw Error(Errc::ConfigInvalid, "unknown metric \"" + std::string(s) + "\"");
}

void ClusterConfig::validate() const {
    if (!(max_radius > 0.0) || !std::isfinite(max_radius)) {
        throw Error(Errc::ConfigInvalid, "max_radius must be a positive finite number");
    }
}

double metric_distance(Metric metric, const Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw Error(Errc::DimensionMismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    if (a == b) return 0.0;
    if (metric == Metric::Euclidean) return euclidean_distance(a, b);
    if (!(a.norm() > 0.0) || !(b.norm() > 0.0)) return std::numeric_limits<double>::infinity();
    return cosine_distance(a, b);
}

Vector cluster_centroid(const std::vector<const Vector*>& vectors, const ClusterConfig& cfg) {
    if (vectors.empty()) throw Error(Errc::EmptyInput, "centroid of an empty cluster");
    Vector acc = *vectors.front();
    for (std::size_t i = 1; i < vectors.size(); ++i) acc += *vectors[i];
    acc /= static_cast<double>(vectors.size());
    if (cfg.renormalize_centroids && acc.norm() > 0.0) acc.normalize();
    return acc;
}

namespace {

struct Candidate {
    double distance;
    int lo;  // slot of the cluster with the smaller key
    int hi;
    unsigned lo_version;
    unsigned hi_version;
};

// Min-heap order on (distance, lo key, hi key); slots are ranks of ids so
// comparing slots compares keys.
struct CandidateAfter {
    bool operator()(const Candidate& x, const Candidate& y) const {
        if (x.distance != y.distance) return x.distance > y.distance;
        if (x.lo != y.lo) return x.lo > y.lo;
        return x.hi > y.hi;
    }
};

struct Slot {
    std::vector<int> members;  // item ranks, ascending
    Vector mean;               // raw arithmetic mean
    Vector centroid;           // mean, optionally re-normalized
    unsigned version = 0;
    bool alive = true;
};

class Agglomerator {
public:
    Agglomerator(std::vector<const IdEmbedding*> sorted, const ClusterConfig& cfg)
        : items_(std::move(sorted)), cfg_(cfg) {
        unit_members_ = std::all_of(items_.begin(), items_.end(), [](const IdEmbedding* it) {
            return std::abs(it->embedding.norm() - 1.0) <= 1e-9;
        });
    }

    ClusterResult run() {
        const int n = static_cast<int>(items_.size());
        slots_.resize(static_cast<std::size_t>(n));
        for (int r = 0; r < n; ++r) {
            Slot& s = slots_[static_cast<std::size_t>(r)];
            s.members = {r};
            s.mean = items_[static_cast<std::size_t>(r)]->embedding;
            s.centroid = centroid_of(s.members);
        }

        std::vector<Candidate> initial;
        initial.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2);
        for (int lo = 0; lo < n; ++lo) {
            for (int hi = lo + 1; hi < n; ++hi) push_candidate(initial, lo, hi);
        }
        std::priority_queue<Candidate, std::vector<Candidate>, CandidateAfter> heap(
            CandidateAfter{}, std::move(initial));

        ClusterResult result;
        while (!heap.empty()) {
            const Candidate c = heap.top();
            heap.pop();
            Slot& lo = slots_[static_cast<std::size_t>(c.lo)];
            Slot& hi = slots_[static_cast<std::size_t>(c.hi)];
            if (!lo.alive || !hi.alive || lo.version != c.lo_version || hi.version != c.hi_version) {
                continue;
            }
            // Both sides are unchanged since this candidate was pushed, so a
            // rejected pair stays rejected until one of them merges.
            if (bound_exceeds_radius(lo, hi)) continue;
            std::vector<int> merged;
            merged.reserve(lo.members.size() + hi.members.size());
            std::merge(lo.members.begin(), lo.members.end(), hi.members.begin(), hi.members.end(),
                       std::back_inserter(merged));
            Vector centroid = centroid_of(merged);
            if (!within_radius(centroid, merged)) continue;

            result.merge_log.push_back({id(c.lo), id(c.hi), c.distance});
            const double n_lo = static_cast<double>(lo.members.size());
            const double n_hi = static_cast<double>(hi.members.size());
            lo.mean = (n_lo * lo.mean + n_hi * hi.mean) / (n_lo + n_hi);
            lo.members = std::move(merged);
            lo.centroid = std::move(centroid);
            ++lo.version;
            hi.alive = false;
            hi.members.clear();

            std::vector<Candidate> fresh;
            for (int other = 0; other < n; ++other) {
                if (other == c.lo || !slots_[static_cast<std::size_t>(other)].alive) continue;
                push_candidate(fresh, std::min(other, c.lo), std::max(other, c.lo));
            }
            for (auto& f : fresh) heap.push(f);
        }

        for (int r = 0; r < n; ++r) {
            const Slot& s = slots_[static_cast<std::size_t>(r)];
            if (!s.alive) continue;
            const int index = static_cast<int>(result.centroids.size());
            std::vector<std::string> ids;
            double radius = 0.0;
            for (int m : s.members) {
                ids.push_back(id(m));
                result.assignment[id(m)] = index;
                radius = std::max(radius, metric_distance(cfg_.metric, s.centroid, embedding(m)));
            }
            result.members.push_back(std::move(ids));
            result.centroids.push_back(s.centroid);
            result.radii.push_back(radius);
        }
        return result;
    }

private:
    const std::string& id(int rank) const { return items_[static_cast<std::size_t>(rank)]->id; }
    const Vector& embedding(int rank) const {
        return items_[static_cast<std::size_t>(rank)]->embedding;
    }

    Vector centroid_of(const std::vector<int>& members) const {
        std::vector<const Vector*> vs;
        vs.reserve(members.size());
        for (int m : members) vs.push_back(&embedding(m));
        return cluster_centroid(vs, cfg_);
    }

    void push_candidate(std::vector<Candidate>& out, int lo, int hi) const {
        const Slot& a = slots_[static_cast<std::size_t>(lo)];
        const Slot& b = slots_[static_cast<std::size_t>(hi)];
        const double d = metric_distance(cfg_.metric, a.centroid, b.centroid);
        if (!std::isfinite(d)) return;
        out.push_back({d, lo, hi, a.version, b.version});
    }

    bool within_radius(const Vector& centroid, const std::vector<int>& members) const {
        for (int m : members) {
            if (!(metric_distance(cfg_.metric, centroid, embedding(m)) <= cfg_.max_radius)) return false;
        }
        return true;
    }

    // Cheap lower bound on the merged radius from the two cluster means; a
    // pair is skipped only when the bound clears max_radius by a margin.
    bool bound_exceeds_radius(const Slot& a, const Slot& b) const {
        constexpr double kMargin = 1e-7;
        const double na = static_cast<double>(a.members.size());
        const double nb = static_cast<double>(b.members.size());
        if (cfg_.metric == Metric::Euclidean) {
            const double gap = (a.mean - b.mean).norm() * std::max(na, nb) / (na + nb);
            return gap > cfg_.max_radius + kMargin;
        }
        if (!unit_members_) return false;
        const Vector merged = na * a.mean + nb * b.mean;
        const double mn = merged.norm();
        if (!(mn > 0.0)) return false;
        // For unit members, min_i cos(c, x_i) <= mean_i cos(c, x_i) = c.mean / |c|.
        const double worst = std::max(1.0 - merged.dot(a.mean) / mn, 1.0 - merged.dot(b.mean) / mn);
        return worst > cfg_.max_radius + kMargin;
    }

    std::vector<const IdEmbedding*> items_;
    const ClusterConfig& cfg_;
    std::vector<Slot> slots_;
    bool unit_members_ = false;
};

}  // namespace

ClusterResult agglomerate(const std::vector<IdEmbedding>& items, const ClusterConfig& cfg) {
    cfg.validate();
    if (items.empty()) throw Error(Errc::EmptyInput, "nothing to cluster");
    std::vector<const IdEmbedding*> sorted;
    sorted.reserve(items.size());
    for (const auto& it : items) {
        if (it.embedding.size() != items.front().embedding.size()) {
            throw Error(Errc::DimensionMismatch, "embedding of \"" + it.id + "\" has dim " +
                                                     std::to_string(it.embedding.size()));
        }
        if (!is_valid_vector(it.embedding)) {
            throw Error(Errc::NonFiniteValue, "embedding of \"" + it.id + "\" is not finite");
        }
        sorted.push_back(&it);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const IdEmbedding* a, const IdEmbedding* b) { return a->id < b->id; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i]->id == sorted[i - 1]->id) {
            throw Error(Errc::DuplicateId, "duplicate id \"" + sorted[i]->id + "\"");
        }
    }
    return Agglomerator(std::move(sorted), cfg).run();
}

ClusterResult agglomerate(const std::vector<EmbeddedText>& items, const ClusterConfig& cfg) {
    std::vector<IdEmbedding> flat;
    flat.reserve(items.size());
    for (const auto& e : items) flat.push_back({e.record.id, e.embedding});
    return agglomerate(flat, cfg);
}

std::vector<ClusterStats> cluster_stats(const ClusterResult& result,
                                        const std::vector<TextRecord>& items) {
    std::vector<ClusterStats> stats(result.size());
    std::size_t seen = 0;
    for (const auto& r : items) {
        auto it = result.assignment.find(r.id);
        if (it == result.assignment.end()) {
            throw Error(Errc::InconsistentInput, "item \"" + r.id + "\" has no cluster");
        }
        if (it->second < 0 || static_cast<std::size_t>(it->second) >= stats.size()) {
            throw Error(Errc::InconsistentInput, "item \"" + r.id + "\" has an out-of-range cluster");
        }
        ClusterStats& s = stats[static_cast<std::size_t>(it->second)];
        ++s.size;
        ++(r.source == Source::Speaker ? s.speaker_count : s.external_count);
        ++seen;
    }
    if (seen != result.assignment.size()) {
        throw Error(Errc::InconsistentInput, "clustering covers ids missing from the items");
    }
    return stats;
}

std::vector<ClusterLabel> to_cluster_labels(const ClusterResult& result) {
    std::vector<ClusterLabel> out;
    out.reserve(result.assignment.size());
    for (const auto& [id, c] : result.assignment) out.push_back({id, c});
    return out;
}

ClusterResult from_cluster_labels(const std::vector<ClusterLabel>& labels,
                                  const std::vector<IdEmbedding>& items, const ClusterConfig& cfg) {
    std::unordered_map<std::string, const Vector*> by_id;
    for (const auto& it : items) by_id.emplace(it.id, &it.embedding);
    int n_clusters = 0;
    for (const auto& l : labels) n_clusters = std::max(n_clusters, l.cluster + 1);

    ClusterResult result;
    result.members.resize(static_cast<std::size_t>(n_clusters));
    for (const auto& l : labels) {
        if (!by_id.contains(l.id)) throw Error(Errc::InconsistentInput, "clustered id \"" + l.id + "\" has no embedding");
        result.assignment[l.id] = l.cluster;
        result.members[static_cast<std::size_t>(l.cluster)].push_back(l.id);
    }
    for (auto& m : result.members) {
        if (m.empty()) throw Error(Errc::InconsistentInput, "cluster indices are not dense");
        std::sort(m.begin(), m.end());
        std::vector<const Vector*> vs;
        for (const auto& id : m) vs.push_back(by_id.at(id));
        Vector c = cluster_centroid(vs, cfg);
        double radius = 0.0;
        for (const Vector* v : vs) radius = std::max(radius, metric_distance(cfg.metric, c, *v));
        result.centroids.push_back(std::move(c));
        result.radii.push_back(radius);
    }
    return result;
}

}  // namespace polystyle
