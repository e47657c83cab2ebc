#include "polystyle/augment.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "polystyle/error.hpp"
#include "polystyle/vecmath.hpp"

namespace polystyle {

std::string_view to_string(AugmentScope s) noexcept {
    return s == AugmentScope::ClusterSpeaker ? "cluster_speaker" : "cluster";
}

AugmentScope parse_augment_scope(std::string_view s) {
    if (s == "cluster_speaker") return AugmentScope::ClusterSpeaker;
    if (s == "cluster") return AugmentScope::Cluster;
    throw Error(Errc::ConfigInvalid, "unknown augment scope \"" + std::string(s) + "\"");
}

void AugmentConfig::validate() const {
    if (top_k_cap == 0) throw Error(Errc::ConfigInvalid, "top_k_cap must be positive");
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
        throw Error(Errc::ConfigInvalid, "keep_fraction must lie in (0, 1]");
    }
}

std::size_t externals_to_keep(std::size_t n_external, std::size_t n_speaker, const AugmentConfig& cfg) {
    const std::size_t n = cfg.count_speaker_items ? n_external + n_speaker : n_external;
    // The epsilon absorbs representation error in keep_fraction (0.7 * 10 must give 7).
    const auto fraction = static_cast<std::size_t>(std::ceil(cfg.keep_fraction * static_cast<double>(n) - 1e-9));
    return std::min({cfg.top_k_cap, fraction, n_external});
}

namespace {

void score_group(AugmentGroup& group, const std::vector<const EmbeddedText*>& speakers,
                 std::vector<const EmbeddedText*> externals, const AugmentConfig& cfg,
                 AugmentReport& report) {
    std::vector<std::string> ids;
    std::vector<Vector> vs;
    for (const auto* s : speakers) {
        ids.push_back(s->record.id);
        vs.push_back(s->embedding);
        group.speaker_ids.push_back(s->record.id);
    }
    std::sort(group.speaker_ids.begin(), group.speaker_ids.end());
    group.centroid = mean_pool_by_id(ids, vs);

    for (const auto* s : speakers) {
        report.scores[s->record.id] = cosine_similarity(group.centroid, s->embedding);
        report.kept_ids.insert(s->record.id);
    }
    std::vector<std::pair<double, const EmbeddedText*>> ranked;
    for (const auto* e : externals) {
        const double score = cosine_similarity(group.centroid, e->embedding);
        report.scores[e->record.id] = score;
        ranked.emplace_back(score, e);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second->record.id < b.second->record.id;
    });
    const std::size_t keep = externals_to_keep(externals.size(), speakers.size(), cfg);
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const std::string& id = ranked[i].second->record.id;
        if (i < keep) {
            group.kept_external_ids.push_back(id);
            report.kept_ids.insert(id);
        } else {
            group.dropped_external_ids.push_back(id);
        }
    }
}

std::string dominant_speaker(const std::vector<const EmbeddedText*>& speakers) {
    std::map<std::string, std::size_t> counts;
    for (const auto* s : speakers) ++counts[s->record.speaker];
    std::string best;
    std::size_t best_count = 0;
    for (const auto& [name, c] : counts) {
        if (c > best_count) {
            best = name;
            best_count = c;
        }
    }
    return best;
}

}  // namespace

AugmentReport augment(const std::vector<EmbeddedText>& items, const ClusterResult& clusters,
                      const AugmentConfig& cfg) {
    cfg.validate();
    AugmentReport report;
    report.n_clusters = clusters.size();

    std::vector<std::vector<const EmbeddedText*>> by_cluster(clusters.size());
    for (const auto& e : items) {
        auto it = clusters.assignment.find(e.record.id);
        if (it == clusters.assignment.end() || it->second < 0 ||
            static_cast<std::size_t>(it->second) >= clusters.size()) {
            throw Error(Errc::InconsistentInput, "item \"" + e.record.id + "\" has no valid cluster");
        }
        by_cluster[static_cast<std::size_t>(it->second)].push_back(&e);
    }

    bool any_speaker = false;
    for (std::size_t c = 0; c < by_cluster.size(); ++c) {
        auto& members = by_cluster[c];
        std::sort(members.begin(), members.end(),
                  [](const auto* a, const auto* b) { return a->record.id < b->record.id; });
        const bool has_speaker = std::any_of(members.begin(), members.end(), [](const auto* m) {
            return m->record.source == Source::Speaker;
        });
        if (!has_speaker) {
            report.dropped_clusters.insert(static_cast<int>(c));
            continue;
        }
        any_speaker = true;

        // Partition the cluster into groups keyed by dataset owner, or one group.
        std::map<std::string, std::pair<std::vector<const EmbeddedText*>, std::vector<const EmbeddedText*>>> parts;
        for (const auto* m : members) {
            const std::string key = cfg.scope == AugmentScope::ClusterSpeaker ? m->record.speaker : "";
            auto& [spk, ext] = parts[key];
            (m->record.source == Source::Speaker ? spk : ext).push_back(m);
        }
        for (auto& [key, part] : parts) {
            auto& [speakers, externals] = part;
            AugmentGroup group;
            group.cluster = static_cast<int>(c);
            group.speaker = cfg.scope == AugmentScope::ClusterSpeaker ? key : dominant_speaker(speakers);
            if (speakers.empty()) {
                // A dataset with external text but no speaker lines in this cluster.
                for (const auto* e : externals) group.dropped_external_ids.push_back(e->record.id);
            } else {
                score_group(group, speakers, externals, cfg, report);
            }
            report.groups.push_back(std::move(group));
        }
    }
    if (!any_speaker) throw Error(Errc::NoSpeakerData, "no cluster contains speaker items");
    return report;
}

namespace {

ScoreSummary summarize(const std::vector<double>& xs) {
    ScoreSummary s;
    s.count = xs.size();
    if (xs.empty()) return s;
    s.min = *std::min_element(xs.begin(), xs.end());
    s.max = *std::max_element(xs.begin(), xs.end());
    double total = 0.0;
    for (double x : xs) total += x;
    s.mean = total / static_cast<double>(xs.size());
    return s;
}

}  // namespace

QualitySummary quality_report(const AugmentReport& report, const TruthTable* truth) {
    QualitySummary q;
    q.groups = report.groups.size();
    q.dropped_clusters = report.dropped_clusters.size();
    std::vector<double> kept, dropped;
    std::size_t matched = 0, judged = 0;
    for (const auto& g : report.groups) {
        q.kept_speaker += g.speaker_ids.size();
        q.kept_external += g.kept_external_ids.size();
        q.dropped_external += g.dropped_external_ids.size();
        for (const auto& id : g.kept_external_ids) {
            kept.push_back(report.scores.at(id));
            if (truth) {
                auto it = truth->find(id);
                if (it == truth->end()) continue;
                ++judged;
                if (it->second.style == g.speaker) ++matched;
            }
        }
        for (const auto& id : g.dropped_external_ids) {
            if (auto it = report.scores.find(id); it != report.scores.end()) dropped.push_back(it->second);
        }
    }
    q.kept_scores = summarize(kept);
    q.dropped_scores = summarize(dropped);
    if (truth && judged > 0) q.style_match_fraction = static_cast<double>(matched) / static_cast<double>(judged);
    return q;
}

std::string augment_report_json(const AugmentReport& report, const QualitySummary& quality) {
    using json = nlohmann::json;
    json j;
    j["n_clusters"] = report.n_clusters;
    j["dropped_clusters"] = report.dropped_clusters;
    json groups = json::array();
    for (const auto& g : report.groups) {
        groups.push_back({{"cluster", g.cluster},
                          {"speaker", g.speaker},
                          {"speaker_ids", g.speaker_ids},
                          {"kept_external_ids", g.kept_external_ids},
                          {"dropped_external_ids", g.dropped_external_ids}});
    }
    j["groups"] = std::move(groups);
    j["scores"] = report.scores;
    auto summary = [](const ScoreSummary& s) {
        return json{{"count", s.count}, {"min", s.min}, {"mean", s.mean}, {"max", s.max}};
    };
    j["quality"] = {{"groups", quality.groups},
                    {"dropped_clusters", quality.dropped_clusters},
                    {"kept_speaker", quality.kept_speaker},
                    {"kept_external", quality.kept_external},
                    {"dropped_external", quality.dropped_external},
                    {"kept_scores", summary(quality.kept_scores)},
                    {"dropped_scores", summary(quality.dropped_scores)}};
    if (quality.style_match_fraction) j["quality"]["style_match_fraction"] = *quality.style_match_fraction;
    return j.dump(1) + "\n";
}

}  // namespace polystyle
