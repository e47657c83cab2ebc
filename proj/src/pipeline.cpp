#include "polystyle/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

#include <openssl/evp.h>

#include <json.hpp>

#include "polystyle/error.hpp"
#include "polystyle/log.hpp"
#include "polystyle/profile.hpp"

namespace polystyle {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw Error(Errc::ConfigInvalid, "config section \"" + name_ + "\" must be an object");
    }

    template <typename T>
    void get(const char* key, T& dst) {
        used_.insert(key);
        if (!j_.contains(key)) return;
        try {
            dst = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw Error(Errc::ConfigInvalid, "config key \"" + where(key) + "\" has the wrong type");
        }
    }

    template <typename T>
    void get_optional(const char* key, std::optional<T>& dst) {
        used_.insert(key);
        if (!j_.contains(key)) return;
        if (j_.at(key).is_null()) {
            dst.reset();
            return;
        }
        T v{};
        get(key, v);
        dst = std::move(v);
    }

    template <typename T, typename Parse>
    void get_enum(const char* key, T& dst, Parse parse) {
        std::optional<std::string> s;
        get_optional(key, s);
        if (!s) return;
        try {
            dst = parse(*s);
        } catch (const Error& e) {
            throw Error(Errc::ConfigInvalid, "config key \"" + where(key) + "\": " + e.message());
        }
    }

    const json* child(const char* key) {
        used_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!used_.count(it.key())) throw Error(Errc::ConfigInvalid, "unknown config key \"" + where(it.key()) + "\"");
        }
    }

private:
    std::string where(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

    const json& j_;
    std::string name_;
    std::set<std::string> used_;
};

void read_paths(Section& s, const char* key, std::optional<fs::path>& dst) {
    std::optional<std::string> v;
    s.get_optional(key, v);
    if (v) dst = fs::path(*v);
}

template <typename Fn>
void with_section(Section& root, const char* key, Fn fn) {
    if (const json* j = root.child(key)) {
        Section s(*j, key);
        fn(s);
        s.finish();
    }
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw Error(Errc::ConfigInvalid, std::string("config is not valid JSON: ") + e.what());
    }
    PipelineConfig cfg;
    Section root(j, "");
    root.get("seed", cfg.seed);
    std::string out = cfg.output_dir.string();
    root.get("output", out);
    cfg.output_dir = out;
    read_paths(root, "corpus", cfg.corpus);

    with_section(root, "synth", [&](Section& s) {
        auto& c = cfg.synth;
        s.get("n_speakers", c.n_speakers);
        s.get("n_topics", c.n_topics);
        s.get("n_languages", c.n_languages);
        s.get("samples_per_cell", c.samples_per_cell);
        s.get("external_per_cell", c.external_per_cell);
        s.get("external_match_fraction", c.external_match_fraction);
        s.get("n_distractor_styles", c.n_distractor_styles);
        s.get("holdout_per_cell", c.holdout_per_cell);
        s.get("dim", c.dim);
        s.get("alpha", c.style_strength);
        s.get("beta", c.content_strength);
        s.get("lambda", c.language_strength);
        s.get("sigma", c.noise_sigma);
    });
    with_section(root, "embedder", [&](Section& s) {
        auto& c = cfg.embedder;
        s.get_enum("provider", c.provider, parse_provider);
        s.get("dim", c.dim);
        s.get_optional("endpoint_url", c.endpoint_url);
        s.get_optional("api_key_env", c.api_key_env);
        read_paths(s, "fixture_path", c.fixture_path);
        s.get("batch_size", c.batch_size);
        s.get("max_retries", c.max_retries);
        s.get("input_type", c.input_type);
        s.get("backoff_base_s", c.backoff_base_s);
        s.get("max_concurrency", c.max_concurrency);
        s.get("timeout_s", c.timeout_s);
    });
    with_section(root, "cluster", [&](Section& s) {
        s.get_enum("metric", cfg.cluster.metric, parse_metric);
        s.get("max_radius", cfg.cluster.max_radius);
        s.get("renormalize_centroids", cfg.cluster.renormalize_centroids);
    });
    with_section(root, "augment", [&](Section& s) {
        s.get("top_k_cap", cfg.augment.top_k_cap);
        s.get("keep_fraction", cfg.augment.keep_fraction);
        s.get_enum("scope", cfg.augment.scope, parse_augment_scope);
        s.get("count_speaker_items", cfg.augment.count_speaker_items);
    });
    with_section(root, "pairs", [&](Section& s) {
        s.get("train", cfg.split.train);
        s.get("val", cfg.split.val);
        s.get("test", cfg.split.test);
    });
    with_section(root, "snn", [&](Section& s) {
        auto& c = cfg.snn;
        s.get("hidden_dims", c.hidden_dims);
        s.get("latent_dim", c.latent_dim);
        s.get("margin", c.margin);
        s.get("epochs", c.epochs);
        s.get("batch_size", c.batch_size);
        s.get("learning_rate", c.learning_rate);
        s.get("beta1", c.beta1);
        s.get("beta2", c.beta2);
        s.get("epsilon", c.epsilon);
        s.get_optional("threshold", c.threshold);
        s.get("tune_threshold", c.tune_threshold);
        s.get("both_orders", c.both_orders);
    });
    with_section(root, "forest", [&](Section& s) {
        auto& c = cfg.forest;
        s.get("n_trees", c.n_trees);
        s.get_optional("max_depth", c.max_depth);
        s.get("min_samples_leaf", c.min_samples_leaf);
        s.get_optional("features_per_split", c.features_per_split);
        s.get("bootstrap", c.bootstrap);
    });
    with_section(root, "profile", [&](Section& s) {
        s.get("forest_gating", cfg.profile.forest_gating);
        s.get("gate_max_proba", cfg.profile.gate_max_proba);
        s.get("include_external", cfg.profile.include_external);
    });
    with_section(root, "rank", [&](Section& s) {
        s.get_optional("speaker", cfg.rank.speaker);
        s.get("language", cfg.rank.language);
    });
    root.finish();

    cfg.synth.validate();
    cfg.cluster.validate();
    cfg.augment.validate();
    cfg.split.validate();
    cfg.snn.validate();
    return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::MissingFile, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_pipeline_config(ss.str());
}

namespace {

json opt(const auto& v) { return v ? json(*v) : json(nullptr); }

json optional_path(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

json config_json(const PipelineConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["output"] = c.output_dir.string();
    j["corpus"] = optional_path(c.corpus);
    const auto& s = c.synth;
    j["synth"] = {{"n_speakers", s.n_speakers}, {"n_topics", s.n_topics}, {"n_languages", s.n_languages},
                  {"samples_per_cell", s.samples_per_cell}, {"external_per_cell", s.external_per_cell},
                  {"external_match_fraction", s.external_match_fraction},
                  {"n_distractor_styles", s.n_distractor_styles}, {"holdout_per_cell", s.holdout_per_cell},
                  {"dim", s.dim}, {"alpha", s.style_strength}, {"beta", s.content_strength},
                  {"lambda", s.language_strength}, {"sigma", s.noise_sigma}};
    const auto& e = c.embedder;
    j["embedder"] = {{"provider", to_string(e.provider)}, {"dim", e.dim}, {"endpoint_url", opt(e.endpoint_url)},
                     {"api_key_env", opt(e.api_key_env)}, {"fixture_path", optional_path(e.fixture_path)},
                     {"batch_size", e.batch_size}, {"max_retries", e.max_retries}, {"input_type", e.input_type},
                     {"backoff_base_s", e.backoff_base_s}, {"max_concurrency", e.max_concurrency},
                     {"timeout_s", e.timeout_s}};
    j["cluster"] = {{"metric", to_string(c.cluster.metric)}, {"max_radius", c.cluster.max_radius},
                    {"renormalize_centroids", c.cluster.renormalize_centroids}};
    j["augment"] = {{"top_k_cap", c.augment.top_k_cap}, {"keep_fraction", c.augment.keep_fraction},
                    {"scope", to_string(c.augment.scope)}, {"count_speaker_items", c.augment.count_speaker_items}};
    j["pairs"] = {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}};
    const auto& t = c.snn;
    j["snn"] = {{"hidden_dims", t.hidden_dims}, {"latent_dim", t.latent_dim}, {"margin", t.margin},
                {"epochs", t.epochs}, {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
                {"beta1", t.beta1}, {"beta2", t.beta2}, {"epsilon", t.epsilon}, {"threshold", opt(t.threshold)},
                {"tune_threshold", t.tune_threshold}, {"both_orders", t.both_orders}};
    const auto& f = c.forest;
    j["forest"] = {{"n_trees", f.n_trees}, {"max_depth", opt(f.max_depth)},
                   {"min_samples_leaf", f.min_samples_leaf}, {"features_per_split", opt(f.features_per_split)},
                   {"bootstrap", f.bootstrap}};
    j["profile"] = {{"forest_gating", c.profile.forest_gating}, {"gate_max_proba", c.profile.gate_max_proba},
                    {"include_external", c.profile.include_external}};
    j["rank"] = {{"speaker", opt(c.rank.speaker)}, {"language", c.rank.language}};
    return j;
}

}  // namespace

std::string pipeline_config_json(const PipelineConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Hashing and manifests

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::MissingFile, "cannot open " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return hex.str();
}

namespace {

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

const char* section_of(const std::string& stage) {
    if (stage == "synth") return "synth";
    if (stage == "embed") return "embedder";
    if (stage == "cluster") return "cluster";
    if (stage == "augment") return "augment";
    if (stage == "pairs") return "pairs";
    if (stage == "train-snn") return "snn";
    if (stage == "train-rfc") return "forest";
    if (stage == "profile") return "profile";
    if (stage == "rank") return "rank";
    return nullptr;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::MissingFile, "cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::MissingFile, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_manifest(const std::string& stage, const PipelineConfig& cfg, std::uint64_t stage_seed,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
    json j;
    j["stage"] = stage;
    j["root_seed"] = cfg.seed;
    j["stage_seed"] = stage_seed;
    const json full = config_json(cfg);
    const char* section = section_of(stage);
    j["config"] = section ? full.at(section) : full;
    j["inputs"] = json::object();
    for (const auto& p : inputs) j["inputs"][p.string()] = sha256_file(p);
    j["outputs"] = json::object();
    for (const auto& p : outputs) j["outputs"][p.string()] = sha256_file(p);
    j["timestamp"] = utc_timestamp();
    const fs::path dir = cfg.output_dir / "manifests";
    fs::create_directories(dir);
    write_text(dir / (stage + ".json"), j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Shared loading helpers

using VectorTable = std::unordered_map<std::string, Vector>;

VectorTable vector_table(const fs::path& path) {
    VectorTable out;
    for (auto& row : read_embeddings(path)) out.emplace(row.id, std::move(row.vector));
    return out;
}

const Vector& lookup(const VectorTable& table, const std::string& id) {
    const auto it = table.find(id);
    if (it == table.end()) throw Error(Errc::InconsistentInput, "no embedding for id \"" + id + "\"");
    return it->second;
}

struct SplitPairs {
    std::vector<PairRecord> records;
    PairSplits splits;
};

SplitPairs load_split_pairs(const fs::path& pairs_path, const fs::path& splits_path) {
    SplitPairs sp;
    sp.records = read_pairs(pairs_path);
    sp.splits = parse_splits_json(read_text(splits_path), sp.records.size());
    return sp;
}

std::vector<PairExample> examples(const SplitPairs& sp, const std::vector<std::size_t>& idx, const VectorTable& vt) {
    std::vector<PairExample> out;
    out.reserve(idx.size());
    for (auto i : idx) {
        const auto& r = sp.records[i];
        out.push_back({lookup(vt, r.a), lookup(vt, r.b), r.label});
    }
    return out;
}

// Latent-space pair features, one row per pair.
Matrix latent_features(const EncoderModel& model, const std::vector<PairExample>& pairs) {
    const auto n = static_cast<Eigen::Index>(pairs.size());
    Matrix a(model.input_dim(), n), b(model.input_dim(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
        a.col(i) = pairs[static_cast<std::size_t>(i)].a;
        b.col(i) = pairs[static_cast<std::size_t>(i)].b;
    }
    return pair_feature_matrix(encode_batch(model, a).transpose(), encode_batch(model, b).transpose());
}

std::vector<int> labels_of(const std::vector<PairExample>& pairs) {
    std::vector<int> out;
    for (const auto& p : pairs) out.push_back(p.label);
    return out;
}

json report_json(const ClassificationReport& r) {
    return {{"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
            {"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}, {"tn", r.tn}};
}

fs::path corpus_path(const PipelineConfig& cfg) { return cfg.corpus.value_or(cfg.output_dir / "corpus.jsonl"); }

// ---------------------------------------------------------------------------
// Stages. Each returns its outputs; inputs are resolved by the caller.

using Paths = std::vector<fs::path>;

Paths stage_synth(const PipelineConfig& cfg, const Paths&, std::uint64_t seed) {
    SynthConfig sc = cfg.synth;
    sc.seed = seed;
    const SynthResult r = synth_generate(sc);
    const fs::path& out = cfg.output_dir;
    Paths written{out / "corpus.jsonl", out / "synth_embeddings.jsonl", out / "truth.json"};
    write_corpus(written[0], r.corpus);
    write_embeddings(written[1], to_id_vectors(r.embeddings));
    write_truth(written[2], r.truth);
    if (!r.heldout.empty()) {
        std::vector<TextRecord> records;
        for (const auto& h : r.heldout) records.push_back(h.record);
        written.push_back(out / "heldout.jsonl");
        written.push_back(out / "heldout_embeddings.jsonl");
        write_corpus(written[3], records);
        write_embeddings(written[4], to_id_vectors(r.heldout));
    }
    log::info("synth: " + std::to_string(r.corpus.size()) + " records");
    return written;
}

Paths stage_embed(const PipelineConfig& cfg, const Paths& in, std::uint64_t seed) {
    EmbedderConfig ec = cfg.embedder;
    ec.seed = seed;
    if (ec.provider == ProviderKind::Fixture && !ec.fixture_path) {
        ec.fixture_path = cfg.output_dir / "synth_embeddings.jsonl";
    }
    const auto records = read_corpus(in[0]);
    auto provider = make_provider(ec);
    const auto rows = embed_records(records, *provider);
    const fs::path out = cfg.output_dir / "embeddings.jsonl";
    write_embeddings(out, rows);
    log::info("embed: " + std::to_string(rows.size()) + " vectors via " + std::string(to_string(ec.provider)));
    return {out};
}

Paths stage_cluster(const PipelineConfig& cfg, const Paths& in, std::uint64_t) {
    const auto items = join_embeddings(read_corpus(in[1]), read_embeddings(in[0]));
    const ClusterResult result = agglomerate(items, cfg.cluster);
    std::vector<TextRecord> records;
    for (const auto& it : items) records.push_back(it.record);
    const auto stats = cluster_stats(result, records);

    json meta;
    meta["n_clusters"] = result.size();
    meta["metric"] = to_string(cfg.cluster.metric);
    meta["max_radius"] = cfg.cluster.max_radius;
    meta["clusters"] = json::array();
    for (std::size_t c = 0; c < result.size(); ++c) {
        meta["clusters"].push_back({{"cluster", c},
                                    {"size", stats[c].size},
                                    {"speaker_items", stats[c].speaker_count},
                                    {"external_items", stats[c].external_count},
                                    {"radius", result.radii[c]}});
    }
    meta["merge_log"] = json::array();
    for (const auto& m : result.merge_log) {
        meta["merge_log"].push_back({{"a", m.cluster_a}, {"b", m.cluster_b}, {"distance", m.distance}});
    }
    const fs::path labels = cfg.output_dir / "clusters.jsonl", meta_path = cfg.output_dir / "clusters-meta.json";
    write_clusters(labels, to_cluster_labels(result));
    write_text(meta_path, meta.dump(1) + "\n");
    log::info("cluster: " + std::to_string(result.size()) + " clusters");
    return {labels, meta_path};
}

Paths stage_augment(const PipelineConfig& cfg, const Paths& in, std::uint64_t) {
    const auto records = read_corpus(in[0]);
    const auto items = join_embeddings(records, read_embeddings(in[1]));
    std::vector<IdEmbedding> ids;
    for (const auto& it : items) ids.push_back({it.record.id, it.embedding});
    const ClusterResult clusters = from_cluster_labels(read_clusters(in[2]), ids, cfg.cluster);
    const AugmentReport report = augment(items, clusters, cfg.augment);

    std::optional<TruthTable> truth;
    if (const fs::path tp = cfg.output_dir / "truth.json"; fs::exists(tp)) truth = read_truth(tp);
    const QualitySummary quality = quality_report(report, truth ? &*truth : nullptr);

    std::vector<TextRecord> kept;
    for (const auto& r : records) {
        if (report.kept_ids.count(r.id)) kept.push_back(r);
    }
    const fs::path out = cfg.output_dir / "augmented.jsonl", rep = cfg.output_dir / "augment-report.json";
    write_corpus(out, kept);
    write_text(rep, augment_report_json(report, quality));
    log::info("augment: kept " + std::to_string(kept.size()) + " of " + std::to_string(records.size()));
    return {out, rep};
}

Paths stage_pairs(const PipelineConfig& cfg, const Paths& in, std::uint64_t seed) {
    const auto records = read_corpus(in[0]);
    std::unordered_map<std::string, int> cluster_of;
    for (const auto& l : read_clusters(in[1])) cluster_of[l.id] = l.cluster;
    std::vector<PairItem> items;
    for (const auto& r : records) {
        const auto it = cluster_of.find(r.id);
        if (it == cluster_of.end()) throw Error(Errc::InconsistentInput, "no cluster for id \"" + r.id + "\"");
        items.push_back({r.id, r.speaker, it->second});
    }
    const TripletSet triplets = build_triplets(items, derive_seed(seed, "triplets"));
    const PairSet pairs = triplets_to_pairs(triplets.triplets, derive_seed(seed, "downsample"));
    SplitConfig sc = cfg.split;
    sc.seed = derive_seed(seed, "split");
    const PairSplits splits = split_pairs(pairs.pairs, sc);

    const fs::path out = cfg.output_dir / "pairs.jsonl", sp = cfg.output_dir / "splits.json";
    write_pairs(out, pairs.pairs);
    write_text(sp, splits_json(splits));
    log::info("pairs: " + std::to_string(triplets.triplets.size()) + " triplets, " +
              std::to_string(pairs.pairs.size()) + " pairs");
    return {out, sp};
}

Paths stage_train_snn(const PipelineConfig& cfg, const Paths& in, std::uint64_t seed) {
    const SplitPairs sp = load_split_pairs(in[0], in[1]);
    const VectorTable vt = vector_table(in[2]);
    TrainConfig tc = cfg.snn;
    tc.seed = seed;
    const TrainResult result = train(examples(sp, sp.splits.train, vt), examples(sp, sp.splits.val, vt),
                                     examples(sp, sp.splits.test, vt), tc);
    const fs::path ck = cfg.output_dir / "snn.json", curve = cfg.output_dir / "loss_curve.csv";
    save_checkpoint(ck, result.model, tc, result.history);
    write_text(curve, loss_curve_csv(result.history));
    return {ck, curve};
}

Paths stage_train_rfc(const PipelineConfig& cfg, const Paths& in, std::uint64_t seed) {
    const SplitPairs sp = load_split_pairs(in[0], in[1]);
    const VectorTable vt = vector_table(in[2]);
    const Checkpoint snn = load_checkpoint(in[3]);
    const auto train_set = examples(sp, sp.splits.train, vt);
    ForestConfig fc = cfg.forest;
    fc.seed = seed;
    const ForestModel forest = train_forest(latent_features(snn.model, train_set), labels_of(train_set), fc);
    const fs::path out = cfg.output_dir / "forest.json";
    save_forest(out, forest);
    return {out};
}

Paths stage_profile(const PipelineConfig& cfg, const Paths& in, std::uint64_t) {
    const auto records = read_corpus(in[0]);
    const VectorTable vt = vector_table(in[1]);
    const Checkpoint snn = load_checkpoint(in[2]);
    std::vector<ProfileItem> items;
    for (const auto& r : records) {
        if (r.source == Source::External && !cfg.profile.include_external) continue;
        items.push_back({r.id, r.speaker, r.language, lookup(vt, r.id)});
    }
    if (items.empty()) throw Error(Errc::EmptyGroup, "no speaker items to profile");
    auto latents = encode_items(snn.model, items);

    std::optional<GateResult> gate;
    if (cfg.profile.forest_gating) {
        gate = forest_gate(load_forest(in[3]), latents, cfg.profile.gate_max_proba);
        latents = gate->kept;
    }
    const auto profiles = build_profiles(latents, ProfileScope::Both);

    std::vector<StyleProfile> per_language;
    for (const auto& p : profiles) {
        if (p.language != kPooledLanguage) per_language.push_back(p);
    }
    const auto& projected = per_language.size() >= 3 ? per_language : profiles;
    const fs::path out = cfg.output_dir / "profiles.jsonl", csv = cfg.output_dir / "profiles-projection.csv",
                   audit = cfg.output_dir / "profiles-audit.json";
    write_profiles(out, to_profile_records(profiles));
    write_text(csv, projection_csv(projected, export_profiles_projection(projected)));
    write_text(audit, profiles_audit_json(profiles, gate ? &*gate : nullptr));
    log::info("profile: " + std::to_string(profiles.size()) + " profiles");
    return {out, csv, audit};
}

Paths stage_rank(const PipelineConfig& cfg, const Paths& in, std::uint64_t) {
    const auto candidates_rows = read_embeddings(in[0]);
    const auto profiles = read_profiles(in[1]);
    const Checkpoint snn = load_checkpoint(in[2]);
    if (profiles.empty()) throw Error(Errc::EmptyGroup, "no profiles to rank against");
    const std::string speaker = cfg.rank.speaker.value_or(profiles.front().speaker);
    const ProfileRecord* target = nullptr;
    for (const auto& p : profiles) {
        if (p.speaker == speaker && p.language == cfg.rank.language) target = &p;
    }
    if (!target) throw Error(Errc::EmptyGroup, "no profile for " + speaker + "/" + cfg.rank.language);
    std::vector<Candidate> candidates;
    for (const auto& row : candidates_rows) candidates.push_back({row.id, encode(snn.model, row.vector)});
    const fs::path out = cfg.output_dir / "ranking.json";
    write_text(out, ranking_json(rank_candidates(target->vector, candidates)));
    return {out};
}

Paths stage_eval(const PipelineConfig& cfg, const Paths& in, std::uint64_t) {
    const SplitPairs sp = load_split_pairs(in[0], in[1]);
    const VectorTable vt = vector_table(in[2]);
    const Checkpoint snn = load_checkpoint(in[3]);
    const ForestModel forest = load_forest(in[4]);
    const auto val = examples(sp, sp.splits.val, vt);
    const auto test = examples(sp, sp.splits.test, vt);
    if (val.empty() || test.empty()) throw Error(Errc::EmptyDataset, "evaluation needs val and test pairs");
    const auto val_report = classification_report(labels_of(val), predict_rows(forest, latent_features(snn.model, val)));
    const auto test_report =
        classification_report(labels_of(test), predict_rows(forest, latent_features(snn.model, test)));

    json j = json::parse(metrics_table_json(val_report, test_report));
    std::vector<int> snn_pred;
    for (double d : pair_distances(snn.model, test)) snn_pred.push_back(d < snn.threshold ? 0 : 1);
    j["snn"] = {{"threshold", snn.threshold},
                {"test_loss", mean_pair_loss(snn.model, test, snn.margin)},
                {"test", report_json(classification_report(labels_of(test), snn_pred))}};
    j["forest"] = {{"validation", report_json(val_report)}, {"test", report_json(test_report)}};
    const fs::path out = cfg.output_dir / "metrics.json";
    write_text(out, j.dump(2) + "\n");
    return {out};
}

using StageFn = Paths (*)(const PipelineConfig&, const Paths&, std::uint64_t);

StageFn stage_fn(const std::string& stage) {
    if (stage == "synth") return stage_synth;
    if (stage == "embed") return stage_embed;
    if (stage == "cluster") return stage_cluster;
    if (stage == "augment") return stage_augment;
    if (stage == "pairs") return stage_pairs;
    if (stage == "train-snn") return stage_train_snn;
    if (stage == "train-rfc") return stage_train_rfc;
    if (stage == "profile") return stage_profile;
    if (stage == "rank") return stage_rank;
    if (stage == "eval") return stage_eval;
    throw Error(Errc::ConfigInvalid, "unknown stage \"" + stage + "\"");
}

}  // namespace

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"synth", "embed", "cluster", "augment", "pairs", "train-snn",
                                                "train-rfc", "profile", "rank", "eval"};
    return names;
}

std::vector<fs::path> stage_inputs(const std::string& stage, const PipelineConfig& cfg) {
    const fs::path& o = cfg.output_dir;
    if (stage == "synth") return {};
    if (stage == "embed") return {corpus_path(cfg)};
    if (stage == "cluster") return {o / "embeddings.jsonl", corpus_path(cfg)};
    if (stage == "augment") return {corpus_path(cfg), o / "embeddings.jsonl", o / "clusters.jsonl"};
    if (stage == "pairs") return {o / "augmented.jsonl", o / "clusters.jsonl"};
    if (stage == "train-snn") return {o / "pairs.jsonl", o / "splits.json", o / "embeddings.jsonl"};
    if (stage == "train-rfc") return {o / "pairs.jsonl", o / "splits.json", o / "embeddings.jsonl", o / "snn.json"};
    if (stage == "profile") {
        Paths p{corpus_path(cfg), o / "embeddings.jsonl", o / "snn.json"};
        if (cfg.profile.forest_gating) p.push_back(o / "forest.json");
        return p;
    }
    if (stage == "rank") return {o / "heldout_embeddings.jsonl", o / "profiles.jsonl", o / "snn.json"};
    if (stage == "eval") {
        return {o / "pairs.jsonl", o / "splits.json", o / "embeddings.jsonl", o / "snn.json", o / "forest.json"};
    }
    throw Error(Errc::ConfigInvalid, "unknown stage \"" + stage + "\"");
}

void run_stage(const std::string& stage, const PipelineConfig& cfg, const std::vector<fs::path>& inputs) {
    const StageFn fn = stage_fn(stage);
    Paths in = stage_inputs(stage, cfg);
    if (inputs.size() > in.size()) {
        throw Error(Errc::ConfigInvalid, "stage " + stage + " takes at most " + std::to_string(in.size()) + " inputs");
    }
    std::copy(inputs.begin(), inputs.end(), in.begin());
    for (const auto& p : in) {
        if (!fs::exists(p)) throw Error(Errc::MissingFile, stage + ": missing input " + p.string());
    }
    fs::create_directories(cfg.output_dir);
    const std::uint64_t seed = derive_seed(cfg.seed, stage);
    try {
        const Paths out = fn(cfg, in, seed);
        write_manifest(stage, cfg, seed, in, out);
    } catch (const Error& e) {
        throw Error(e.code(), stage + ": " + e.message());
    }
}

void run_pipeline(const PipelineConfig& cfg) {
    for (const auto& stage : stage_names()) {
        if (stage == "synth" && cfg.corpus) continue;
        if (stage == "rank" && !fs::exists(stage_inputs("rank", cfg).front())) continue;
        log::info("stage " + stage);
        run_stage(stage, cfg);
    }
}

}  // namespace polystyle
