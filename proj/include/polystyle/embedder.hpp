#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "polystyle/corpus.hpp"
#include "polystyle/types.hpp"

namespace polystyle {

enum class ProviderKind { Synthetic, Fixture, Http };

std::string_view to_string(ProviderKind k) noexcept;
ProviderKind parse_provider(std::string_view s);

struct EmbedderConfig {
    ProviderKind provider = ProviderKind::Synthetic;
    int dim = 1024;
    std::optional<std::string> endpoint_url;   // required for http
    std::optional<std::string> api_key_env;    // env var holding the bearer token
    std::optional<std::filesystem::path> fixture_path;  // embeddings.jsonl
    std::size_t batch_size = 96;
    int max_retries = 3;
    std::string input_type = "clustering";
    double backoff_base_s = 0.5;
    int max_concurrency = 4;
    double timeout_s = 30.0;
    std::uint64_t seed = 0;  // synthetic provider and retry jitter

    void validate() const;
};

struct EmbedRequest {
    std::string id;
    std::string text;
};

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    /// One unit-norm vector per request, in request order.
    virtual std::vector<Vector> embed(std::span<const EmbedRequest> requests) = 0;
    virtual int dim() const = 0;
};

/// Hashes (seed, text) into a seeded Gaussian draw, then normalizes.
class SyntheticProvider final : public EmbeddingProvider {
public:
    SyntheticProvider(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}

    std::vector<Vector> embed(std::span<const EmbedRequest> requests) override;
    int dim() const override { return dim_; }

private:
    int dim_;
    std::uint64_t seed_;
};

/// Looks vectors up by request id in an embeddings.jsonl file.
class FixtureProvider final : public EmbeddingProvider {
public:
    explicit FixtureProvider(const std::filesystem::path& path);
    explicit FixtureProvider(const std::vector<IdVector>& rows);

    std::vector<Vector> embed(std::span<const EmbedRequest> requests) override;
    int dim() const override { return dim_; }

private:
    std::unordered_map<std::string, Vector> table_;
    int dim_ = 0;
};

/// POST {"texts": [...], "input_type": ...} -> {"embeddings": [[...], ...]}.
/// Batches of at most batch_size texts, up to max_concurrency requests in
/// flight, each retried with jittered exponential backoff.
class HttpProvider final : public EmbeddingProvider {
public:
    explicit HttpProvider(EmbedderConfig cfg);

    std::vector<Vector> embed(std::span<const EmbedRequest> requests) override;
    int dim() const override { return cfg_.dim; }

    /// Total HTTP attempts issued so far, retries included.
    std::size_t attempts() const noexcept { return attempts_.load(); }

private:
    std::vector<Vector> embed_one_batch(std::span<const EmbedRequest> batch,
                                        std::size_t batch_index);

    EmbedderConfig cfg_;
    std::string base_url_;
    std::string path_;
    std::optional<std::string> api_key_;
    std::atomic<std::size_t> attempts_{0};
};

std::unique_ptr<EmbeddingProvider> make_provider(const EmbedderConfig& cfg);

std::vector<Vector> embed_batch(std::span<const EmbedRequest> requests, const EmbedderConfig& cfg);

/// Embeds records with `provider`, chunking any record over the token
/// budget and mean-pooling (then re-normalizing) its chunk embeddings.
std::vector<IdVector> embed_records(const std::vector<TextRecord>& records,
                                    EmbeddingProvider& provider,
                                    std::int64_t token_budget = kDefaultTokenBudget);

// ---------------------------------------------------------------------------
// Synthetic corpora with known style/content/language factors.

struct SynthConfig {
    int n_speakers = 4;
    int n_topics = 6;
    int n_languages = 2;
    int samples_per_cell = 20;
    int external_per_cell = 0;
    double external_match_fraction = 0.5;
    int n_distractor_styles = 2;
    int holdout_per_cell = 0;
    int dim = 64;
    double style_strength = 1.0;     // alpha
    double content_strength = 1.0;   // beta
    double language_strength = 0.0;  // lambda
    double noise_sigma = 0.1;        // sigma
    std::uint64_t seed = 0;

    void validate() const;
};

struct TruthEntry {
    std::string style;  // speaker name, or "dNN" for distractor styles
    std::string speaker;
    int topic = 0;
    std::string language;
    Source source = Source::Speaker;

    bool operator==(const TruthEntry&) const = default;
};

using TruthTable = std::map<std::string, TruthEntry>;

struct SynthBases {
    std::vector<Vector> style;       // one per speaker
    std::vector<Vector> content;     // one per topic
    std::vector<Vector> language;    // one per language
    std::vector<Vector> distractor;  // styles only carried by external text
};

struct SynthResult {
    std::vector<TextRecord> corpus;
    std::vector<EmbeddedText> embeddings;
    TruthTable truth;
    std::vector<EmbeddedText> heldout;  // extra speaker samples, not part of corpus
    SynthBases bases;
};

std::string synth_speaker_name(int s);
std::string synth_language_code(int l);

/// e = normalize(a*S[s] + b*C[t] + l*L[lang] + sigma*eps) for every
/// (speaker, topic, language, sample) cell, with S, C, L Gram-Schmidt
/// orthonormalized from seeded Gaussian draws and eps ~ N(0, I).
SynthResult synth_generate(const SynthConfig& cfg);

std::vector<IdVector> to_id_vectors(const std::vector<EmbeddedText>& items);

void write_truth(const std::filesystem::path& path, const TruthTable& truth);
TruthTable read_truth(const std::filesystem::path& path);

}  // namespace polystyle
