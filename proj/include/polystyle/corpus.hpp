#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "polystyle/types.hpp"

namespace polystyle {

enum class Source { Speaker, External };

std::string_view to_string(Source s) noexcept;
Source parse_source(std::string_view s);

struct TextRecord {
    std::string id;
    std::string speaker;
    std::string language;  // lowercase ISO-639-1
    std::string text;
    Source source = Source::Speaker;

    bool operator==(const TextRecord&) const = default;
};

struct EmbeddedText {
    TextRecord record;
    Vector embedding;
};

/// {"id", "vector"} line of embeddings.jsonl.
struct IdVector {
    std::string id;
    Vector vector;

    bool operator==(const IdVector& o) const { return id == o.id && vector == o.vector; }
};

struct ClusterLabel {
    std::string id;
    int cluster = 0;

    bool operator==(const ClusterLabel&) const = default;
};

struct PairRecord {
    std::string a;
    std::string b;
    int label = 0;  // 0 = similar style, 1 = dissimilar style

    bool operator==(const PairRecord&) const = default;
};

struct ProfileRecord {
    std::string speaker;
    std::string language;  // ISO code or "*"
    Vector vector;

    bool operator==(const ProfileRecord& o) const {
        return speaker == o.speaker && language == o.language && vector == o.vector;
    }
};

// ---------------------------------------------------------------------------
// Token budgeting

inline constexpr int kDefaultTokenBudget = 512;

/// Tokens per word, in tenths, for the supported languages. Unknown
/// languages fall back to the most conservative ratio (2.1).
int tokens_per_word_tenths(std::string_view language) noexcept;

std::size_t count_words(std::string_view text) noexcept;

/// ceil(word_count * ratio); 0 for empty text.
std::int64_t estimate_tokens(std::string_view text, std::string_view language);

struct Chunk {
    std::string text;
    std::int64_t estimated_tokens = 0;
};

std::vector<std::string> split_sentences(std::string_view text);

/// Greedy sentence packing under `budget` estimated tokens. Sentences that
/// alone exceed the budget are hard-split on word boundaries.
std::vector<Chunk> chunk_sentences(std::string_view text, std::string_view language,
                                   std::int64_t budget = kDefaultTokenBudget);

// ---------------------------------------------------------------------------
// JSONL files. Readers reject unknown fields, report the 1-based line number
// of malformed lines and enforce id uniqueness.

bool is_language_code(std::string_view code) noexcept;

std::vector<TextRecord> read_corpus(const std::filesystem::path& path,
                                    const std::set<std::string>* allowed_languages = nullptr);
void write_corpus(const std::filesystem::path& path, const std::vector<TextRecord>& records);

std::vector<IdVector> read_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, const std::vector<IdVector>& rows);

std::vector<ClusterLabel> read_clusters(const std::filesystem::path& path);
void write_clusters(const std::filesystem::path& path, const std::vector<ClusterLabel>& rows);

std::vector<PairRecord> read_pairs(const std::filesystem::path& path);
void write_pairs(const std::filesystem::path& path, const std::vector<PairRecord>& rows);

std::vector<ProfileRecord> read_profiles(const std::filesystem::path& path);
void write_profiles(const std::filesystem::path& path, const std::vector<ProfileRecord>& rows);

/// Joins records with their embeddings by id. Every record must have one
/// embedding; all embeddings must share a dimension and have unit norm
/// within `norm_tolerance`.
std::vector<EmbeddedText> join_embeddings(const std::vector<TextRecord>& records,
                                          const std::vector<IdVector>& embeddings,
                                          double norm_tolerance = 1e-6);

/// Scientific notation with 17 significant digits; parses back bit-exactly.
std::string format_double(double v);
std::string format_vector(const Vector& v);

}  // namespace polystyle
