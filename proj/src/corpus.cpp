#include "polystyle/corpus.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "polystyle/error.hpp"
#include "polystyle/vecmath.hpp"

namespace polystyle {

using json = nlohmann::json;

std::string_view to_string(Source s) noexcept {
    return s == Source::Speaker ? "speaker" : "external";
}

Source parse_source(std::string_view s) {
    if (s == "speaker") return Source::Speaker;
    if (s == "external") return Source::External;
    throw Error(Errc::SchemaViolation, "source must be \"speaker\" or \"external\", got \"" +
                                           std::string(s) + "\"");
}

// ---------------------------------------------------------------------------
// Token budgeting

int tokens_per_word_tenths(std::string_view language) noexcept {
    if (language == "en") return 13;
    if (language == "fr") return 20;
    if (language == "de") return 21;
    if (language == "es") return 21;
    return 21;
}

namespace {

bool is_space(char c) noexcept { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::vector<std::string_view> split_words(std::string_view text) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) words.push_back(text.substr(start, i - start));
    }
    return words;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

std::int64_t tokens_for_words(std::int64_t words, int tenths) {
    return (words * tenths + 9) / 10;
}

std::string join_words(const std::vector<std::string_view>& words, std::size_t from,
                       std::size_t to) {
    std::string out;
    for (std::size_t i = from; i < to; ++i) {
        if (i > from) out.push_back(' ');
        out.append(words[i]);
    }
    return out;
}

}  // namespace

std::size_t count_words(std::string_view text) noexcept {
    std::size_t n = 0;
    bool in_word = false;
    for (char c : text) {
        if (is_space(c)) {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            ++n;
        }
    }
    return n;
}

std::int64_t estimate_tokens(std::string_view text, std::string_view language) {
    return tokens_for_words(static_cast<std::int64_t>(count_words(text)),
                            tokens_per_word_tenths(language));
}

std::vector<std::string> split_sentences(std::string_view text) {
    static constexpr std::string_view kIdeographicStop = "\xE3\x80\x82";  // U+3002
    std::vector<std::string> sentences;
    std::size_t start = 0;
    auto emit = [&](std::size_t end) {
        std::string_view s = trim(text.substr(start, end - start));
        if (!s.empty()) sentences.emplace_back(s);
        start = end;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '.' || c == '!' || c == '?') {
            if (i + 1 == text.size() || is_space(text[i + 1])) emit(i + 1);
        } else if (text.compare(i, kIdeographicStop.size(), kIdeographicStop) == 0) {
            i += kIdeographicStop.size() - 1;
            emit(i + 1);
        }
    }
    emit(text.size());
    return sentences;
}

std::vector<Chunk> chunk_sentences(std::string_view text, std::string_view language,
                                   std::int64_t budget) {
    const int tenths = tokens_per_word_tenths(language);
    if (budget <= 0) throw Error(Errc::ConfigInvalid, "token budget must be positive");
    const std::int64_t max_words = budget * 10 / tenths;
    if (max_words < 1) {
        throw Error(Errc::ConfigInvalid, "token budget " + std::to_string(budget) +
                                             " cannot hold a single word");
    }

    std::vector<Chunk> chunks;
    std::string current;
    std::int64_t current_words = 0;
    auto flush = [&] {
        if (current_words == 0) return;
        chunks.push_back({std::move(current), tokens_for_words(current_words, tenths)});
        current.clear();
        current_words = 0;
    };

    for (const std::string& sentence : split_sentences(text)) {
        const auto words = split_words(sentence);
        const auto n = static_cast<std::int64_t>(words.size());
        if (n == 0) continue;
        if (n > max_words) {
            flush();
            for (std::size_t from = 0; from < words.size();
                 from += static_cast<std::size_t>(max_words)) {
                const std::size_t to =
                    std::min(words.size(), from + static_cast<std::size_t>(max_words));
                const auto piece_words = static_cast<std::int64_t>(to - from);
                chunks.push_back({join_words(words, from, to), tokens_for_words(piece_words, tenths)});
            }
            continue;
        }
        if (tokens_for_words(current_words + n, tenths) > budget) flush();
        if (!current.empty()) current.push_back(' ');
        current.append(sentence);
        current_words += n;
    }
    flush();
    return chunks;
}

// ---------------------------------------------------------------------------
// Formatting

std::string format_double(double v) {
    if (!std::isfinite(v)) throw Error(Errc::NonFiniteValue, "cannot serialize non-finite value");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.16e", v);
    return buf;
}

std::string format_vector(const Vector& v) {
    std::string out = "[";
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i > 0) out.push_back(',');
        out += format_double(v[i]);
    }
    out.push_back(']');
    return out;
}

bool is_language_code(std::string_view code) noexcept {
    return code.size() == 2 && std::islower(static_cast<unsigned char>(code[0])) &&
           std::islower(static_cast<unsigned char>(code[1]));
}

// ---------------------------------------------------------------------------
// JSONL plumbing

namespace {

class LineError {
public:
    LineError(const std::filesystem::path& path, std::size_t line) : path_(path), line_(line) {}

    [[noreturn]] void fail(Errc code, const std::string& what) const {
        throw Error(code, path_.string() + ":" + std::to_string(line_) + ": " + what);
    }

private:
    const std::filesystem::path& path_;
    std::size_t line_;
};

void for_each_line(const std::filesystem::path& path,
                   const std::function<void(const json&, const LineError&)>& fn) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::MissingFile, "cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const LineError where(path, line_no);
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            where.fail(Errc::MalformedLine, e.what());
        }
        if (!obj.is_object()) where.fail(Errc::MalformedLine, "line is not a JSON object");
        fn(obj, where);
    }
}

void require_fields(const json& obj, std::initializer_list<const char*> fields,
                    const LineError& where) {
    for (const char* f : fields) {
        if (!obj.contains(f)) where.fail(Errc::SchemaViolation, std::string("missing field \"") + f + "\"");
    }
    for (const auto& [key, _] : obj.items()) {
        bool known = false;
        for (const char* f : fields) known = known || key == f;
        if (!known) where.fail(Errc::SchemaViolation, "unknown field \"" + key + "\"");
    }
}

std::string get_string(const json& obj, const char* field, const LineError& where) {
    const json& v = obj.at(field);
    if (!v.is_string()) where.fail(Errc::SchemaViolation, std::string("field \"") + field + "\" must be a string");
    return v.get<std::string>();
}

Vector get_vector(const json& obj, const char* field, const LineError& where) {
    const json& v = obj.at(field);
    if (!v.is_array() || v.empty()) {
        where.fail(Errc::SchemaViolation, std::string("field \"") + field + "\" must be a nonempty array");
    }
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) where.fail(Errc::SchemaViolation, std::string("field \"") + field + "\" has a non-numeric entry");
        out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
    if (!out.allFinite()) where.fail(Errc::SchemaViolation, std::string("field \"") + field + "\" has a non-finite entry");
    return out;
}

int get_int(const json& obj, const char* field, const LineError& where) {
    const json& v = obj.at(field);
    if (!v.is_number_integer()) where.fail(Errc::SchemaViolation, std::string("field \"") + field + "\" must be an integer");
    return v.get<int>();
}

std::string quote(const std::string& s) { return json(s).dump(); }

class LineWriter {
public:
    explicit LineWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw Error(Errc::MissingFile, "cannot write " + path.string());
    }
    void line(const std::string& s) { out_ << s << '\n'; }

private:
    std::ofstream out_;
};

}  // namespace

std::vector<TextRecord> read_corpus(const std::filesystem::path& path,
                                    const std::set<std::string>* allowed_languages) {
    std::vector<TextRecord> out;
    std::unordered_set<std::string> seen;
    for_each_line(path, [&](const json& obj, const LineError& where) {
        require_fields(obj, {"id", "speaker", "language", "text", "source"}, where);
        TextRecord r;
        r.id = get_string(obj, "id", where);
        r.speaker = get_string(obj, "speaker", where);
        r.language = get_string(obj, "language", where);
        r.text = get_string(obj, "text", where);
        try {
            r.source = parse_source(get_string(obj, "source", where));
        } catch (const Error& e) {
            where.fail(Errc::SchemaViolation, e.what());
        }
        if (r.id.empty()) where.fail(Errc::SchemaViolation, "field \"id\" is empty");
        if (!is_language_code(r.language)) where.fail(Errc::SchemaViolation, "field \"language\" is not a lowercase ISO-639-1 code");
        if (allowed_languages && !allowed_languages->contains(r.language)) {
            where.fail(Errc::SchemaViolation, "language \"" + r.language + "\" is not configured");
        }
        if (trim(r.text).empty()) where.fail(Errc::SchemaViolation, "field \"text\" is blank");
        if (!seen.insert(r.id).second) where.fail(Errc::DuplicateId, "duplicate id \"" + r.id + "\"");
        out.push_back(std::move(r));
    });
    return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<TextRecord>& records) {
    LineWriter w(path);
    for (const auto& r : records) {
        w.line("{\"id\":" + quote(r.id) + ",\"speaker\":" + quote(r.speaker) +
               ",\"language\":" + quote(r.language) + ",\"text\":" + quote(r.text) +
               ",\"source\":\"" + std::string(to_string(r.source)) + "\"}");
    }
}

std::vector<IdVector> read_embeddings(const std::filesystem::path& path) {
    std::vector<IdVector> out;
    std::unordered_set<std::string> seen;
    for_each_line(path, [&](const json& obj, const LineError& where) {
        require_fields(obj, {"id", "vector"}, where);
        IdVector row{get_string(obj, "id", where), get_vector(obj, "vector", where)};
        if (!out.empty() && out.front().vector.size() != row.vector.size()) {
            where.fail(Errc::DimensionMismatch, "embedding dim " + std::to_string(row.vector.size()) +
                                                    " differs from " + std::to_string(out.front().vector.size()));
        }
        if (!seen.insert(row.id).second) where.fail(Errc::DuplicateId, "duplicate id \"" + row.id + "\"");
        out.push_back(std::move(row));
    });
    return out;
}

void write_embeddings(const std::filesystem::path& path, const std::vector<IdVector>& rows) {
    LineWriter w(path);
    for (const auto& r : rows) {
        w.line("{\"id\":" + quote(r.id) + ",\"vector\":" + format_vector(r.vector) + "}");
    }
}

std::vector<ClusterLabel> read_clusters(const std::filesystem::path& path) {
    std::vector<ClusterLabel> out;
    std::unordered_set<std::string> seen;
    for_each_line(path, [&](const json& obj, const LineError& where) {
        require_fields(obj, {"id", "cluster"}, where);
        ClusterLabel row{get_string(obj, "id", where), get_int(obj, "cluster", where)};
        if (row.cluster < 0) where.fail(Errc::SchemaViolation, "cluster index is negative");
        if (!seen.insert(row.id).second) where.fail(Errc::DuplicateId, "duplicate id \"" + row.id + "\"");
        out.push_back(std::move(row));
    });
    return out;
}

void write_clusters(const std::filesystem::path& path, const std::vector<ClusterLabel>& rows) {
    LineWriter w(path);
    for (const auto& r : rows) {
        w.line("{\"id\":" + quote(r.id) + ",\"cluster\":" + std::to_string(r.cluster) + "}");
    }
}

std::vector<PairRecord> read_pairs(const std::filesystem::path& path) {
    std::vector<PairRecord> out;
    for_each_line(path, [&](const json& obj, const LineError& where) {
        require_fields(obj, {"a", "b", "label"}, where);
        PairRecord row{get_string(obj, "a", where), get_string(obj, "b", where),
                       get_int(obj, "label", where)};
        if (row.label != 0 && row.label != 1) where.fail(Errc::SchemaViolation, "label must be 0 or 1");
        out.push_back(std::move(row));
    });
    return out;
}

void write_pairs(const std::filesystem::path& path, const std::vector<PairRecord>& rows) {
    LineWriter w(path);
    for (const auto& r : rows) {
        w.line("{\"a\":" + quote(r.a) + ",\"b\":" + quote(r.b) + ",\"label\":" +
               std::to_string(r.label) + "}");
    }
}

std::vector<ProfileRecord> read_profiles(const std::filesystem::path& path) {
    std::vector<ProfileRecord> out;
    std::unordered_set<std::string> seen;
    for_each_line(path, [&](const json& obj, const LineError& where) {
        require_fields(obj, {"speaker", "language", "vector"}, where);
        ProfileRecord row{get_string(obj, "speaker", where), get_string(obj, "language", where),
                          get_vector(obj, "vector", where)};
        if (row.language != "*" && !is_language_code(row.language)) {
            where.fail(Errc::SchemaViolation, "field \"language\" must be an ISO-639-1 code or \"*\"");
        }
        if (!seen.insert(row.speaker + '\n' + row.language).second) {
            where.fail(Errc::DuplicateId, "duplicate profile (" + row.speaker + ", " + row.language + ")");
        }
        out.push_back(std::move(row));
    });
    return out;
}

void write_profiles(const std::filesystem::path& path, const std::vector<ProfileRecord>& rows) {
    LineWriter w(path);
    for (const auto& r : rows) {
        w.line("{\"speaker\":" + quote(r.speaker) + ",\"language\":" + quote(r.language) +
               ",\"vector\":" + format_vector(r.vector) + "}");
    }
}

std::vector<EmbeddedText> join_embeddings(const std::vector<TextRecord>& records,
                                          const std::vector<IdVector>& embeddings,
                                          double norm_tolerance) {
    std::unordered_map<std::string, const Vector*> by_id;
    by_id.reserve(embeddings.size());
    for (const auto& e : embeddings) by_id.emplace(e.id, &e.vector);

    std::vector<EmbeddedText> out;
    out.reserve(records.size());
    Eigen::Index dim = -1;
    for (const auto& r : records) {
        auto it = by_id.find(r.id);
        if (it == by_id.end()) throw Error(Errc::InconsistentInput, "no embedding for id \"" + r.id + "\"");
        const Vector& v = *it->second;
        if (dim < 0) dim = v.size();
        if (v.size() != dim) {
            throw Error(Errc::DimensionMismatch, "embedding of \"" + r.id + "\" has dim " +
                                                     std::to_string(v.size()) + ", expected " +
                                                     std::to_string(dim));
        }
        if (std::abs(v.norm() - 1.0) > norm_tolerance) {
            throw Error(Errc::InconsistentInput, "embedding of \"" + r.id + "\" is not unit norm");
        }
        out.push_back({r, v});
    }
    return out;
}

}  // namespace polystyle
