#include "polystyle/embedder.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "polystyle/error.hpp"
#include "polystyle/log.hpp"
#include "polystyle/vecmath.hpp"

namespace polystyle {

using json = nlohmann::json;

std::string_view to_string(ProviderKind k) noexcept {
    switch (k) {
        case ProviderKind::Synthetic: return "synthetic";
        case ProviderKind::Fixture: return "fixture";
        case ProviderKind::Http: return "http";
    }
    return "synthetic";
}

ProviderKind parse_provider(std::string_view s) {
    if (s == "synthetic") return ProviderKind::Synthetic;
    if (s == "fixture") return ProviderKind::Fixture;
    if (s == "http") return ProviderKind::Http;
    throw Error(Errc::ConfigInvalid, "unknown embedding provider \"" + std::string(s) + "\"");
}

void EmbedderConfig::validate() const {
    if (dim <= 0) throw Error(Errc::ConfigInvalid, "embedder dim must be positive");
    if (batch_size == 0) throw Error(Errc::ConfigInvalid, "embedder batch_size must be positive");
    if (max_retries < 0) throw Error(Errc::ConfigInvalid, "embedder max_retries must be >= 0");
    if (max_concurrency < 1) throw Error(Errc::ConfigInvalid, "embedder max_concurrency must be >= 1");
    if (backoff_base_s < 0) throw Error(Errc::ConfigInvalid, "embedder backoff_base_s must be >= 0");
    const bool has_url = endpoint_url.has_value() && !endpoint_url->empty();
    if ((provider == ProviderKind::Http) != has_url) {
        throw Error(Errc::ConfigInvalid, "endpoint_url is required for, and only for, the http provider");
    }
    if (provider == ProviderKind::Fixture && !fixture_path) {
        throw Error(Errc::ConfigInvalid, "fixture provider needs fixture_path");
    }
}

// ---------------------------------------------------------------------------
// Synthetic

namespace {

Vector gaussian_vector(std::mt19937_64& gen, int dim) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(dim);
    for (int i = 0; i < dim; ++i) v[i] = normal(gen);
    return v;
}

Vector unit_or_throw(const Vector& v, Errc code, const std::string& what) {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw Error(code, what);
    return v / n;
}

}  // namespace

std::vector<Vector> SyntheticProvider::embed(std::span<const EmbedRequest> requests) {
    std::vector<Vector> out;
    out.reserve(requests.size());
    for (const auto& r : requests) {
        std::mt19937_64 gen(derive_seed(seed_, r.text));
        out.push_back(normalize(gaussian_vector(gen, dim_)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fixture

FixtureProvider::FixtureProvider(const std::filesystem::path& path)
    : FixtureProvider(read_embeddings(path)) {}

FixtureProvider::FixtureProvider(const std::vector<IdVector>& rows) {
    for (const auto& r : rows) {
        if (dim_ == 0) dim_ = static_cast<int>(r.vector.size());
        table_.emplace(r.id, r.vector);
    }
}

std::vector<Vector> FixtureProvider::embed(std::span<const EmbedRequest> requests) {
    std::vector<Vector> out;
    out.reserve(requests.size());
    for (const auto& r : requests) {
        auto it = table_.find(r.id);
        if (it == table_.end()) throw Error(Errc::MissingFixture, "no fixture vector for id \"" + r.id + "\"");
        out.push_back(it->second);
    }
    return out;
}

// ---------------------------------------------------------------------------
// HTTP

HttpProvider::HttpProvider(EmbedderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::string& url = *cfg_.endpoint_url;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw Error(Errc::ConfigInvalid, "endpoint_url must include a scheme: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    base_url_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
    if (cfg_.api_key_env) {
        const char* key = std::getenv(cfg_.api_key_env->c_str());
        if (!key || !*key) {
            throw Error(Errc::AuthError, "environment variable " + *cfg_.api_key_env + " is not set");
        }
        api_key_ = key;
    }
}

std::vector<Vector> HttpProvider::embed_one_batch(std::span<const EmbedRequest> batch,
                                                  std::size_t batch_index) {
    json body;
    body["texts"] = json::array();
    for (const auto& r : batch) body["texts"].push_back(r.text);
    body["input_type"] = cfg_.input_type;
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (api_key_) headers.emplace("Authorization", "Bearer " + *api_key_);

    std::mt19937_64 jitter_gen(derive_seed(cfg_.seed, static_cast<std::uint64_t>(batch_index)));
    std::uniform_real_distribution<double> jitter(0.5, 1.5);

    std::string last_failure;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0) {
            const double delay = cfg_.backoff_base_s * std::pow(2.0, attempt - 1) * jitter(jitter_gen);
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        }
        ++attempts_;
        httplib::Client client(base_url_);
        const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
            std::chrono::duration<double>(cfg_.timeout_s));
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        auto res = client.Post(path_, headers, payload, "application/json");
        if (!res) {
            last_failure = "connection error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 401 || res->status == 403) {
            throw Error(Errc::AuthError, "provider rejected credentials (HTTP " +
                                             std::to_string(res->status) + ")");
        }
        if (res->status == 429 || res->status >= 500) {
            last_failure = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw Error(Errc::ProviderUnavailable, "HTTP " + std::to_string(res->status));
        }

        json reply;
        try {
            reply = json::parse(res->body);
        } catch (const json::parse_error& e) {
            throw Error(Errc::ProviderUnavailable, std::string("malformed provider reply: ") + e.what());
        }
        if (!reply.is_object() || !reply.contains("embeddings") || !reply["embeddings"].is_array() ||
            reply["embeddings"].size() != batch.size()) {
            throw Error(Errc::ProviderUnavailable, "provider reply lacks one embedding per text");
        }
        std::vector<Vector> out;
        out.reserve(batch.size());
        for (const auto& row : reply["embeddings"]) {
            if (!row.is_array()) throw Error(Errc::ProviderUnavailable, "embedding is not an array");
            if (row.size() != static_cast<std::size_t>(cfg_.dim)) {
                throw Error(Errc::DimMismatch, "provider returned dim " + std::to_string(row.size()) +
                                                   ", expected " + std::to_string(cfg_.dim));
            }
            Vector v(cfg_.dim);
            for (int i = 0; i < cfg_.dim; ++i) {
                if (!row[static_cast<std::size_t>(i)].is_number()) {
                    throw Error(Errc::ProviderUnavailable, "embedding has a non-numeric entry");
                }
                v[i] = row[static_cast<std::size_t>(i)].get<double>();
            }
            out.push_back(unit_or_throw(v, Errc::ProviderUnavailable, "provider returned a zero vector"));
        }
        return out;
    }
    throw Error(Errc::ProviderUnavailable, "giving up after " + std::to_string(cfg_.max_retries + 1) +
                                               " attempts (" + last_failure + ")");
}

std::vector<Vector> HttpProvider::embed(std::span<const EmbedRequest> requests) {
    const std::size_t n_batches = (requests.size() + cfg_.batch_size - 1) / cfg_.batch_size;
    std::vector<std::vector<Vector>> results(n_batches);
    std::vector<std::exception_ptr> errors(n_batches);
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t b = next++; b < n_batches; b = next++) {
            const std::size_t from = b * cfg_.batch_size;
            const std::size_t count = std::min(cfg_.batch_size, requests.size() - from);
            try {
                results[b] = embed_one_batch(requests.subspan(from, count), b);
            } catch (...) {
                errors[b] = std::current_exception();
            }
        }
    };
    const std::size_t n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(cfg_.max_concurrency), n_batches);
    std::vector<std::thread> pool;
    for (std::size_t i = 1; i < n_workers; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    std::vector<Vector> out;
    out.reserve(requests.size());
    for (auto& batch : results) {
        for (auto& v : batch) out.push_back(std::move(v));
    }
    return out;
}

std::unique_ptr<EmbeddingProvider> make_provider(const EmbedderConfig& cfg) {
    cfg.validate();
    switch (cfg.provider) {
        case ProviderKind::Synthetic: return std::make_unique<SyntheticProvider>(cfg.dim, cfg.seed);
        case ProviderKind::Fixture: return std::make_unique<FixtureProvider>(*cfg.fixture_path);
        case ProviderKind::Http: return std::make_unique<HttpProvider>(cfg);
    }
    throw Error(Errc::ConfigInvalid, "unknown provider");
}

std::vector<Vector> embed_batch(std::span<const EmbedRequest> requests, const EmbedderConfig& cfg) {
    if (requests.empty()) throw Error(Errc::EmptyInput, "embed_batch needs at least one text");
    auto provider = make_provider(cfg);
    auto out = provider->embed(requests);
    for (auto& v : out) {
        if (v.size() != cfg.dim) {
            throw Error(Errc::DimMismatch, "provider returned dim " + std::to_string(v.size()) +
                                               ", expected " + std::to_string(cfg.dim));
        }
    }
    return out;
}

std::vector<IdVector> embed_records(const std::vector<TextRecord>& records,
                                    EmbeddingProvider& provider, std::int64_t token_budget) {
    std::vector<EmbedRequest> requests;
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // per record: [first, last)
    for (const auto& r : records) {
        const std::size_t first = requests.size();
        if (estimate_tokens(r.text, r.language) <= token_budget) {
            requests.push_back({r.id, r.text});
        } else {
            const auto chunks = chunk_sentences(r.text, r.language, token_budget);
            for (std::size_t k = 0; k < chunks.size(); ++k) {
                requests.push_back({r.id + "#" + std::to_string(k), chunks[k].text});
            }
        }
        spans.emplace_back(first, requests.size());
    }
    if (requests.empty()) return {};
    const auto vectors = provider.embed(requests);
    if (vectors.size() != requests.size()) {
        throw Error(Errc::ProviderUnavailable, "provider returned the wrong number of vectors");
    }

    std::vector<IdVector> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto [first, last] = spans[i];
        const std::span<const Vector> parts(vectors.data() + first, last - first);
        Vector v = parts.size() == 1 ? parts.front() : mean_pool(parts);
        if (v.size() != provider.dim()) {
            throw Error(Errc::DimMismatch, "embedding of \"" + records[i].id + "\" has dim " +
                                               std::to_string(v.size()));
        }
        out.push_back({records[i].id, normalize(v)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus generator

void SynthConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(Errc::ConfigInvalid, what); };
    if (n_speakers < 1 || n_topics < 1 || n_languages < 1 || samples_per_cell < 1) {
        fail("synth counts must be positive");
    }
    if (n_languages > 10) fail("synth supports at most 10 languages");
    if (external_per_cell < 0 || holdout_per_cell < 0 || n_distractor_styles < 0) {
        fail("synth external/holdout/distractor counts must be >= 0");
    }
    if (external_match_fraction < 0.0 || external_match_fraction > 1.0) {
        fail("external_match_fraction must lie in [0, 1]");
    }
    if (external_per_cell > 0 && external_match_fraction < 1.0 && n_distractor_styles == 0 &&
        n_speakers < 2) {
        fail("non-matching external text needs distractor styles or a second speaker");
    }
    if (dim < 1) fail("synth dim must be positive");
    for (double x : {style_strength, content_strength, language_strength, noise_sigma}) {
        if (!(x >= 0.0) || !std::isfinite(x)) fail("synth strengths must be finite and >= 0");
    }
    if (style_strength + content_strength + language_strength + noise_sigma <= 0.0) {
        fail("at least one of style, content, language strength or noise must be positive");
    }
}

std::string synth_speaker_name(int s) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "spk%02d", s);
    return buf;
}

std::string synth_language_code(int l) {
    static constexpr const char* kCodes[] = {"en", "fr", "de", "es", "it",
                                             "pt", "nl", "sv", "pl", "ja"};
    return kCodes[l];
}

namespace {

std::string topic_name(int t) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "t%02d", t);
    return buf;
}

std::string sample_id(const char* prefix, const std::string& spk, int t, const std::string& lang,
                      int i) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s%s-t%02d-%s-%03d", prefix, spk.c_str(), t, lang.c_str(), i);
    return buf;
}

class BasisBuilder {
public:
    BasisBuilder(int dim, std::uint64_t seed) : dim_(dim), gen_(seed) {}

    Vector next() {
        Vector g = gaussian_vector(gen_, dim_);
        Vector r = g;
        for (const auto& b : accepted_) r -= b.dot(r) * b;
        if (r.norm() < 1e-8 * g.norm()) {
            if (!warned_) {
                log::warn("synth: more latent factors than dimensions; bases are not orthogonal");
                warned_ = true;
            }
            return g.normalized();
        }
        r.normalize();
        accepted_.push_back(r);
        return r;
    }

private:
    int dim_;
    std::mt19937_64 gen_;
    std::vector<Vector> accepted_;
    bool warned_ = false;
};

}  // namespace

SynthResult synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    const int factors = cfg.n_speakers + cfg.n_topics + cfg.n_languages +
                        (cfg.external_per_cell > 0 ? cfg.n_distractor_styles : 0);
    if (cfg.dim < factors) {
        log::warn("synth: dim " + std::to_string(cfg.dim) + " is below the " +
                  std::to_string(factors) + " latent factors");
    }

    SynthResult out;
    BasisBuilder basis(cfg.dim, derive_seed(cfg.seed, "bases"));
    for (int s = 0; s < cfg.n_speakers; ++s) out.bases.style.push_back(basis.next());
    for (int t = 0; t < cfg.n_topics; ++t) out.bases.content.push_back(basis.next());
    for (int l = 0; l < cfg.n_languages; ++l) out.bases.language.push_back(basis.next());
    if (cfg.external_per_cell > 0) {
        for (int d = 0; d < cfg.n_distractor_styles; ++d) out.bases.distractor.push_back(basis.next());
    }

    auto draw = [&](std::mt19937_64& gen, const Vector& style, int t, int l) {
        Vector e = cfg.style_strength * style + cfg.content_strength * out.bases.content[t] +
                   cfg.language_strength * out.bases.language[l] +
                   cfg.noise_sigma * gaussian_vector(gen, cfg.dim);
        return unit_or_throw(e, Errc::ConfigInvalid, "synthetic embedding has zero norm");
    };

    std::mt19937_64 noise(derive_seed(cfg.seed, "items"));
    std::mt19937_64 pick(derive_seed(cfg.seed, "externals"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (int s = 0; s < cfg.n_speakers; ++s) {
        const std::string spk = synth_speaker_name(s);
        for (int t = 0; t < cfg.n_topics; ++t) {
            for (int l = 0; l < cfg.n_languages; ++l) {
                const std::string lang = synth_language_code(l);
                for (int i = 0; i < cfg.samples_per_cell; ++i) {
                    TextRecord r{sample_id("", spk, t, lang, i), spk, lang,
                                 "Sample " + std::to_string(i) + " by " + spk + " on topic " +
                                     topic_name(t) + " in " + lang + ".",
                                 Source::Speaker};
                    out.truth[r.id] = {spk, spk, t, lang, Source::Speaker};
                    out.embeddings.push_back({r, draw(noise, out.bases.style[s], t, l)});
                    out.corpus.push_back(std::move(r));
                }
                for (int i = 0; i < cfg.external_per_cell; ++i) {
                    std::string style = spk;
                    const Vector* style_vec = &out.bases.style[s];
                    if (unit(pick) >= cfg.external_match_fraction) {
                        if (cfg.n_distractor_styles > 0) {
                            const int d = std::uniform_int_distribution<int>(0, cfg.n_distractor_styles - 1)(pick);
                            char buf[16];
                            std::snprintf(buf, sizeof buf, "d%02d", d);
                            style = buf;
                            style_vec = &out.bases.distractor[static_cast<std::size_t>(d)];
                        } else {
                            int other = std::uniform_int_distribution<int>(0, cfg.n_speakers - 2)(pick);
                            if (other >= s) ++other;
                            style = synth_speaker_name(other);
                            style_vec = &out.bases.style[static_cast<std::size_t>(other)];
                        }
                    }
                    TextRecord r{sample_id("ext-", spk, t, lang, i), spk, lang,
                                 "External passage " + std::to_string(i) + " on topic " +
                                     topic_name(t) + " in " + lang + ".",
                                 Source::External};
                    out.truth[r.id] = {style, spk, t, lang, Source::External};
                    out.embeddings.push_back({r, draw(noise, *style_vec, t, l)});
                    out.corpus.push_back(std::move(r));
                }
            }
        }
    }

    std::mt19937_64 held(derive_seed(cfg.seed, "holdout"));
    for (int s = 0; s < cfg.n_speakers && cfg.holdout_per_cell > 0; ++s) {
        const std::string spk = synth_speaker_name(s);
        for (int t = 0; t < cfg.n_topics; ++t) {
            for (int l = 0; l < cfg.n_languages; ++l) {
                const std::string lang = synth_language_code(l);
                for (int i = 0; i < cfg.holdout_per_cell; ++i) {
                    const int index = cfg.samples_per_cell + i;
                    TextRecord r{sample_id("", spk, t, lang, index), spk, lang,
                                 "Held-out sample " + std::to_string(index) + " by " + spk + ".",
                                 Source::Speaker};
                    out.truth[r.id] = {spk, spk, t, lang, Source::Speaker};
                    out.heldout.push_back({std::move(r), draw(held, out.bases.style[s], t, l)});
                }
            }
        }
    }
    return out;
}

std::vector<IdVector> to_id_vectors(const std::vector<EmbeddedText>& items) {
    std::vector<IdVector> out;
    out.reserve(items.size());
    for (const auto& e : items) out.push_back({e.record.id, e.embedding});
    return out;
}

void write_truth(const std::filesystem::path& path, const TruthTable& truth) {
    json j = json::object();
    for (const auto& [id, t] : truth) {
        j[id] = {{"style", t.style},
                 {"speaker", t.speaker},
                 {"topic", t.topic},
                 {"language", t.language},
                 {"source", std::string(to_string(t.source))}};
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::MissingFile, "cannot write " + path.string());
    out << j.dump(1) << '\n';
}

TruthTable read_truth(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::MissingFile, "cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(Errc::MalformedLine, path.string() + ": " + e.what());
    }
    TruthTable out;
    for (const auto& [id, t] : j.items()) {
        out[id] = {t.at("style").get<std::string>(), t.at("speaker").get<std::string>(),
                   t.at("topic").get<int>(), t.at("language").get<std::string>(),
                   parse_source(t.at("source").get<std::string>())};
    }
    return out;
}

}  // namespace polystyle
