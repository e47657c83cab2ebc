#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

// Eigen before httplib: <resolv.h> defines a _res macro that clashes with Eigen internals.
#include "polystyle/embedder.hpp"
#include "polystyle/error.hpp"
#include "polystyle/vecmath.hpp"
#include "support.hpp"

#include <httplib.h>
#include <json.hpp>

using namespace polystyle;
using testing::code_of;
using testing::vec;

namespace {

// Local embedding endpoint whose replies are scripted per request.
class FakeEndpoint {
public:
    using Handler = std::function<void(const nlohmann::json&, httplib::Response&)>;

    explicit FakeEndpoint(Handler h) : handler_(std::move(h)) {
        server_.Post("/v1/embed", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard<std::mutex> lock(mutex_);
            ++requests;
            last_auth = req.get_header_value("Authorization");
            handler_(nlohmann::json::parse(req.body), res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeEndpoint() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/embed"; }

    std::atomic<int> requests{0};
    std::string last_auth;

private:
    Handler handler_;
    std::mutex mutex_;  // handlers run one at a time
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

void reply_unit_vectors(const nlohmann::json& body, httplib::Response& res, int dim) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < body["texts"].size(); ++i) {
        std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
        v[i % static_cast<std::size_t>(dim)] = 2.0;
        rows.push_back(v);
    }
    res.set_content(nlohmann::json{{"embeddings", rows}}.dump(), "application/json");
}

EmbedderConfig http_config(const std::string& url, int dim) {
    EmbedderConfig cfg;
    cfg.provider = ProviderKind::Http;
    cfg.endpoint_url = url;
    cfg.dim = dim;
    cfg.backoff_base_s = 0.001;
    cfg.timeout_s = 5.0;
    return cfg;
}

}  // namespace

TEST_CASE("synthetic provider is deterministic and unit norm") {
    const std::vector<EmbedRequest> reqs{{"a", "hello"}, {"b", "world"}, {"c", "hello"}};
    SyntheticProvider p(16, 3), q(16, 3), other(16, 4);
    const auto x = p.embed(reqs), y = q.embed(reqs), z = other.embed(reqs);
    REQUIRE(x.size() == 3);
    CHECK(x == y);
    CHECK(x[0] == x[2]);
    CHECK(x[0] != x[1]);
    CHECK(x[0] != z[0]);
    for (const auto& v : x) CHECK(std::abs(v.norm() - 1.0) < 1e-12);
}

TEST_CASE("fixture provider looks vectors up by id") {
    const std::vector<IdVector> rows{{"a", vec({1, 0})}, {"b", vec({0, 1})}, {"c", vec({0.6, 0.8})}};
    FixtureProvider p(rows);
    CHECK(p.dim() == 2);
    const std::vector<EmbedRequest> reqs{{"c", "x"}, {"a", "y"}, {"b", "z"}};
    const auto out = p.embed(reqs);
    CHECK(out[0] == vec({0.6, 0.8}));
    CHECK(out[1] == vec({1, 0}));
    CHECK(out[2] == vec({0, 1}));
    const std::vector<EmbedRequest> missing{{"zz", "x"}};
    CHECK(code_of([&] { p.embed(missing); }) == Errc::MissingFixture);
}

TEST_CASE("embedder config validation") {
    EmbedderConfig cfg;
    cfg.provider = ProviderKind::Http;
    CHECK(code_of([&] { cfg.validate(); }) == Errc::ConfigInvalid);
    cfg.provider = ProviderKind::Fixture;
    CHECK(code_of([&] { cfg.validate(); }) == Errc::ConfigInvalid);
    cfg = EmbedderConfig{};
    cfg.endpoint_url = "http://localhost/x";
    CHECK(code_of([&] { cfg.validate(); }) == Errc::ConfigInvalid);
    CHECK(code_of([] { parse_provider("cloud"); }) == Errc::ConfigInvalid);
    CHECK(parse_provider("fixture") == ProviderKind::Fixture);
    const std::vector<EmbedRequest> none;
    CHECK(code_of([&] { embed_batch(none, EmbedderConfig{}); }) == Errc::EmptyInput);
}

TEST_CASE("http provider retries transient failures") {
    std::atomic<int> calls{0};
    FakeEndpoint server([&](const nlohmann::json& body, httplib::Response& res) {
        const int k = calls++;
        if (k == 0) {
            res.status = 500;
        } else if (k == 1) {
            res.status = 429;
        } else {
            reply_unit_vectors(body, res, 4);
        }
    });
    HttpProvider p(http_config(server.url(), 4));
    const std::vector<EmbedRequest> reqs{{"a", "x"}, {"b", "y"}};
    const auto out = p.embed(reqs);
    CHECK(p.attempts() == 3);
    REQUIRE(out.size() == 2);
    CHECK(out[0] == vec({1, 0, 0, 0}));
    CHECK(out[1] == vec({0, 1, 0, 0}));
}

TEST_CASE("http provider gives up after max retries") {
    FakeEndpoint server([](const nlohmann::json&, httplib::Response& res) { res.status = 503; });
    auto cfg = http_config(server.url(), 4);
    cfg.max_retries = 2;
    HttpProvider p(cfg);
    const std::vector<EmbedRequest> reqs{{"a", "x"}};
    CHECK(code_of([&] { p.embed(reqs); }) == Errc::ProviderUnavailable);
    CHECK(p.attempts() == 3);
}

TEST_CASE("http provider errors") {
    const std::vector<EmbedRequest> reqs{{"a", "x"}};
    {
        FakeEndpoint server([](const nlohmann::json&, httplib::Response& res) { res.status = 401; });
        HttpProvider p(http_config(server.url(), 4));
        CHECK(code_of([&] { p.embed(reqs); }) == Errc::AuthError);
        CHECK(p.attempts() == 1);
    }
    {
        FakeEndpoint server([](const nlohmann::json& b, httplib::Response& res) { reply_unit_vectors(b, res, 3); });
        HttpProvider p(http_config(server.url(), 4));
        CHECK(code_of([&] { p.embed(reqs); }) == Errc::DimMismatch);
    }
    {
        FakeEndpoint server([](const nlohmann::json&, httplib::Response& res) { res.status = 400; });
        HttpProvider p(http_config(server.url(), 4));
        CHECK(code_of([&] { p.embed(reqs); }) == Errc::ProviderUnavailable);
    }
    auto cfg = http_config("http://127.0.0.1:1/v1/embed", 4);
    cfg.api_key_env = "POLYSTYLE_TEST_UNSET_KEY";
    ::unsetenv("POLYSTYLE_TEST_UNSET_KEY");
    CHECK(code_of([&] { HttpProvider p(cfg); }) == Errc::AuthError);
}

TEST_CASE("http provider batches and sends the bearer token") {
    std::atomic<int> max_batch{0};
    std::string input_type;
    FakeEndpoint server([&](const nlohmann::json& body, httplib::Response& res) {
        max_batch = std::max<int>(max_batch, static_cast<int>(body["texts"].size()));
        input_type = body["input_type"].get<std::string>();
        reply_unit_vectors(body, res, 8);
    });
    ::setenv("POLYSTYLE_TEST_KEY", "secret", 1);
    auto cfg = http_config(server.url(), 8);
    cfg.api_key_env = "POLYSTYLE_TEST_KEY";
    cfg.batch_size = 3;
    cfg.max_concurrency = 2;
    HttpProvider p(cfg);
    std::vector<EmbedRequest> reqs;
    for (int i = 0; i < 10; ++i) reqs.push_back({"r" + std::to_string(i), "text " + std::to_string(i)});
    const auto out = p.embed(reqs);
    CHECK(out.size() == 10);
    CHECK(server.requests == 4);
    CHECK(max_batch == 3);
    CHECK(input_type == "clustering");
    CHECK(server.last_auth == "Bearer secret");
    CHECK(out[3] == out[0]);  // first text of its batch
}

TEST_CASE("long records are chunked and pooled") {
    std::string long_text;
    for (int i = 0; i < 60; ++i) long_text += "alpha beta gamma delta epsilon zeta eta theta iota kappa. ";
    const std::vector<TextRecord> records{{"short", "s", "en", "Just one line.", Source::Speaker},
                                          {"long", "s", "en", long_text, Source::Speaker}};
    SyntheticProvider p(12, 1);
    const auto out = embed_records(records, p, 100);
    REQUIRE(out.size() == 2);
    CHECK(out[0].id == "short");
    const std::vector<EmbedRequest> one{{"short", "Just one line."}};
    CHECK(out[0].vector == p.embed(one)[0]);

    std::vector<EmbedRequest> parts;
    const auto chunks = chunk_sentences(long_text, "en", 100);
    REQUIRE(chunks.size() > 1);
    for (std::size_t k = 0; k < chunks.size(); ++k) parts.push_back({"long#" + std::to_string(k), chunks[k].text});
    const Vector expected = normalize(mean_pool(p.embed(parts)));
    CHECK((out[1].vector - expected).cwiseAbs().maxCoeff() < 1e-12);
}

namespace {

double mean_cosine(const SynthResult& r, bool same_speaker) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < r.embeddings.size(); i += 3) {
        for (std::size_t j = i + 1; j < r.embeddings.size(); j += 5) {
            const auto& a = r.embeddings[i];
            const auto& b = r.embeddings[j];
            if ((a.record.speaker == b.record.speaker) != same_speaker) continue;
            sum += a.embedding.dot(b.embedding);
            ++n;
        }
    }
    return sum / n;
}

SynthConfig small_synth() {
    SynthConfig c;
    c.n_speakers = 3;
    c.n_topics = 3;
    c.n_languages = 2;
    c.samples_per_cell = 6;
    c.dim = 24;
    c.seed = 12;
    return c;
}

}  // namespace

TEST_CASE("synthetic corpus structure") {
    auto cfg = small_synth();
    cfg.external_per_cell = 2;
    cfg.holdout_per_cell = 1;
    const auto r = synth_generate(cfg);
    CHECK(r.corpus.size() == 3 * 3 * 2 * (6 + 2));
    CHECK(r.embeddings.size() == r.corpus.size());
    CHECK(r.heldout.size() == 3 * 3 * 2);
    CHECK(r.truth.size() == r.corpus.size() + r.heldout.size());
    for (const auto& e : r.embeddings) CHECK(std::abs(e.embedding.norm() - 1.0) < 1e-12);

    // Bases are orthonormal.
    std::vector<Vector> all = r.bases.style;
    all.insert(all.end(), r.bases.content.begin(), r.bases.content.end());
    all.insert(all.end(), r.bases.language.begin(), r.bases.language.end());
    for (std::size_t i = 0; i < all.size(); ++i) {
        for (std::size_t j = 0; j < all.size(); ++j) {
            CHECK(std::abs(all[i].dot(all[j]) - (i == j ? 1.0 : 0.0)) < 1e-12);
        }
    }

    const auto again = synth_generate(cfg);
    CHECK(again.corpus == r.corpus);
    for (std::size_t i = 0; i < r.embeddings.size(); ++i) CHECK(again.embeddings[i].embedding == r.embeddings[i].embedding);
}

TEST_CASE("without noise or language every cell collapses to one point") {
    auto cfg = small_synth();
    cfg.noise_sigma = 0.0;
    cfg.language_strength = 0.0;
    const auto r = synth_generate(cfg);
    for (const auto& a : r.embeddings) {
        for (const auto& b : r.embeddings) {
            const auto& ta = r.truth.at(a.record.id);
            const auto& tb = r.truth.at(b.record.id);
            if (ta.speaker == tb.speaker && ta.topic == tb.topic) {
                CHECK((a.embedding - b.embedding).norm() < 1e-12);
            }
        }
    }
}

TEST_CASE("style strength separates speakers") {
    double prev_gap = -1.0;
    for (double alpha : {0.0, 0.5, 1.0, 2.0}) {
        auto cfg = small_synth();
        cfg.style_strength = alpha;
        cfg.noise_sigma = 0.2;
        const auto r = synth_generate(cfg);
        const double gap = mean_cosine(r, true) - mean_cosine(r, false);
        if (alpha == 0.0) {
            CHECK(std::abs(gap) < 0.05);
        } else {
            CHECK(gap > prev_gap);
        }
        prev_gap = gap;
    }
}

TEST_CASE("synth config validation") {
    auto cfg = small_synth();
    cfg.n_speakers = 0;
    CHECK(code_of([&] { synth_generate(cfg); }) == Errc::ConfigInvalid);
    cfg = small_synth();
    cfg.noise_sigma = -1.0;
    CHECK(code_of([&] { synth_generate(cfg); }) == Errc::ConfigInvalid);
    cfg = small_synth();
    cfg.external_match_fraction = 1.5;
    CHECK(code_of([&] { synth_generate(cfg); }) == Errc::ConfigInvalid);
}

TEST_CASE("truth table round trip") {
    auto cfg = small_synth();
    cfg.external_per_cell = 1;
    const auto r = synth_generate(cfg);
    const auto dir = testing::temp_dir("truth");
    write_truth(dir / "truth.json", r.truth);
    CHECK(read_truth(dir / "truth.json") == r.truth);
    CHECK(code_of([&] { read_truth(dir / "none.json"); }) == Errc::MissingFile);
}
