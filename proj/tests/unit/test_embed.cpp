#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "polymatch/embed.hpp"
#include "polymatch/rng.hpp"

using namespace polymatch;

namespace {

EmbedderConfig small(std::size_t dim = 64) {
    EmbedderConfig c;
    c.dimension = dim;
    return c;
}

// Independent signed-hash reference: padded lower-case trigrams, FNV-1a 64,
// bucket = h mod D, sign = top bit.
std::vector<double> reference_vector(const std::string& text, std::size_t dim) {
    std::string s = " ";
    for (char ch : text) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    s += " ";
    std::vector<double> v(dim, 0.0);
    for (std::size_t i = 0; i + 3 <= s.size(); ++i) {
        std::uint64_t h = 14695981039346656037ULL;
        for (std::size_t j = i; j < i + 3; ++j) {
            h ^= static_cast<unsigned char>(s[j]);
            h *= 1099511628211ULL;
        }
        v[h % dim] += (h >> 63) ? -1.0 : 1.0;
    }
    double n = 0;
    for (double x : v) n += x * x;
    for (double& x : v) x /= std::sqrt(n);
    return v;
}

double norm2(std::span<const float> v) {
    double s = 0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

CoordinatedDataset texts_dataset(const std::vector<std::vector<std::string>>& texts) {
    CoordinatedDataset cd;
    for (std::uint32_t t = 0; t < texts.size(); ++t) {
        SourceTable tab;
        tab.table_id = t;
        tab.columns = {"v"};
        for (std::uint32_t r = 0; r < texts[t].size(); ++r) tab.rows.push_back({{texts[t][r]}, r});
        cd.dataset.tables.push_back(tab);
    }
    cd.texts = texts;
    return cd;
}

}  // namespace

TEST_CASE("hashed vectors match the independent reference") {
    for (std::string text : {"abc", "abd", "Hello World", "a", "x-T50 2.5L"}) {
        const auto v = embed_text(text, small());
        const auto ref = reference_vector(text, 64);
        for (std::size_t i = 0; i < 64; ++i) CHECK(v[i] == doctest::Approx(ref[i]).epsilon(1e-6));
    }
}

TEST_CASE("abc is closer to abd than to xyz") {
    const auto abc = embed_text("abc", small());
    const auto abd = embed_text("abd", small());
    const auto xyz = embed_text("xyz", small());
    const float near = cosine_distance(abc, abd);
    CHECK(near > 0.0f);
    CHECK(near <= 1.0f);
    CHECK(near < cosine_distance(abc, xyz));
    // One shared trigram out of three on each side.
    CHECK(near == doctest::Approx(2.0 / 3.0).epsilon(1e-5));
}

TEST_CASE("unit norm, determinism, empty text") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        std::string s;
        const auto len = rng.below(80);
        for (std::uint64_t j = 0; j < len; ++j) s.push_back(static_cast<char>(32 + rng.below(95)));
        const auto v = embed_text(s, EmbedderConfig{});
        CHECK(std::fabs(norm2(v) - 1.0) <= 1e-6);
        CHECK(v == embed_text(s, EmbedderConfig{}));
        for (float x : v) CHECK(std::isfinite(x));
    }
    const auto e = embed_text("", small());
    CHECK(e[0] == 1.0f);
    CHECK(norm2(e) == doctest::Approx(1.0));
    CHECK(embed_text("   ", small()) == e);
}

TEST_CASE("truncation counts whitespace tokens") {
    CHECK(truncate_tokens("A  b\tc d", 3) == "a b c");
    CHECK(truncate_tokens("one", 5) == "one");
    EmbedderConfig c = small();
    c.max_seq_length = 2;
    CHECK(embed_text("alpha beta gamma", c) == embed_text("alpha beta delta", c));
    c.max_seq_length = 3;
    CHECK(embed_text("alpha beta gamma", c) != embed_text("alpha beta delta", c));
}

TEST_CASE("structure tokens are ignored by default") {
    CHECK(drop_structure_tokens("title: a b | year: 1995 | 2nd") == "a b 1995 2nd");
    CHECK(drop_structure_tokens("ratio: 1:2") == "1:2");
    CHECK(embed_text("title: Foo | year: 1995", small()) == embed_text("name: Foo | released: 1995", small()));
    EmbedderConfig keep = small();
    keep.skip_structure = false;
    CHECK(embed_text("title: Foo", keep) != embed_text("name: Foo", keep));
    CHECK(keep.fingerprint() != small().fingerprint());
}

TEST_CASE("distance properties") {
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
        std::vector<float> a(32), b(32);
        for (auto& x : a) x = static_cast<float>(rng.unit() - 0.5);
        for (auto& x : b) x = static_cast<float>(rng.unit() - 0.5);
        normalize(a);
        normalize(b);
        CHECK(cosine_distance(a, a) == 0.0f);
        CHECK(cosine_distance(a, b) == cosine_distance(b, a));
        CHECK(cosine_distance(a, b) >= 0.0f);
        CHECK(cosine_distance(a, b) <= 2.0f);
    }
    std::vector<float> z(4, 0.0f);
    CHECK_FALSE(normalize(z));
}

TEST_CASE("config validation") {
    EmbedderConfig c;
    c.dimension = 4;
    CHECK_THROWS_AS(c.validate(), Error);
    c = EmbedderConfig{};
    c.kind = EmbedderKind::external_service;
    CHECK_THROWS_AS(c.validate(), Error);
    c.service_endpoint = "http://127.0.0.1:1/embed";
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("embed_dataset: cardinality, duplicates, batch-size invariance") {
    const auto data = texts_dataset({{"alpha one", "beta two", "gamma"}, {"beta two", "delta"}});
    EmbedderConfig big = small();
    big.batch_size = 512;
    EmbedderConfig tiny = small();
    tiny.batch_size = 2;
    const auto a = embed_dataset(data, big);
    const auto b = embed_dataset(data, tiny);
    CHECK(a.size() == 5);
    CHECK(a == b);
    CHECK(cosine_distance(a[EntityRef{0, 1}], a[EntityRef{1, 0}]) == 0.0f);
    CHECK(a.ref_at(3) == EntityRef{1, 0});
    CHECK(a.index_of({1, 1}) == 4);
    CHECK_FALSE(a.contains({2, 0}));

    EmbedderConfig threaded = tiny;
    threaded.threads = 3;
    CHECK(embed_dataset(data, threaded) == a);
}

TEST_CASE("embedding table handles empty tables and round-trips to disk") {
    const auto data = texts_dataset({{"a"}, {}, {"b", "c"}});
    const auto emb = embed_dataset(data, small());
    CHECK(emb.ref_at(0) == EntityRef{0, 0});
    CHECK(emb.ref_at(1) == EntityRef{2, 0});
    CHECK(emb.table_block(1).empty());
    const auto path = std::filesystem::temp_directory_path() / "pm_emb_roundtrip.bin";
    emb.save(path);
    CHECK(EmbeddingTable::load(path) == emb);
    {
        std::ofstream(path, std::ios::binary) << "garbage";
    }
    CHECK_THROWS_AS(EmbeddingTable::load(path), Error);
}

namespace {

class FailingEmbedder : public Embedder {
public:
    std::size_t dimension() const override { return 8; }
    void embed_batch(std::span<const std::string> texts, std::span<float>) override {
        if (texts.front() == "bad") throw Error("boom");
    }
};

}  // namespace

TEST_CASE("embed_dataset reports the failing record") {
    const auto data = texts_dataset({{"ok", "ok2"}, {"bad"}});
    EmbedderConfig c = small(8);
    c.batch_size = 1;
    FailingEmbedder fail;
    try {
        embed_dataset(data, c, &fail);
        FAIL("expected EmbedError");
    } catch (const EmbedError& e) {
        REQUIRE(e.ref());
        CHECK(*e.ref() == EntityRef{1, 0});
    }
}
