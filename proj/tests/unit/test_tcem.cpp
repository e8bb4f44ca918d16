#include <algorithm>
#include <set>

#include "doctest.h"
#include "polymatch/tcem.hpp"
#include "support/oracles.hpp"

using namespace polymatch;

namespace {

// Unit vectors on a circle; angle in degrees.
EmbeddingTable circle_table(const std::vector<std::vector<double>>& angles) {
    std::vector<std::size_t> sizes;
    for (const auto& t : angles) sizes.push_back(t.size());
    EmbeddingTable emb(sizes, 2);
    std::size_t i = 0;
    for (const auto& t : angles) {
        for (double deg : t) {
            auto row = emb.mutable_row(i++);
            row[0] = static_cast<float>(std::cos(deg * M_PI / 180.0));
            row[1] = static_cast<float>(std::sin(deg * M_PI / 180.0));
        }
    }
    return emb;
}

TcemParams exact_params(double lambda) {
    TcemParams p;
    p.lambda = lambda;
    p.exact_threshold = 1u << 30;
    return p;
}

TcemParams hnsw_params(double lambda) {
    TcemParams p;
    p.lambda = lambda;
    p.exact_threshold = 0;
    p.ann.ef_search = 4096;  // exhaustive for these sizes
    return p;
}

std::vector<MatchPair> oracle_pairs(const EmbeddingTable& emb, double lambda) {
    std::vector<MatchPair> all;
    for (std::uint32_t a = 0; a < emb.table_count(); ++a) {
        for (std::uint32_t b = a + 1; b < emb.table_count(); ++b) {
            if (emb.table_sizes()[a] == 0 || emb.table_sizes()[b] == 0) continue;
            const auto p = oracle::mutual_top1(emb, a, b, lambda);
            all.insert(all.end(), p.begin(), p.end());
        }
    }
    std::sort(all.begin(), all.end(),
              [](const MatchPair& x, const MatchPair& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
    return all;
}

bool same_pairs(std::vector<MatchPair> x, std::vector<MatchPair> y) {
    auto key = [](const MatchPair& p) { return std::pair(p.a, p.b); };
    std::vector<std::pair<EntityRef, EntityRef>> kx, ky;
    for (const auto& p : x) kx.push_back(key(p));
    for (const auto& p : y) ky.push_back(key(p));
    std::sort(kx.begin(), kx.end());
    std::sort(ky.begin(), ky.end());
    return kx == ky;
}

}  // namespace

TEST_CASE("disjoint set") {
    DisjointSet ds(6);
    CHECK(ds.unite(0, 1));
    CHECK(ds.unite(2, 3));
    CHECK_FALSE(ds.unite(1, 0));
    CHECK(ds.unite(1, 3));
    CHECK(ds.find(0) == ds.find(2));
    CHECK(ds.find(4) != ds.find(5));
    CHECK(ds.size() == 6);
}

TEST_CASE("three-table chain merges transitively") {
    // t0[0] ~ t1[0] ~ t2[0] around 0 degrees, t0[1] ~ t1[1] around 90.
    const auto emb = circle_table({{0, 90}, {5, 92}, {10, 200}});
    const auto r = run_tcem(emb, exact_params(0.3));
    REQUIRE(r.clusters.size() == 2);
    CHECK(r.clusters[0] == Cluster({{0, 0}, {1, 0}, {2, 0}}));
    CHECK(r.clusters[1] == Cluster({{0, 1}, {1, 1}}));
    for (const auto& p : r.pairs) {
        CHECK(p.a < p.b);
        CHECK(p.a.table != p.b.table);
        CHECK(p.distance <= 0.3f);
    }
}

TEST_CASE("non-mutual and far pairs are dropped") {
    // t1 has one point near both t0 points; only the closer is mutual.
    const auto emb = circle_table({{0, 20}, {18}});
    const auto r = run_tcem(emb, exact_params(0.5));
    REQUIRE(r.pairs.size() == 1);
    CHECK(r.pairs[0].a == EntityRef{0, 1});
    CHECK(r.pairs[0].b == EntityRef{1, 0});

    const auto far = circle_table({{0}, {100}});
    CHECK(run_tcem(far, exact_params(0.3)).pairs.empty());
    CHECK(run_tcem(far, exact_params(2.0)).pairs.size() == 1);
}

TEST_CASE("pair distance exactly at lambda is kept") {
    const auto emb = circle_table({{0}, {60}});  // 1 - cos 60 = 0.5
    const float d = cosine_distance(emb[EntityRef{0, 0}], emb[EntityRef{1, 0}]);
    CHECK(run_tcem(emb, exact_params(d)).pairs.size() == 1);
    CHECK(run_tcem(emb, exact_params(std::nextafter(d, 0.0f) - 1e-6)).pairs.empty());
}

TEST_CASE("one table is rejected, empty tables are skipped") {
    const auto one = circle_table({{0, 1, 2}});
    CHECK_THROWS_AS(run_tcem(one, exact_params(1.0)), Error);
    const auto gap = circle_table({{0}, {}, {1}});
    const auto r = run_tcem(gap, exact_params(0.3));
    REQUIRE(r.clusters.size() == 1);
    CHECK(r.clusters[0] == Cluster({{0, 0}, {2, 0}}));
}

TEST_CASE("transitive merge equals breadth-first components") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::size_t> sizes{1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(8)};
        std::vector<MatchPair> pairs;
        const auto edges = rng.below(12);
        for (std::uint64_t e = 0; e < edges; ++e) {
            std::uint32_t ta = static_cast<std::uint32_t>(rng.below(3));
            std::uint32_t tb = static_cast<std::uint32_t>((ta + 1 + rng.below(2)) % 3);
            EntityRef a{ta, static_cast<std::uint32_t>(rng.below(sizes[ta]))};
            EntityRef b{tb, static_cast<std::uint32_t>(rng.below(sizes[tb]))};
            if (b < a) std::swap(a, b);
            pairs.push_back({a, b, 0.0f});
        }
        CHECK(transitive_merge(pairs, sizes) == oracle::bfs_components(pairs));
    }
}

TEST_CASE("exact path matches the brute-force oracle") {
    Rng rng(37);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t tables = 2 + rng.below(3);
        std::vector<std::size_t> sizes;
        for (std::size_t t = 0; t < tables; ++t) sizes.push_back(rng.below(25));
        const auto emb = oracle::clustered_table(sizes, 12, 6, 0.3, rng);
        for (double lambda : {0.05, 0.2, 0.5}) {
            const auto r = run_tcem(emb, exact_params(lambda));
            const auto want = oracle_pairs(emb, lambda);
            CHECK(same_pairs(r.pairs, want));
            CHECK(r.clusters == oracle::bfs_components(want));
        }
    }
}

TEST_CASE("HNSW path with exhaustive ef matches the oracle") {
    Rng rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        const auto emb = oracle::clustered_table({60, 70, 50}, 16, 20, 0.25, rng);
        const auto r = run_tcem(emb, hnsw_params(0.3));
        CHECK(same_pairs(r.pairs, oracle_pairs(emb, 0.3)));
    }
}

TEST_CASE("pairs only grow with lambda") {
    Rng rng(43);
    const auto emb = oracle::clustered_table({80, 80, 80, 80}, 16, 30, 0.35, rng);
    const auto links = TcemLinks::compute(emb, exact_params(0.3));
    std::set<std::pair<EntityRef, EntityRef>> prev;
    std::size_t prev_merged = 0;
    for (double lambda = 0.0; lambda <= 1.0001; lambda += 0.05) {
        const auto r = links.at_lambda(lambda);
        std::set<std::pair<EntityRef, EntityRef>> cur;
        for (const auto& p : r.pairs) cur.insert({p.a, p.b});
        CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
        std::size_t merged = 0;
        for (const auto& c : r.clusters) merged += c.size();
        CHECK(merged >= prev_merged);
        prev = std::move(cur);
        prev_merged = merged;
    }
}

TEST_CASE("precomputed links agree with a direct run") {
    Rng rng(47);
    const auto emb = oracle::clustered_table({40, 30, 35}, 8, 10, 0.3, rng);
    const auto links = TcemLinks::compute(emb, exact_params(0.3));
    for (double lambda : {0.1, 0.3, 0.6}) {
        const auto a = links.at_lambda(lambda);
        const auto b = run_tcem(emb, exact_params(lambda));
        CHECK(a.pairs == b.pairs);
        CHECK(a.clusters == b.clusters);
    }
}

TEST_CASE("clusters are disjoint and cross-table") {
    Rng rng(53);
    const auto emb = oracle::clustered_table({50, 50, 50, 50, 50}, 16, 15, 0.3, rng);
    const auto r = run_tcem(emb, exact_params(0.4));
    CHECK_NOTHROW(check_disjoint(r.clusters));
    for (const auto& c : r.clusters) CHECK(c.size() >= 2);
}

TEST_CASE("parameter validation") {
    TcemParams p;
    p.lambda = -0.1;
    CHECK_THROWS_AS(p.validate(), Error);
    p.lambda = 0.3;
    CHECK_NOTHROW(p.validate());
}
