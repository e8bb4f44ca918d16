#pragma once
// Brute-force reference implementations used by unit and acceptance tests.
// Deliberately naive: full distance matrices, literal set definitions.

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <vector>

#include "polymatch/dpm.hpp"
#include "polymatch/embed.hpp"
#include "polymatch/rng.hpp"
#include "polymatch/tcem.hpp"

namespace oracle {

using polymatch::Cluster;
using polymatch::EmbeddingTable;
using polymatch::EntityClass;
using polymatch::EntityLabel;
using polymatch::EntityRef;
using polymatch::MatchPair;

inline EmbeddingTable random_unit_table(const std::vector<std::size_t>& sizes, std::size_t dim, polymatch::Rng& rng) {
    EmbeddingTable table(sizes, dim);
    for (std::size_t i = 0; i < table.size(); ++i) {
        auto row = table.mutable_row(i);
        for (auto& x : row) x = static_cast<float>(rng.unit() * 2.0 - 1.0);
        polymatch::normalize(row);
    }
    return table;
}

// Vectors clustered around a few shared centres so that near-ties and
// genuine mutual matches both occur.
inline EmbeddingTable clustered_table(const std::vector<std::size_t>& sizes, std::size_t dim, std::size_t centres,
                                      double noise, polymatch::Rng& rng) {
    std::vector<std::vector<float>> c(centres, std::vector<float>(dim));
    for (auto& v : c) {
        for (auto& x : v) x = static_cast<float>(rng.unit() * 2.0 - 1.0);
        polymatch::normalize(v);
    }
    EmbeddingTable table(sizes, dim);
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& base = c[rng.below(centres)];
        auto row = table.mutable_row(i);
        for (std::size_t d = 0; d < dim; ++d) row[d] = base[d] + static_cast<float>((rng.unit() * 2.0 - 1.0) * noise);
        polymatch::normalize(row);
    }
    return table;
}

// Nearest row of table `to` for `from`, ties to the smaller row index.
inline std::uint32_t top1(const EmbeddingTable& emb, EntityRef from, std::uint32_t to) {
    std::uint32_t best = 0;
    float best_d = INFINITY;
    for (std::uint32_t r = 0; r < emb.table_sizes()[to]; ++r) {
        const float d = polymatch::cosine_distance(emb[from], emb[EntityRef{to, r}]);
        if (d < best_d) {
            best_d = d;
            best = r;
        }
    }
    return best;
}

inline std::vector<MatchPair> mutual_top1(const EmbeddingTable& emb, std::uint32_t ta, std::uint32_t tb,
                                          double lambda) {
    std::vector<MatchPair> out;
    for (std::uint32_t r = 0; r < emb.table_sizes()[ta]; ++r) {
        const EntityRef a{ta, r};
        const EntityRef b{tb, top1(emb, a, tb)};
        if (top1(emb, b, ta) != r) continue;
        const float d = polymatch::cosine_distance(emb[a], emb[b]);
        if (d > lambda) continue;
        out.push_back(a < b ? MatchPair{a, b, d} : MatchPair{b, a, d});
    }
    std::sort(out.begin(), out.end(), [](const MatchPair& x, const MatchPair& y) {
        return std::tie(x.a, x.b) < std::tie(y.a, y.b);
    });
    return out;
}

// Connected components by breadth-first search over an adjacency map.
inline std::vector<Cluster> bfs_components(const std::vector<MatchPair>& pairs) {
    std::map<EntityRef, std::vector<EntityRef>> adj;
    for (const auto& p : pairs) {
        adj[p.a].push_back(p.b);
        adj[p.b].push_back(p.a);
    }
    std::set<EntityRef> seen;
    std::vector<Cluster> out;
    for (const auto& [start, _] : adj) {
        if (seen.count(start)) continue;
        std::vector<EntityRef> comp;
        std::queue<EntityRef> q;
        q.push(start);
        seen.insert(start);
        while (!q.empty()) {
            const auto cur = q.front();
            q.pop();
            comp.push_back(cur);
            for (const auto& nb : adj[cur]) {
                if (seen.insert(nb).second) q.push(nb);
            }
        }
        if (comp.size() >= 2) out.emplace_back(std::move(comp));
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Literal core / reachable / noise definitions over a full distance matrix.
inline std::vector<EntityLabel> classify(const Cluster& cluster, const EmbeddingTable& emb, double d,
                                         std::size_t rho_min) {
    const auto& m = cluster.members();
    const std::size_t n = m.size();
    std::vector<std::vector<double>> dist(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) dist[i][j] = polymatch::cosine_distance(emb[m[i]], emb[m[j]]);
    }
    std::vector<std::set<std::size_t>> hood(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (dist[i][j] <= d) hood[i].insert(j);
        }
    }
    std::vector<bool> core(n);
    for (std::size_t i = 0; i < n; ++i) core[i] = hood[i].size() >= rho_min;
    std::vector<EntityLabel> out;
    for (std::size_t i = 0; i < n; ++i) {
        EntityClass c = EntityClass::noise;
        if (core[i]) {
            c = EntityClass::core;
        } else {
            const bool near_core =
                std::any_of(hood[i].begin(), hood[i].end(), [&](std::size_t j) { return core[j]; });
            if (near_core && hood[i].size() < rho_min) c = EntityClass::reachable;
        }
        out.push_back({m[i], c, hood[i].size()});
    }
    return out;
}

inline std::vector<Cluster> prune(const std::vector<Cluster>& clusters, const EmbeddingTable& emb, double d,
                                  std::size_t rho_min) {
    std::vector<Cluster> out;
    for (const auto& c : clusters) {
        std::vector<EntityRef> keep;
        for (const auto& l : classify(c, emb, d, rho_min)) {
            if (l.label != EntityClass::noise) keep.push_back(l.ref);
        }
        if (keep.size() >= 2) out.emplace_back(std::move(keep));
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace oracle
