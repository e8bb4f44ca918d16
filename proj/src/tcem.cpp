#include "polymatch/tcem.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <atomic>
#include <exception>
#include <optional>
#include <thread>
#include <tuple>

#include "polymatch/rng.hpp"

namespace polymatch {

void TcemParams::validate() const {
    if (!(lambda >= 0.0)) throw Error("lambda must be >= 0");
    ann.validate();
}

DisjointSet::DisjointSet(std::size_t n) : parent_(n), rank_(n, 0) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
}

std::size_t DisjointSet::find(std::size_t x) {
    std::size_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
        const std::size_t next = parent_[x];
        parent_[x] = root;
        x = next;
    }
    return root;
}

bool DisjointSet::unite(std::size_t x, std::size_t y) {
    x = find(x);
    y = find(y);
    if (x == y) return false;
    if (rank_[x] < rank_[y]) std::swap(x, y);
    parent_[y] = x;
    if (rank_[x] == rank_[y]) ++rank_[x];
    return true;
}

std::vector<AnnIndex> build_table_indexes(const EmbeddingTable& embeddings, const TcemParams& params) {
    const std::size_t n = embeddings.table_count();
    std::vector<std::optional<AnnIndex>> built(n);
    auto build_one = [&](std::size_t t) {
        const auto rows = embeddings.table_sizes()[t];
        if (rows == 0) {
            built[t].emplace();  // empty placeholder; never searched
            return;
        }
        std::vector<IndexItem> items;
        items.reserve(rows);
        for (std::uint32_t r = 0; r < rows; ++r) {
            const EntityRef ref{static_cast<std::uint32_t>(t), r};
            items.push_back({ref, embeddings[ref]});
        }
        const auto mode = rows < params.exact_threshold ? AnnIndex::Mode::exact : AnnIndex::Mode::hnsw;
        HnswParams p = params.ann;
        p.seed = mix_seed(params.ann.seed, t);
        built[t] = AnnIndex::build(items, p, mode);
    };
    // Builds are independent and individually deterministic.
    const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t t = 0; t < n; ++t) build_one(t);
    } else {
        std::vector<std::exception_ptr> errors(n);
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t t = next++; t < n; t = next++) {
                    try {
                        build_one(t);
                    } catch (...) {
                        errors[t] = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    std::vector<AnnIndex> out;
    out.reserve(n);
    for (auto& b : built) out.push_back(std::move(*b));
    return out;
}

Top1Links nearest_links(const EmbeddingTable& embeddings, std::uint32_t from_table, const AnnIndex& to_index,
                        std::uint32_t to_table, std::size_t ef) {
    if (from_table >= embeddings.table_count() || to_table >= embeddings.table_count()) {
        throw Error("unknown table id");
    }
    const std::size_t rows = embeddings.table_sizes()[from_table];
    Top1Links links{from_table, to_table, std::vector<Neighbor>(rows)};
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) {
            const auto hits = to_index.search(embeddings[{from_table, static_cast<std::uint32_t>(r)}], 1, ef);
            links.nearest[r] = hits.front();
        }
    };
    const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    if (workers <= 1 || rows < 2048) {
        work(0, rows);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (rows + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(rows, begin + chunk);
            if (begin < end) pool.emplace_back(work, begin, end);
        }
        for (auto& th : pool) th.join();
    }
    return links;
}

std::vector<MatchPair> mutual_pairs(const Top1Links& a_to_b, const Top1Links& b_to_a, double lambda) {
    if (a_to_b.from_table != b_to_a.to_table || a_to_b.to_table != b_to_a.from_table) {
        throw Error("link sets do not describe the same table pair");
    }
    if (a_to_b.from_table == a_to_b.to_table) throw Error("mutual pairs need two distinct tables");
    std::vector<MatchPair> pairs;
    for (std::uint32_t row = 0; row < a_to_b.nearest.size(); ++row) {
        const Neighbor& fwd = a_to_b.nearest[row];
        const Neighbor& back = b_to_a.nearest.at(fwd.ref.row);
        if (back.ref != EntityRef{a_to_b.from_table, row}) continue;
        if (static_cast<double>(fwd.distance) > lambda) continue;
        EntityRef x{a_to_b.from_table, row};
        EntityRef y = fwd.ref;
        if (y < x) std::swap(x, y);
        pairs.push_back({x, y, fwd.distance});
    }
    std::sort(pairs.begin(), pairs.end(), [](const MatchPair& p, const MatchPair& q) {
        return std::tie(p.a, p.b) < std::tie(q.a, q.b);
    });
    return pairs;
}

std::vector<MatchPair> mutual_top1_pairs(const EmbeddingTable& embeddings, std::uint32_t table_a,
                                         std::uint32_t table_b, const TcemParams& params) {
    params.validate();
    if (table_a >= embeddings.table_count() || table_b >= embeddings.table_count()) throw Error("unknown table id");
    if (table_a == table_b) throw Error("mutual pairs need two distinct tables");
    if (embeddings.table_sizes()[table_a] == 0 || embeddings.table_sizes()[table_b] == 0) return {};
    auto index_of = [&](std::uint32_t t) {
        const auto rows = embeddings.table_sizes()[t];
        std::vector<IndexItem> items;
        for (std::uint32_t r = 0; r < rows; ++r) items.push_back({{t, r}, embeddings[{t, r}]});
        HnswParams p = params.ann;
        p.seed = mix_seed(params.ann.seed, t);
        return AnnIndex::build(items, p, rows < params.exact_threshold ? AnnIndex::Mode::exact : AnnIndex::Mode::hnsw);
    };
    const AnnIndex ia = index_of(table_a);
    const AnnIndex ib = index_of(table_b);
    const auto ab = nearest_links(embeddings, table_a, ib, table_b, params.ann.ef_search);
    const auto ba = nearest_links(embeddings, table_b, ia, table_a, params.ann.ef_search);
    return mutual_pairs(ab, ba, params.lambda);
}

std::vector<Cluster> transitive_merge(const std::vector<MatchPair>& pairs, const std::vector<std::size_t>& table_sizes) {
    std::vector<std::size_t> offsets(table_sizes.size());
    std::size_t total = 0;
    for (std::size_t t = 0; t < table_sizes.size(); ++t) {
        offsets[t] = total;
        total += table_sizes[t];
    }
    auto dense = [&](EntityRef r) {
        if (r.table >= table_sizes.size() || r.row >= table_sizes[r.table]) throw Error("pair references unknown row");
        return offsets[r.table] + r.row;
    };
    DisjointSet sets(total);
    std::vector<std::uint8_t> touched(total, 0);
    for (const auto& p : pairs) {
        const auto x = dense(p.a);
        const auto y = dense(p.b);
        sets.unite(x, y);
        touched[x] = touched[y] = 1;
    }
    std::vector<std::vector<EntityRef>> groups(total);
    for (std::size_t t = 0; t < table_sizes.size(); ++t) {
        for (std::uint32_t r = 0; r < table_sizes[t]; ++r) {
            const auto i = offsets[t] + r;
            if (touched[i]) groups[sets.find(i)].push_back({static_cast<std::uint32_t>(t), r});
        }
    }
    std::vector<Cluster> clusters;
    for (auto& g : groups) {
        if (g.size() >= 2) clusters.emplace_back(std::move(g));
    }
    std::sort(clusters.begin(), clusters.end());
    return clusters;
}

TcemLinks TcemLinks::compute(const EmbeddingTable& embeddings, const TcemParams& params) {
    params.validate();
    if (embeddings.table_count() < 2) throw Error("need >=2 tables");
    const auto indexes = build_table_indexes(embeddings, params);
    TcemLinks links;
    links.table_sizes_ = embeddings.table_sizes();
    const auto n = static_cast<std::uint32_t>(embeddings.table_count());
    for (std::uint32_t a = 0; a < n; ++a) {
        for (std::uint32_t b = a + 1; b < n; ++b) {
            if (indexes[a].size() == 0 || indexes[b].size() == 0) continue;
            auto ab = nearest_links(embeddings, a, indexes[b], b, params.ann.ef_search);
            auto ba = nearest_links(embeddings, b, indexes[a], a, params.ann.ef_search);
            links.per_pair_.emplace_back(std::move(ab), std::move(ba));
        }
    }
    return links;
}

TcemResult TcemLinks::at_lambda(double lambda) const {
    if (!(lambda >= 0.0)) throw Error("lambda must be >= 0");
    TcemResult result;
    for (const auto& [ab, ba] : per_pair_) {
        auto pairs = mutual_pairs(ab, ba, lambda);
        result.pairs.insert(result.pairs.end(), pairs.begin(), pairs.end());
    }
    std::sort(result.pairs.begin(), result.pairs.end(), [](const MatchPair& p, const MatchPair& q) {
        return std::tie(p.a, p.b) < std::tie(q.a, q.b);
    });
    result.clusters = transitive_merge(result.pairs, table_sizes_);
    return result;
}

TcemResult run_tcem(const EmbeddingTable& embeddings, const TcemParams& params) {
    return TcemLinks::compute(embeddings, params).at_lambda(params.lambda);
}

void write_pairs(const std::vector<MatchPair>& pairs, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "a_table,a_row,b_table,b_row,distance\n";
    char buf[32];
    for (const auto& p : pairs) {
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(p.distance));
        out << p.a.table << ',' << p.a.row << ',' << p.b.table << ',' << p.b.row << ',' << buf << '\n';
    }
    if (!out) throw Error("write failed: " + path.string());
}

}  // namespace polymatch
