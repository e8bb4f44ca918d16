#pragma once
// Transitive consensus matching: mutual nearest cross-table pairs within a
// distance ceiling, merged into clusters by connectivity.

#include <filesystem>
#include <vector>

#include "polymatch/ann.hpp"
#include "polymatch/embed.hpp"
#include "polymatch/tables.hpp"

namespace polymatch {

// Canonical form: a < b, a.table != b.table, 0 <= distance <= lambda.
struct MatchPair {
    EntityRef a;
    EntityRef b;
    float distance = 0.0f;

    friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

struct TcemParams {
    double lambda = 0.3;  // cosine-distance ceiling
    HnswParams ann;
    // Tables with fewer rows are searched by exact scan instead of HNSW.
    std::size_t exact_threshold = 512;

    void validate() const;
};

class DisjointSet {
public:
    explicit DisjointSet(std::size_t n);
    std::size_t find(std::size_t x);
    // Returns true when x and y were in different sets.
    bool unite(std::size_t x, std::size_t y);
    std::size_t size() const { return parent_.size(); }

private:
    std::vector<std::size_t> parent_;
    std::vector<std::uint8_t> rank_;
};

// Nearest neighbour of every row of one table inside another table.
struct Top1Links {
    std::uint32_t from_table = 0;
    std::uint32_t to_table = 0;
    std::vector<Neighbor> nearest;  // indexed by row of from_table
};

// One index per table, built with the exact fallback rule. Empty tables get
// an empty index.
std::vector<AnnIndex> build_table_indexes(const EmbeddingTable& embeddings, const TcemParams& params);

Top1Links nearest_links(const EmbeddingTable& embeddings, std::uint32_t from_table, const AnnIndex& to_index,
                        std::uint32_t to_table, std::size_t ef);

// Mutual-nearest pairs with distance <= lambda from precomputed links in both
// directions. Sorted by (a, b).
std::vector<MatchPair> mutual_pairs(const Top1Links& a_to_b, const Top1Links& b_to_a, double lambda);

std::vector<MatchPair> mutual_top1_pairs(const EmbeddingTable& embeddings, std::uint32_t table_a,
                                         std::uint32_t table_b, const TcemParams& params);

// Connected components of the pair graph over the universe described by
// table_sizes; only components with >= 2 members, sorted.
std::vector<Cluster> transitive_merge(const std::vector<MatchPair>& pairs, const std::vector<std::size_t>& table_sizes);

struct TcemResult {
    std::vector<MatchPair> pairs;
    std::vector<Cluster> clusters;
};

// All n(n-1)/2 table pairs, then the closure.
TcemResult run_tcem(const EmbeddingTable& embeddings, const TcemParams& params);

// Lambda-independent part of run_tcem, reusable across lambda sweeps.
class TcemLinks {
public:
    static TcemLinks compute(const EmbeddingTable& embeddings, const TcemParams& params);
    TcemResult at_lambda(double lambda) const;

private:
    std::vector<std::size_t> table_sizes_;
    std::vector<std::pair<Top1Links, Top1Links>> per_pair_;
};

void write_pairs(const std::vector<MatchPair>& pairs, const std::filesystem::path& path);

}  // namespace polymatch
