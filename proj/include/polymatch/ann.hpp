#pragma once
// Approximate nearest-neighbour search over unit vectors (cosine distance):
// a hierarchical navigable small-world graph plus an exact linear scan.
//
// Graph layout: layer 0 keeps up to 2*M links per node, upper layers up to M.
// A new node links to the closest candidates found with ef_construction, up
// to the layer's cap (no diversification heuristic). Links are added in both
// directions and an overfull list is cut back to its closest entries.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "polymatch/error.hpp"
#include "polymatch/tables.hpp"

namespace polymatch {

struct HnswParams {
    std::size_t M = 16;
    std::size_t ef_construction = 200;
    std::size_t ef_search = 64;
    double level_lambda = 0.0;  // 0 selects 1/ln(M)
    std::uint64_t seed = 42;

    double level_multiplier() const;
    void validate() const;
};

struct IndexItem {
    EntityRef ref;
    std::span<const float> vector;
};

struct Neighbor {
    EntityRef ref;
    float distance = 0.0f;

    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Exact top-k by full scan; ties broken by EntityRef.
std::vector<Neighbor> exact_search(std::span<const IndexItem> items, std::span<const float> query, std::size_t k);

class AnnIndex {
public:
    enum class Mode { hnsw, exact };

    // Copies the vectors. Throws on empty input or mixed dimensions.
    static AnnIndex build(std::span<const IndexItem> items, const HnswParams& params, Mode mode = Mode::hnsw);

    // Up to k results sorted by (distance, EntityRef). ef is raised to k when
    // smaller. Exact mode ignores ef.
    std::vector<Neighbor> search(std::span<const float> query, std::size_t k, std::size_t ef) const;
    std::vector<Neighbor> search(std::span<const float> query, std::size_t k) const {
        return search(query, k, params_.ef_search);
    }
    std::vector<Neighbor> exact(std::span<const float> query, std::size_t k) const;

    Mode mode() const { return mode_; }
    std::size_t size() const { return refs_.size(); }
    std::size_t dim() const { return dim_; }
    const HnswParams& params() const { return params_; }
    EntityRef ref(std::uint32_t node) const { return refs_[node]; }
    std::span<const float> vector(std::uint32_t node) const { return {vectors_.data() + node * dim_, dim_}; }

    // Graph introspection (hnsw mode).
    int max_level() const { return max_level_; }
    int level_of(std::uint32_t node) const { return levels_[node]; }
    std::size_t layer_capacity(int level) const { return level == 0 ? 2 * params_.M : params_.M; }
    std::span<const std::uint32_t> links(std::uint32_t node, int level) const;
    std::uint64_t build_distance_count() const { return build_distances_; }

    // Versioned little-endian snapshot.
    void save(const std::filesystem::path& path) const;
    static AnnIndex load(const std::filesystem::path& path);

private:
    struct Candidate {
        float distance;
        std::uint32_t node;
    };

    float distance_to(std::span<const float> query, std::uint32_t node) const;
    void prefetch_vector(std::uint32_t node) const;
    std::vector<Candidate> search_layer(std::span<const float> query, const std::vector<Candidate>& entry,
                                        std::size_t ef, int level, std::uint64_t* counter) const;
    std::uint32_t* link_block(std::uint32_t node, int level);
    const std::uint32_t* link_block(std::uint32_t node, int level) const;
    void insert(std::uint32_t node, int level);
    void set_links(std::uint32_t node, int level, const std::vector<std::uint32_t>& ids);
    void add_link(std::uint32_t from, std::uint32_t to, int level);

    Mode mode_ = Mode::hnsw;
    HnswParams params_;
    std::size_t dim_ = 0;
    std::vector<EntityRef> refs_;
    std::vector<float> vectors_;

    std::vector<int> levels_;
    // Layer 0: fixed stride of 1 + 2M words per node (count, then ids).
    std::vector<std::uint32_t> layer0_;
    // Upper layers: per node, (level) blocks of 1 + M words for levels 1..level.
    std::vector<std::vector<std::uint32_t>> upper_;
    std::uint32_t entry_ = 0;
    int max_level_ = -1;
    std::uint64_t build_distances_ = 0;
};

}  // namespace polymatch
