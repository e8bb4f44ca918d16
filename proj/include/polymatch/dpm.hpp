#pragma once
// Density-aware pruning of matched clusters.
//
// Within one cluster, with N_d(e) = { members within distance d of e }
// (e itself included):
//   core       |N_d(e)| >= rho_min
//   reachable  not core, and some core member lies in N_d(e)
//   noise      neither; removed.
// Neighbourhoods never cross cluster boundaries.

#include <filesystem>
#include <vector>

#include "polymatch/embed.hpp"
#include "polymatch/tables.hpp"

namespace polymatch {

struct DpmParams {
    double d = 0.4;
    std::size_t rho_min = 2;

    void validate() const;
};

enum class EntityClass { core, reachable, noise };

std::string_view to_string(EntityClass c);

struct EntityLabel {
    EntityRef ref;
    EntityClass label = EntityClass::noise;
    std::size_t neighbor_count = 0;  // |N_d|, self included

    friend bool operator==(const EntityLabel&, const EntityLabel&) = default;
};

std::vector<EntityRef> neighborhood(const Cluster& cluster, EntityRef entity, const EmbeddingTable& embeddings,
                                    double d);

// Labels in member order.
std::vector<EntityLabel> classify(const Cluster& cluster, const EmbeddingTable& embeddings, const DpmParams& params);

struct PruneResult {
    std::vector<Cluster> clusters;  // survivors with >= 2 members, sorted
    std::vector<std::vector<EntityLabel>> labels;  // per input cluster
};

PruneResult prune_with_labels(const std::vector<Cluster>& clusters, const EmbeddingTable& embeddings,
                              const DpmParams& params);

std::vector<Cluster> prune(const std::vector<Cluster>& clusters, const EmbeddingTable& embeddings,
                           const DpmParams& params);

struct LabelHistogram {
    std::size_t core = 0;
    std::size_t reachable = 0;
    std::size_t noise = 0;
};

LabelHistogram histogram(const std::vector<std::vector<EntityLabel>>& labels);

// table_id,row_index,cluster_id,label,neighbor_count
void write_labels(const std::vector<std::vector<EntityLabel>>& labels, const std::filesystem::path& path);

}  // namespace polymatch
