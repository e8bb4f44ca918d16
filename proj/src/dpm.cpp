#include "polymatch/dpm.hpp"

#include <algorithm>
#include <fstream>

namespace polymatch {

void DpmParams::validate() const {
    if (!(d >= 0.0)) throw Error("d must be >= 0");
    if (rho_min < 1) throw Error("rho_min must be >= 1");
}

std::string_view to_string(EntityClass c) {
    switch (c) {
        case EntityClass::core: return "core";
        case EntityClass::reachable: return "reachable";
        case EntityClass::noise: return "noise";
    }
    return "noise";
}

std::vector<EntityRef> neighborhood(const Cluster& cluster, EntityRef entity, const EmbeddingTable& embeddings,
                                    double d) {
    if (!cluster.contains(entity)) throw Error("entity is not a member of the cluster");
    const auto center = embeddings[entity];
    std::vector<EntityRef> out;
    for (const auto& m : cluster.members()) {
        if (m == entity || static_cast<double>(cosine_distance(center, embeddings[m])) <= d) out.push_back(m);
    }
    return out;
}

std::vector<EntityLabel> classify(const Cluster& cluster, const EmbeddingTable& embeddings, const DpmParams& params) {
    params.validate();
    const auto& members = cluster.members();
    const std::size_t n = members.size();
    // within[i * n + j]: member j lies in N_d(member i).
    std::vector<std::uint8_t> within(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        within[i * n + i] = 1;
        const auto vi = embeddings[members[i]];
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool near = static_cast<double>(cosine_distance(vi, embeddings[members[j]])) <= params.d;
            within[i * n + j] = within[j * n + i] = near;
        }
    }
    std::vector<EntityLabel> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t count = 0;
        for (std::size_t j = 0; j < n; ++j) count += within[i * n + j];
        labels[i] = {members[i], count >= params.rho_min ? EntityClass::core : EntityClass::noise, count};
    }
    // Second pass against the fixed core set.
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i].label == EntityClass::core) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (within[i * n + j] && labels[j].label == EntityClass::core) {
                labels[i].label = EntityClass::reachable;
                break;
            }
        }
    }
    return labels;
}

PruneResult prune_with_labels(const std::vector<Cluster>& clusters, const EmbeddingTable& embeddings,
                              const DpmParams& params) {
    PruneResult result;
    result.labels.reserve(clusters.size());
    for (const auto& cluster : clusters) {
        auto labels = classify(cluster, embeddings, params);
        std::vector<EntityRef> kept;
        for (const auto& l : labels) {
            if (l.label != EntityClass::noise) kept.push_back(l.ref);
        }
        if (kept.size() >= 2) result.clusters.emplace_back(std::move(kept));
        result.labels.push_back(std::move(labels));
    }
    std::sort(result.clusters.begin(), result.clusters.end());
    return result;
}

std::vector<Cluster> prune(const std::vector<Cluster>& clusters, const EmbeddingTable& embeddings,
                           const DpmParams& params) {
    return prune_with_labels(clusters, embeddings, params).clusters;
}

LabelHistogram histogram(const std::vector<std::vector<EntityLabel>>& labels) {
    LabelHistogram h;
    for (const auto& cluster : labels) {
        for (const auto& l : cluster) {
            switch (l.label) {
                case EntityClass::core: ++h.core; break;
                case EntityClass::reachable: ++h.reachable; break;
                case EntityClass::noise: ++h.noise; break;
            }
        }
    }
    return h;
}

void write_labels(const std::vector<std::vector<EntityLabel>>& labels, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "table_id,row_index,cluster_id,label,neighbor_count\n";
    for (std::size_t c = 0; c < labels.size(); ++c) {
        for (const auto& l : labels[c]) {
            out << l.ref.table << ',' << l.ref.row << ',' << c << ',' << to_string(l.label) << ','
                << l.neighbor_count << '\n';
        }
    }
    if (!out) throw Error("write failed: " + path.string());
}

}  // namespace polymatch
