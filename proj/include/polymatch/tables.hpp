#pragma once
// Source tables, records and ground-truth clusters.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "polymatch/error.hpp"

namespace polymatch {

// Global address of one row: (table id, row index). Ordered lexicographically.
struct EntityRef {
    std::uint32_t table = 0;
    std::uint32_t row = 0;

    friend auto operator<=>(const EntityRef&, const EntityRef&) = default;
};

struct Record {
    std::vector<std::string> values;  // missing cell = ""
    std::uint32_t row_index = 0;
};

struct SourceTable {
    std::uint32_t table_id = 0;
    std::string name;
    std::vector<std::string> columns;
    std::vector<Record> rows;

    // Index of the natural-key column ("tid"), if present. Never serialized.
    std::optional<std::size_t> key_column() const;
};

// A set of rows believed to denote one real-world entity. Members are kept
// sorted and unique.
class Cluster {
public:
    Cluster() = default;
    explicit Cluster(std::vector<EntityRef> members);

    const std::vector<EntityRef>& members() const { return members_; }
    std::size_t size() const { return members_.size(); }
    bool contains(EntityRef ref) const;

    friend bool operator==(const Cluster&, const Cluster&) = default;
    friend auto operator<=>(const Cluster& a, const Cluster& b) { return a.members_ <=> b.members_; }

private:
    std::vector<EntityRef> members_;
};

struct Dataset {
    std::vector<SourceTable> tables;
    std::optional<std::vector<Cluster>> ground_truth;

    std::size_t record_count() const;
    std::vector<std::size_t> table_sizes() const;
    const Record& record(EntityRef ref) const;
    bool valid(EntityRef ref) const;
};

struct IngestConfig {
    // File inside the dataset directory holding (cluster_id,table_id,row_index).
    std::string truth_file = "ground_truth.csv";
    bool require_truth = false;
};

// One table per *.csv file in lexicographic filename order (the truth file is
// excluded). Throws Error / csv::ParseError on malformed input.
Dataset load_dataset(const std::filesystem::path& root, const IngestConfig& config = {});

// Throws if tables are fewer than two, rows have the wrong arity, or the
// ground truth references unknown rows or overlaps.
void validate(const Dataset& dataset);

// Throws unless clusters are pairwise disjoint and every member is valid.
void check_disjoint(const std::vector<Cluster>& clusters, const Dataset* dataset = nullptr);

// "col: value | col: value" over non-empty, non-key cells. Line breaks inside
// a cell are flattened to spaces so a record is always one line.
std::string serialize_record(const SourceTable& table, std::size_t row_index);

struct SampledRecord {
    EntityRef ref;
    Record record;
};

// Deterministic sample of k records under seed, stratified across tables:
// ceil(k/n) per table, short tables topped up from the others, truncated to k.
std::vector<SampledRecord> sample_records(const Dataset& dataset, std::size_t k, std::uint64_t seed);

// Writes one CSV per table plus the truth file in the layout load_dataset reads.
void write_dataset(const Dataset& dataset, const std::filesystem::path& root,
                   const IngestConfig& config = {});

// Cluster files share the ground-truth layout: cluster_id,table_id,row_index.
std::vector<Cluster> read_clusters(const std::filesystem::path& path);
void write_clusters(const std::vector<Cluster>& clusters, const std::filesystem::path& path);

}  // namespace polymatch
