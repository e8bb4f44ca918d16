#include "polymatch/tables.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "polymatch/csv.hpp"
#include "polymatch/rng.hpp"

namespace polymatch {

namespace fs = std::filesystem;

std::optional<std::size_t> SourceTable::key_column() const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i] == "tid") return i;
    }
    return std::nullopt;
}

Cluster::Cluster(std::vector<EntityRef> members) : members_(std::move(members)) {
    std::sort(members_.begin(), members_.end());
    members_.erase(std::unique(members_.begin(), members_.end()), members_.end());
}

bool Cluster::contains(EntityRef ref) const {
    return std::binary_search(members_.begin(), members_.end(), ref);
}

std::size_t Dataset::record_count() const {
    std::size_t n = 0;
    for (const auto& t : tables) n += t.rows.size();
    return n;
}

std::vector<std::size_t> Dataset::table_sizes() const {
    std::vector<std::size_t> sizes;
    sizes.reserve(tables.size());
    for (const auto& t : tables) sizes.push_back(t.rows.size());
    return sizes;
}

bool Dataset::valid(EntityRef ref) const {
    return ref.table < tables.size() && ref.row < tables[ref.table].rows.size();
}

const Record& Dataset::record(EntityRef ref) const {
    if (!valid(ref)) {
        throw Error("no record (" + std::to_string(ref.table) + "," + std::to_string(ref.row) + ")");
    }
    return tables[ref.table].rows[ref.row];
}

void check_disjoint(const std::vector<Cluster>& clusters, const Dataset* dataset) {
    std::set<EntityRef> seen;
    for (const auto& c : clusters) {
        if (c.size() == 0) throw Error("empty cluster");
        for (const auto& m : c.members()) {
            if (dataset && !dataset->valid(m)) {
                throw Error("cluster member (" + std::to_string(m.table) + "," +
                            std::to_string(m.row) + ") does not exist");
            }
            if (!seen.insert(m).second) {
                throw Error("clusters overlap at (" + std::to_string(m.table) + "," +
                            std::to_string(m.row) + ")");
            }
        }
    }
}

void validate(const Dataset& dataset) {
    if (dataset.tables.size() < 2) throw Error("need >=2 tables, got " + std::to_string(dataset.tables.size()));
    for (std::size_t t = 0; t < dataset.tables.size(); ++t) {
        const auto& table = dataset.tables[t];
        if (table.table_id != t) throw Error("table " + table.name + " has id out of order");
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            if (table.rows[r].values.size() != table.columns.size()) {
                throw Error("table " + table.name + " row " + std::to_string(r) + " has " +
                            std::to_string(table.rows[r].values.size()) + " values, expected " +
                            std::to_string(table.columns.size()));
            }
            if (table.rows[r].row_index != r) throw Error("table " + table.name + " row index mismatch");
        }
    }
    if (dataset.ground_truth) check_disjoint(*dataset.ground_truth, &dataset);
}

namespace {

SourceTable load_table(const fs::path& path, std::uint32_t id) {
    auto rows = csv::read_file(path.string());
    if (rows.empty()) throw Error(path.string() + ": missing header row");
    SourceTable table;
    table.table_id = id;
    table.name = path.stem().string();
    table.columns = std::move(rows.front().fields);
    table.rows.reserve(rows.size() - 1);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        auto& row = rows[i];
        if (row.fields.size() != table.columns.size()) {
            throw csv::ParseError(path.string(), row.line,
                                  "expected " + std::to_string(table.columns.size()) + " fields, got " +
                                      std::to_string(row.fields.size()));
        }
        table.rows.push_back(Record{std::move(row.fields), static_cast<std::uint32_t>(i - 1)});
    }
    return table;
}

std::uint32_t parse_index(const std::string& s, const std::string& source, std::size_t line) {
    try {
        std::size_t used = 0;
        long long v = std::stoll(s, &used);
        if (used != s.size() || v < 0 || v > UINT32_MAX) throw std::out_of_range(s);
        return static_cast<std::uint32_t>(v);
    } catch (const std::logic_error&) {
        throw csv::ParseError(source, line, "not a non-negative integer: '" + s + "'");
    }
}

}  // namespace

std::vector<Cluster> read_clusters(const fs::path& path) {
    auto rows = csv::read_file(path.string());
    if (rows.empty()) throw Error(path.string() + ": missing header row");
    const auto& header = rows.front().fields;
    if (header != std::vector<std::string>{"cluster_id", "table_id", "row_index"}) {
        throw csv::ParseError(path.string(), 1, "expected header cluster_id,table_id,row_index");
    }
    std::map<std::string, std::vector<EntityRef>> grouped;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        if (row.fields.size() != 3) throw csv::ParseError(path.string(), row.line, "expected 3 fields");
        EntityRef ref{parse_index(row.fields[1], path.string(), row.line),
                      parse_index(row.fields[2], path.string(), row.line)};
        grouped[row.fields[0]].push_back(ref);
    }
    std::vector<Cluster> clusters;
    clusters.reserve(grouped.size());
    for (auto& [id, members] : grouped) {
        const std::size_t before = members.size();
        Cluster c(std::move(members));
        if (c.size() != before) throw Error(path.string() + ": cluster " + id + " lists a row twice");
        clusters.push_back(std::move(c));
    }
    std::sort(clusters.begin(), clusters.end());
    return clusters;
}

void write_clusters(const std::vector<Cluster>& clusters, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "cluster_id,table_id,row_index\n";
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        for (const auto& m : clusters[c].members()) {
            out << c << ',' << m.table << ',' << m.row << '\n';
        }
    }
    if (!out) throw Error("write failed: " + path.string());
}

Dataset load_dataset(const fs::path& root, const IngestConfig& config) {
    if (!fs::is_directory(root)) throw Error("dataset directory not found: " + root.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
        if (entry.path().filename() == config.truth_file) continue;
        files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.size() < 2) {
        throw Error("need >=2 tables in " + root.string() + ", found " + std::to_string(files.size()));
    }

    Dataset ds;
    for (std::size_t i = 0; i < files.size(); ++i) {
        ds.tables.push_back(load_table(files[i], static_cast<std::uint32_t>(i)));
    }

    const fs::path truth = root / config.truth_file;
    if (fs::exists(truth)) {
        ds.ground_truth = read_clusters(truth);
    } else if (config.require_truth) {
        throw Error("ground truth file not found: " + truth.string());
    }
    validate(ds);
    return ds;
}

void write_dataset(const Dataset& dataset, const fs::path& root, const IngestConfig& config) {
    validate(dataset);
    fs::create_directories(root);
    std::vector<std::string> names;
    for (const auto& t : dataset.tables) names.push_back(t.name + ".csv");
    if (!std::is_sorted(names.begin(), names.end()) ||
        std::adjacent_find(names.begin(), names.end()) != names.end()) {
        throw Error("table names must be unique and sort in table-id order");
    }
    for (const auto& t : dataset.tables) {
        const fs::path path = root / (t.name + ".csv");
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write " + path.string());
        csv::write_row(out, t.columns);
        for (const auto& r : t.rows) csv::write_row(out, r.values);
    }
    if (dataset.ground_truth) write_clusters(*dataset.ground_truth, root / config.truth_file);
}

std::string serialize_record(const SourceTable& table, std::size_t row_index) {
    if (row_index >= table.rows.size()) {
        throw Error("row " + std::to_string(row_index) + " out of range for table " + table.name);
    }
    const auto& values = table.rows[row_index].values;
    const auto key = table.key_column();
    std::string out;
    for (std::size_t c = 0; c < table.columns.size() && c < values.size(); ++c) {
        if (key && *key == c) continue;
        if (values[c].empty()) continue;
        if (!out.empty()) out += " | ";
        out += table.columns[c];
        out += ": ";
        for (char ch : values[c]) out.push_back(ch == '\n' || ch == '\r' ? ' ' : ch);
    }
    return out;
}

std::vector<SampledRecord> sample_records(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
    const std::size_t total = dataset.record_count();
    if (k > total) {
        throw Error("sample size " + std::to_string(k) + " exceeds record count " + std::to_string(total));
    }
    const std::size_t n = dataset.tables.size();
    const std::size_t quota = n == 0 ? 0 : (k + n - 1) / n;

    // Per-table shuffled row orders; take the quota from each, then top up
    // round-robin from whatever remains.
    std::vector<std::vector<std::uint32_t>> order(n);
    std::vector<std::size_t> taken(n, 0);
    for (std::size_t t = 0; t < n; ++t) {
        order[t].resize(dataset.tables[t].rows.size());
        for (std::uint32_t r = 0; r < order[t].size(); ++r) order[t][r] = r;
        Rng rng(mix_seed(seed, t));
        rng.shuffle(std::span<std::uint32_t>(order[t]));
        taken[t] = std::min(quota, order[t].size());
    }
    std::size_t count = 0;
    for (auto v : taken) count += v;
    while (count < k) {
        for (std::size_t t = 0; t < n && count < k; ++t) {
            if (taken[t] < order[t].size()) {
                ++taken[t];
                ++count;
            }
        }
    }
    // Truncate to k, always trimming the currently largest share (last table on ties).
    while (count > k) {
        std::size_t widest = n - 1;
        for (std::size_t t = n; t-- > 0;) {
            if (taken[t] > taken[widest]) widest = t;
        }
        --taken[widest];
        --count;
    }

    std::vector<SampledRecord> out;
    out.reserve(k);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t i = 0; i < taken[t]; ++i) {
            const auto row = order[t][i];
            out.push_back({EntityRef{static_cast<std::uint32_t>(t), row}, dataset.tables[t].rows[row]});
        }
    }
    return out;
}

}  // namespace polymatch
