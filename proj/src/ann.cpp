#include "polymatch/ann.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>

#include "polymatch/embed.hpp"
#include "polymatch/rng.hpp"

namespace polymatch {

double HnswParams::level_multiplier() const {
    return level_lambda > 0.0 ? level_lambda : 1.0 / std::log(static_cast<double>(M));
}

void HnswParams::validate() const {
    if (M < 2) throw Error("HNSW M must be >= 2");
    if (ef_construction < M) throw Error("HNSW ef_construction must be >= M");
    if (ef_search < 1) throw Error("HNSW ef_search must be >= 1");
    if (level_lambda < 0.0) throw Error("HNSW level_lambda must be >= 0");
}

namespace {

bool neighbor_less(const Neighbor& a, const Neighbor& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.ref < b.ref;
}

// Per-thread visited marks; a generation counter avoids clearing per search.
struct VisitedSet {
    std::vector<std::uint32_t> marks;
    std::uint32_t generation = 0;

    void reset(std::size_t n) {
        if (marks.size() < n) marks.resize(n, 0);
        if (++generation == 0) {
            std::fill(marks.begin(), marks.end(), 0);
            generation = 1;
        }
    }
    // Returns true when the node was not seen before in this generation.
    bool visit(std::uint32_t node) {
        if (marks[node] == generation) return false;
        marks[node] = generation;
        return true;
    }
};

thread_local VisitedSet t_visited;

}  // namespace

std::vector<Neighbor> exact_search(std::span<const IndexItem> items, std::span<const float> query, std::size_t k) {
    if (items.empty()) throw Error("exact search over an empty item set");
    if (k == 0) throw Error("k must be >= 1");
    std::vector<Neighbor> all;
    all.reserve(items.size());
    for (const auto& item : items) {
        if (item.vector.size() != query.size()) throw Error("query dimension mismatch");
        all.push_back({item.ref, cosine_distance(query, item.vector)});
    }
    const std::size_t take = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), neighbor_less);
    all.resize(take);
    return all;
}

AnnIndex AnnIndex::build(std::span<const IndexItem> items, const HnswParams& params, Mode mode) {
    params.validate();
    if (items.empty()) throw Error("cannot build an index over zero items");
    AnnIndex index;
    index.mode_ = mode;
    index.params_ = params;
    index.dim_ = items.front().vector.size();
    index.refs_.reserve(items.size());
    index.vectors_.reserve(items.size() * index.dim_);
    for (const auto& item : items) {
        if (item.vector.size() != index.dim_) throw Error("index items have mixed dimensions");
        index.refs_.push_back(item.ref);
        index.vectors_.insert(index.vectors_.end(), item.vector.begin(), item.vector.end());
    }
    if (mode == Mode::exact) return index;

    const std::size_t n = items.size();
    const std::size_t stride0 = 1 + 2 * params.M;
    index.levels_.resize(n);
    index.layer0_.assign(n * stride0, 0);
    index.upper_.resize(n);
    Rng rng(params.seed);
    const double mult = params.level_multiplier();
    for (std::size_t i = 0; i < n; ++i) {
        const double u = 1.0 - rng.unit();  // (0, 1]
        const int level = std::min(32, static_cast<int>(std::floor(-std::log(u) * mult)));
        index.levels_[i] = level;
        index.upper_[i].assign(static_cast<std::size_t>(level) * (1 + params.M), 0);
    }
    for (std::uint32_t i = 0; i < n; ++i) index.insert(i, index.levels_[i]);
    return index;
}

float AnnIndex::distance_to(std::span<const float> query, std::uint32_t node) const {
    return cosine_distance(query, vector(node));
}

void AnnIndex::prefetch_vector(std::uint32_t node) const {
    const char* p = reinterpret_cast<const char*>(vectors_.data() + static_cast<std::size_t>(node) * dim_);
    const std::size_t bytes = dim_ * sizeof(float);
    for (std::size_t off = 0; off < bytes; off += 64) __builtin_prefetch(p + off);
}

std::uint32_t* AnnIndex::link_block(std::uint32_t node, int level) {
    if (level == 0) return layer0_.data() + static_cast<std::size_t>(node) * (1 + 2 * params_.M);
    return upper_[node].data() + static_cast<std::size_t>(level - 1) * (1 + params_.M);
}

const std::uint32_t* AnnIndex::link_block(std::uint32_t node, int level) const {
    return const_cast<AnnIndex*>(this)->link_block(node, level);
}

std::span<const std::uint32_t> AnnIndex::links(std::uint32_t node, int level) const {
    if (mode_ != Mode::hnsw || node >= refs_.size() || level < 0 || level > levels_[node]) return {};
    const std::uint32_t* block = link_block(node, level);
    return {block + 1, block[0]};
}

std::vector<AnnIndex::Candidate> AnnIndex::search_layer(std::span<const float> query,
                                                        const std::vector<Candidate>& entry, std::size_t ef,
                                                        int level, std::uint64_t* counter) const {
    auto closer = [](const Candidate& a, const Candidate& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.node < b.node;
    };
    auto farther = [&](const Candidate& a, const Candidate& b) { return closer(b, a); };
    // Min-heap of frontier, max-heap of best-so-far.
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(farther)> frontier(farther);
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(closer)> best(closer);

    t_visited.reset(refs_.size());
    for (const auto& e : entry) {
        if (!t_visited.visit(e.node)) continue;
        frontier.push(e);
        best.push(e);
        if (best.size() > ef) best.pop();
    }
    std::uint64_t evaluated = 0;
    std::vector<std::uint32_t> fresh;
    fresh.reserve(2 * params_.M);
    while (!frontier.empty()) {
        const Candidate current = frontier.top();
        if (best.size() >= ef && closer(best.top(), current)) break;
        frontier.pop();
        const std::uint32_t* block = link_block(current.node, level);
        const std::uint32_t count = block[0];
        // Gather unvisited neighbours and pull their vectors toward the core
        // before scoring; the scan is otherwise bound by load latency.
        fresh.clear();
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint32_t next = block[1 + i];
            if (t_visited.visit(next)) fresh.push_back(next);
        }
        for (const auto next : fresh) prefetch_vector(next);
        for (const auto next : fresh) {
            const Candidate cand{distance_to(query, next), next};
            ++evaluated;
            if (best.size() < ef || closer(cand, best.top())) {
                frontier.push(cand);
                best.push(cand);
                if (best.size() > ef) best.pop();
            }
        }
    }
    if (counter) *counter += evaluated;
    std::vector<Candidate> out;
    out.reserve(best.size());
    while (!best.empty()) {
        out.push_back(best.top());
        best.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
}

void AnnIndex::set_links(std::uint32_t node, int level, const std::vector<std::uint32_t>& ids) {
    std::uint32_t* block = link_block(node, level);
    block[0] = static_cast<std::uint32_t>(ids.size());
    std::copy(ids.begin(), ids.end(), block + 1);
}

void AnnIndex::add_link(std::uint32_t from, std::uint32_t to, int level) {
    std::uint32_t* block = link_block(from, level);
    const std::size_t cap = layer_capacity(level);
    if (block[0] < cap) {
        block[1 + block[0]] = to;
        ++block[0];
        return;
    }
    // Overfull: keep the cap closest of the existing links plus the new one.
    std::vector<Candidate> pool;
    pool.reserve(cap + 1);
    const auto origin = vector(from);
    for (std::uint32_t i = 0; i < block[0]; ++i) pool.push_back({distance_to(origin, block[1 + i]), block[1 + i]});
    pool.push_back({distance_to(origin, to), to});
    build_distances_ += pool.size();
    std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.node < b.node;
    });
    block[0] = static_cast<std::uint32_t>(cap);
    for (std::size_t i = 0; i < cap; ++i) block[1 + i] = pool[i].node;
}

void AnnIndex::insert(std::uint32_t node, int level) {
    if (max_level_ < 0) {
        entry_ = node;
        max_level_ = level;
        return;
    }
    const auto query = vector(node);
    std::vector<Candidate> eps{{distance_to(query, entry_), entry_}};
    ++build_distances_;
    for (int l = max_level_; l > level; --l) {
        eps = search_layer(query, eps, 1, l, &build_distances_);
        eps.resize(1);
    }
    for (int l = std::min(level, max_level_); l >= 0; --l) {
        auto found = search_layer(query, eps, params_.ef_construction, l, &build_distances_);
        // Up to the layer's capacity: 2M on layer 0, M above.
        std::vector<std::uint32_t> chosen;
        const std::size_t cap = layer_capacity(l);
        for (std::size_t i = 0; i < found.size() && chosen.size() < cap; ++i) chosen.push_back(found[i].node);
        set_links(node, l, chosen);
        for (auto other : chosen) add_link(other, node, l);
        eps = std::move(found);
    }
    if (level > max_level_) {
        entry_ = node;
        max_level_ = level;
    }
}

std::vector<Neighbor> AnnIndex::exact(std::span<const float> query, std::size_t k) const {
    if (refs_.empty()) throw Error("search on an empty index");
    if (query.size() != dim_) throw Error("query dimension mismatch");
    std::vector<IndexItem> items;
    items.reserve(refs_.size());
    for (std::uint32_t i = 0; i < refs_.size(); ++i) items.push_back({refs_[i], vector(i)});
    return exact_search(items, query, k);
}

std::vector<Neighbor> AnnIndex::search(std::span<const float> query, std::size_t k, std::size_t ef) const {
    if (refs_.empty()) throw Error("search on an empty index");
    if (k == 0) throw Error("k must be >= 1");
    if (query.size() != dim_) throw Error("query dimension mismatch");
    if (mode_ == Mode::exact) return exact(query, k);
    ef = std::max(ef, k);
    std::vector<Candidate> eps{{distance_to(query, entry_), entry_}};
    for (int l = max_level_; l > 0; --l) {
        eps = search_layer(query, eps, 1, l, nullptr);
        eps.resize(1);
    }
    const auto found = search_layer(query, eps, ef, 0, nullptr);
    std::vector<Neighbor> out;
    out.reserve(found.size());
    for (const auto& c : found) out.push_back({refs_[c.node], c.distance});
    std::sort(out.begin(), out.end(), neighbor_less);
    if (out.size() > k) out.resize(k);
    return out;
}

// ---------------------------------------------------------------------------
// Snapshot: magic, version, params, items, graph. All integers little-endian.

namespace {

constexpr char kIndexMagic[8] = {'P', 'M', 'H', 'N', 'S', 'W', '\0', '\0'};
constexpr std::uint32_t kIndexVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw Error("truncated index snapshot");
    return v;
}
template <typename T>
void put_vec(std::ostream& out, const std::vector<T>& v) {
    put<std::uint64_t>(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}
template <typename T>
std::vector<T> get_vec(std::istream& in) {
    const auto n = get<std::uint64_t>(in);
    if (n > (1ULL << 40)) throw Error("corrupt index snapshot");
    std::vector<T> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!in) throw Error("truncated index snapshot");
    return v;
}

}  // namespace

void AnnIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kIndexMagic, sizeof kIndexMagic);
    put(out, kIndexVersion);
    put<std::uint8_t>(out, mode_ == Mode::hnsw ? 0 : 1);
    put<std::uint64_t>(out, params_.M);
    put<std::uint64_t>(out, params_.ef_construction);
    put<std::uint64_t>(out, params_.ef_search);
    put<double>(out, params_.level_lambda);
    put<std::uint64_t>(out, params_.seed);
    put<std::uint64_t>(out, dim_);
    put_vec(out, refs_);
    put_vec(out, vectors_);
    put_vec(out, levels_);
    put_vec(out, layer0_);
    put<std::uint64_t>(out, upper_.size());
    for (const auto& u : upper_) put_vec(out, u);
    put(out, entry_);
    put(out, max_level_);
    put(out, build_distances_);
    if (!out) throw Error("write failed: " + path.string());
}

AnnIndex AnnIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kIndexMagic, sizeof magic) != 0) throw Error(path.string() + ": not an index snapshot");
    if (get<std::uint32_t>(in) != kIndexVersion) throw Error(path.string() + ": unsupported snapshot version");
    AnnIndex index;
    index.mode_ = get<std::uint8_t>(in) == 0 ? Mode::hnsw : Mode::exact;
    index.params_.M = get<std::uint64_t>(in);
    index.params_.ef_construction = get<std::uint64_t>(in);
    index.params_.ef_search = get<std::uint64_t>(in);
    index.params_.level_lambda = get<double>(in);
    index.params_.seed = get<std::uint64_t>(in);
    index.dim_ = get<std::uint64_t>(in);
    index.refs_ = get_vec<EntityRef>(in);
    index.vectors_ = get_vec<float>(in);
    index.levels_ = get_vec<int>(in);
    index.layer0_ = get_vec<std::uint32_t>(in);
    const auto n_upper = get<std::uint64_t>(in);
    if (n_upper != index.refs_.size() && index.mode_ == Mode::hnsw) throw Error("corrupt index snapshot");
    index.upper_.resize(n_upper);
    for (auto& u : index.upper_) u = get_vec<std::uint32_t>(in);
    index.entry_ = get<std::uint32_t>(in);
    index.max_level_ = get<int>(in);
    index.build_distances_ = get<std::uint64_t>(in);
    if (index.vectors_.size() != index.refs_.size() * index.dim_) throw Error("corrupt index snapshot");
    return index;
}

}  // namespace polymatch
