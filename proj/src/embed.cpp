#include "polymatch/embed.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace polymatch {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

// 32 independent lanes keep the vector units busy; the reduction tree is
// fixed so results do not depend on which clone runs. No FMA in either clone.
__attribute__((target_clones("avx2", "default")))
float dot(std::span<const float> a, std::span<const float> b) {
    const std::size_t n = a.size();
    const float* pa = a.data();
    const float* pb = b.data();
    float acc[32] = {};
    std::size_t i = 0;
    for (; i + 32 <= n; i += 32) {
        for (int l = 0; l < 32; ++l) acc[l] += pa[i + l] * pb[i + l];
    }
    for (; i < n; ++i) acc[i % 32] += pa[i] * pb[i];
    for (int w = 16; w >= 1; w /= 2) {
        for (int l = 0; l < w; ++l) acc[l] += acc[l + w];
    }
    return acc[0];
}

float cosine_distance(std::span<const float> a, std::span<const float> b) {
    const float d = 1.0f - dot(a, b);
    if (d < kDistanceSnap) return 0.0f;
    return std::min(d, 2.0f);
}

bool normalize(std::span<float> v) {
    double sq = 0.0;
    for (float x : v) sq += static_cast<double>(x) * x;
    if (!(sq > 0.0) || !std::isfinite(sq)) return false;
    const double inv = 1.0 / std::sqrt(sq);
    for (float& x : v) x = static_cast<float>(x * inv);
    return true;
}

void EmbedderConfig::validate() const {
    if (dimension < 8) throw Error("embedding dimension must be >= 8");
    if (max_seq_length < 1) throw Error("max_seq_length must be >= 1");
    if (batch_size < 1) throw Error("embedding batch_size must be >= 1");
    if (ngram_n < 1) throw Error("ngram_n must be >= 1");
    if (kind == EmbedderKind::external_service && (!service_endpoint || service_endpoint->empty())) {
        throw Error("external embedding service needs an endpoint");
    }
}

std::string EmbedderConfig::fingerprint() const {
    std::string s = kind == EmbedderKind::hashed_ngram ? "hashed_ngram" : "external_service";
    s += ";dim=" + std::to_string(dimension) + ";seq=" + std::to_string(max_seq_length);
    if (kind == EmbedderKind::hashed_ngram) {
        s += ";n=" + std::to_string(ngram_n) + ";hash=fnv1a64-signed";
        if (skip_structure) s += ";structure=skipped";
    } else {
        s += ";endpoint=" + service_endpoint.value_or("");
    }
    return s;
}

std::string truncate_tokens(std::string_view text, std::size_t max_tokens) {
    std::string out;
    std::size_t tokens = 0;
    std::size_t i = 0;
    while (i < text.size() && tokens < max_tokens) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i == text.size()) break;
        if (tokens) out.push_back(' ');
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
            ++i;
        }
        ++tokens;
    }
    return out;
}

std::string drop_structure_tokens(std::string_view text) {
    std::string out;
    bool field_start = true;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && text[i] == ' ') ++i;
        const std::size_t b = i;
        while (i < text.size() && text[i] != ' ') ++i;
        if (b == i) break;
        const std::string_view tok = text.substr(b, i - b);
        const bool separator = tok == "|";
        const bool label = field_start && tok.size() > 1 && tok.back() == ':';
        field_start = separator;
        if (separator || label) continue;
        if (!out.empty()) out.push_back(' ');
        out.append(tok);
    }
    return out;
}

namespace {

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

HashedNgramEmbedder::HashedNgramEmbedder(EmbedderConfig config) : config_(std::move(config)) {
    config_.validate();
}

void HashedNgramEmbedder::embed_one(std::string_view text, std::span<float> out) const {
    std::fill(out.begin(), out.end(), 0.0f);
    std::string body = truncate_tokens(text, config_.max_seq_length);
    if (config_.skip_structure) body = drop_structure_tokens(body);
    if (body.empty()) {
        out[0] = 1.0f;
        return;
    }
    const std::string padded = " " + body + " ";
    const std::size_t n = config_.ngram_n;
    const std::size_t dim = config_.dimension;
    const std::string_view view(padded);
    auto add = [&](std::string_view gram) {
        const std::uint64_t h = fnv1a64(gram);
        out[h % dim] += (h >> 63) ? -1.0f : 1.0f;
    };
    if (view.size() <= n) {
        add(view);
    } else {
        for (std::size_t i = 0; i + n <= view.size(); ++i) add(view.substr(i, n));
    }
    if (!normalize(out)) {
        std::fill(out.begin(), out.end(), 0.0f);
        out[0] = 1.0f;
    }
}

void HashedNgramEmbedder::embed_batch(std::span<const std::string> texts, std::span<float> out) {
    const std::size_t dim = config_.dimension;
    for (std::size_t i = 0; i < texts.size(); ++i) embed_one(texts[i], out.subspan(i * dim, dim));
}

ServiceEmbedder::ServiceEmbedder(EmbedderConfig config) : config_(std::move(config)) { config_.validate(); }

void ServiceEmbedder::embed_batch(std::span<const std::string> texts, std::span<float> out) {
    using nlohmann::json;
    const std::string& url = *config_.service_endpoint;
    const auto scheme_end = url.find("://");
    const auto path_start = scheme_end == std::string::npos ? std::string::npos : url.find('/', scheme_end + 3);
    const std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

    json body = {{"texts", json::array()}};
    for (const auto& t : texts) body["texts"].push_back(truncate_tokens(t, config_.max_seq_length));
    const std::string payload = body.dump();

    std::string last_error;
    const int attempts = config_.retry_limit + 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        try {
            httplib::Client client(origin);
            auto res = client.Post(path, payload, "application/json");
            if (!res) throw Error(httplib::to_string(res.error()));
            if (res->status != 200) throw Error("HTTP " + std::to_string(res->status));
            const json j = json::parse(res->body);
            const auto& vectors = j.at("vectors");
            if (vectors.size() != texts.size()) {
                throw Error("expected " + std::to_string(texts.size()) + " vectors, got " +
                            std::to_string(vectors.size()));
            }
            for (std::size_t i = 0; i < texts.size(); ++i) {
                const auto& v = vectors[i];
                if (v.size() != config_.dimension) {
                    throw Error("vector dimension " + std::to_string(v.size()) + " != configured " +
                                std::to_string(config_.dimension));
                }
                auto dst = out.subspan(i * config_.dimension, config_.dimension);
                for (std::size_t d = 0; d < config_.dimension; ++d) dst[d] = v[d].get<float>();
                if (!normalize(dst)) throw Error("service returned a zero or non-finite vector");
            }
            return;
        } catch (const std::exception& e) {
            last_error = e.what();
        }
    }
    throw Error("embedding service failed after " + std::to_string(attempts) + " attempts: " + last_error);
}

std::unique_ptr<Embedder> make_embedder(const EmbedderConfig& config) {
    if (config.kind == EmbedderKind::hashed_ngram) return std::make_unique<HashedNgramEmbedder>(config);
    return std::make_unique<ServiceEmbedder>(config);
}

std::vector<float> embed_text(std::string_view text, const EmbedderConfig& config) {
    auto embedder = make_embedder(config);
    std::vector<float> v(embedder->dimension());
    const std::string owned(text);
    embedder->embed_batch(std::span<const std::string>(&owned, 1), v);
    return v;
}

// ---------------------------------------------------------------------------

EmbeddingTable::EmbeddingTable(std::vector<std::size_t> table_sizes, std::size_t dim)
    : table_sizes_(std::move(table_sizes)), dim_(dim) {
    offsets_.reserve(table_sizes_.size());
    for (auto s : table_sizes_) {
        offsets_.push_back(refs_total_);
        refs_total_ += s;
    }
    values_.assign(refs_total_ * dim_, 0.0f);
}

bool EmbeddingTable::contains(EntityRef ref) const {
    return ref.table < table_sizes_.size() && ref.row < table_sizes_[ref.table];
}

std::size_t EmbeddingTable::index_of(EntityRef ref) const {
    if (!contains(ref)) {
        throw Error("no embedding for (" + std::to_string(ref.table) + "," + std::to_string(ref.row) + ")");
    }
    return offsets_[ref.table] + ref.row;
}

EntityRef EmbeddingTable::ref_at(std::size_t index) const {
    // upper_bound skips empty tables that share an offset with their successor.
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), index);
    const auto t = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    return {static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(index - offsets_[t])};
}

std::span<const float> EmbeddingTable::table_block(std::uint32_t table) const {
    if (table >= table_sizes_.size()) throw Error("unknown table " + std::to_string(table));
    return {values_.data() + offsets_[table] * dim_, table_sizes_[table] * dim_};
}

namespace {
constexpr char kEmbeddingMagic[8] = {'P', 'M', 'E', 'M', 'B', '0', '0', '1'};

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw Error("truncated binary file");
    return v;
}
}  // namespace

void EmbeddingTable::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kEmbeddingMagic, sizeof kEmbeddingMagic);
    put<std::uint64_t>(out, dim_);
    put<std::uint64_t>(out, table_sizes_.size());
    for (auto s : table_sizes_) put<std::uint64_t>(out, s);
    out.write(reinterpret_cast<const char*>(values_.data()),
              static_cast<std::streamsize>(values_.size() * sizeof(float)));
    if (!out) throw Error("write failed: " + path.string());
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kEmbeddingMagic, sizeof magic) != 0) {
        throw Error(path.string() + ": not an embedding file");
    }
    const auto dim = get<std::uint64_t>(in);
    const auto n_tables = get<std::uint64_t>(in);
    std::vector<std::size_t> sizes;
    for (std::uint64_t i = 0; i < n_tables; ++i) sizes.push_back(get<std::uint64_t>(in));
    EmbeddingTable table(std::move(sizes), dim);
    in.read(reinterpret_cast<char*>(table.values_.data()),
            static_cast<std::streamsize>(table.values_.size() * sizeof(float)));
    if (!in) throw Error(path.string() + ": truncated embedding file");
    return table;
}

EmbeddingTable embed_dataset(const CoordinatedDataset& data, const EmbedderConfig& config, Embedder* embedder) {
    config.validate();
    std::unique_ptr<Embedder> owned;
    if (!embedder) {
        owned = make_embedder(config);
        embedder = owned.get();
    }
    if (embedder->dimension() != config.dimension) throw Error("embedder dimension differs from config");

    EmbeddingTable table(data.dataset.table_sizes(), config.dimension);
    std::vector<std::string> flat;
    flat.reserve(table.size());
    for (const auto& t : data.texts) flat.insert(flat.end(), t.begin(), t.end());
    if (flat.size() != table.size()) throw Error("coordinated texts do not cover every record");

    const std::size_t batch = config.batch_size;
    const std::size_t n_batches = (flat.size() + batch - 1) / batch;
    std::size_t threads = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, std::max<std::size_t>(n_batches, 1));
    // Remote services get one request at a time per worker; the hashed
    // embedder is pure so workers share it freely.
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::optional<EntityRef> failed_ref;
    std::mutex failure_mutex;
    const std::size_t dim = config.dimension;

    auto work = [&] {
        for (std::size_t b = next++; b < n_batches; b = next++) {
            const std::size_t begin = b * batch;
            const std::size_t end = std::min(flat.size(), begin + batch);
            try {
                embedder->embed_batch(std::span<const std::string>(flat.data() + begin, end - begin),
                                      std::span<float>(table.mutable_row(begin).data(), (end - begin) * dim));
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                    failed_ref = table.ref_at(begin);
                }
                next = n_batches;
            }
        }
    };
    if (threads <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    if (failure) {
        try {
            std::rethrow_exception(failure);
        } catch (const std::exception& e) {
            throw EmbedError(std::string(e.what()) + " (batch starting at table " + std::to_string(failed_ref->table) +
                                 " row " + std::to_string(failed_ref->row) + ")",
                             failed_ref);
        }
    }
    return table;
}

}  // namespace polymatch
