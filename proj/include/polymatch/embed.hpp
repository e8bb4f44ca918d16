#pragma once
// Record embeddings: L2-normalized fixed-dimension float vectors and the
// cosine distance used by every matching stage.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polymatch/coordination.hpp"
#include "polymatch/error.hpp"
#include "polymatch/tables.hpp"

namespace polymatch {

// Dot product of two equal-length vectors. Fixed 32-lane summation order, so
// dot(a, b) == dot(b, a) bit-for-bit.
float dot(std::span<const float> a, std::span<const float> b);

// Distances below this are float noise on unit vectors and snap to 0.
inline constexpr float kDistanceSnap = 1e-6f;

// 1 - a.b on unit vectors, clamped to [0, 2]; dist(u, u) == 0.
float cosine_distance(std::span<const float> a, std::span<const float> b);

// Scales v to unit L2 norm in place; returns false when v is zero or not finite.
bool normalize(std::span<float> v);

enum class EmbedderKind { hashed_ngram, external_service };

struct EmbedderConfig {
    EmbedderKind kind = EmbedderKind::hashed_ngram;
    std::size_t dimension = 384;
    std::size_t max_seq_length = 64;  // whitespace tokens kept per text
    std::size_t batch_size = 512;
    std::size_t ngram_n = 3;
    // Hashed embedder only: ignore field labels ("col:") and "|" separators.
    // They repeat in every record of a schema; under TF weighting the
    // separator trigram alone dominates the norm and squeezes all distances.
    bool skip_structure = true;
    std::optional<std::string> service_endpoint;
    int retry_limit = 2;
    std::size_t threads = 0;  // 0 = hardware concurrency

    void validate() const;
    // Stable text form of every field that influences vector values.
    std::string fingerprint() const;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dimension() const = 0;
    // One unit vector per text, row-major into `out` (texts.size() * dimension()).
    virtual void embed_batch(std::span<const std::string> texts, std::span<float> out) = 0;
};

// Signed feature hashing of lower-cased, space-padded character n-grams with
// term-frequency weights. Empty text maps to the first basis vector.
class HashedNgramEmbedder : public Embedder {
public:
    explicit HashedNgramEmbedder(EmbedderConfig config);
    std::size_t dimension() const override { return config_.dimension; }
    void embed_batch(std::span<const std::string> texts, std::span<float> out) override;
    void embed_one(std::string_view text, std::span<float> out) const;

private:
    EmbedderConfig config_;
};

// HTTP JSON {texts:[...]} -> {vectors:[[...]]}. Returned vectors are checked
// against the configured dimension and re-normalized.
class ServiceEmbedder : public Embedder {
public:
    explicit ServiceEmbedder(EmbedderConfig config);
    std::size_t dimension() const override { return config_.dimension; }
    void embed_batch(std::span<const std::string> texts, std::span<float> out) override;

private:
    EmbedderConfig config_;
};

std::unique_ptr<Embedder> make_embedder(const EmbedderConfig& config);

// Text as the hashed embedder sees it: first max_seq_length whitespace tokens,
// single-spaced, ASCII lower-cased.
std::string truncate_tokens(std::string_view text, std::size_t max_tokens);

// Removes "|" separator tokens and the leading "name:" token of each field.
std::string drop_structure_tokens(std::string_view text);

// Dense per-record vector store addressed by EntityRef.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(std::vector<std::size_t> table_sizes, std::size_t dim);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return refs_total_; }
    std::size_t table_count() const { return table_sizes_.size(); }
    const std::vector<std::size_t>& table_sizes() const { return table_sizes_; }

    std::size_t index_of(EntityRef ref) const;
    EntityRef ref_at(std::size_t index) const;
    bool contains(EntityRef ref) const;

    std::span<const float> operator[](EntityRef ref) const { return row(index_of(ref)); }
    std::span<const float> row(std::size_t index) const {
        return {values_.data() + index * dim_, dim_};
    }
    std::span<float> mutable_row(std::size_t index) { return {values_.data() + index * dim_, dim_}; }
    // All vectors of one table, contiguous.
    std::span<const float> table_block(std::uint32_t table) const;

    friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

    void save(const std::filesystem::path& path) const;
    static EmbeddingTable load(const std::filesystem::path& path);

private:
    std::vector<std::size_t> table_sizes_;
    std::vector<std::size_t> offsets_;
    std::size_t refs_total_ = 0;
    std::size_t dim_ = 0;
    std::vector<float> values_;
};

// Embeds one text with a throwaway embedder built from config.
std::vector<float> embed_text(std::string_view text, const EmbedderConfig& config);

class EmbedError : public Error {
public:
    EmbedError(const std::string& what, std::optional<EntityRef> ref) : Error(what), ref_(ref) {}
    std::optional<EntityRef> ref() const { return ref_; }

private:
    std::optional<EntityRef> ref_;
};

// One vector per record, computed in batch_size chunks (chunks may run in
// parallel). `embedder` overrides the one built from config.
EmbeddingTable embed_dataset(const CoordinatedDataset& data, const EmbedderConfig& config,
                             Embedder* embedder = nullptr);

}  // namespace polymatch
