#pragma once
// End-to-end matching: coordinate -> embed -> TCEM -> DPM -> score, plus the
// sweep and ablation harnesses that reuse the expensive upstream stages.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "polymatch/coordination.hpp"
#include "polymatch/dpm.hpp"
#include "polymatch/embed.hpp"
#include "polymatch/eval.hpp"
#include "polymatch/tcem.hpp"

namespace polymatch {

class ConfigError : public Error {
public:
    using Error::Error;
};

struct PipelineConfig {
    std::filesystem::path dataset;
    std::filesystem::path out_dir;
    std::filesystem::path cache_dir;  // empty = no stage cache
    IngestConfig ingest;

    CoordinationMode coordination_mode = CoordinationMode::rules_only;
    PromptStyle prompt_style = PromptStyle::simple;
    std::size_t sample_size = 8;
    std::vector<std::string> custom_rules;  // "pattern => replacement"
    TextModelConfig text_model;             // used when endpoint is set

    EmbedderConfig embedder;
    TcemParams tcem;
    DpmParams dpm;

    bool disable_mplac = false;
    bool disable_dpm = false;
    bool evaluate = true;  // score when ground truth is present

    std::uint64_t seed = 7;

    void validate() const;
    CoordinationOptions coordination_options() const;
    TcemParams tcem_params() const;  // tcem with the ANN seed taken from `seed`
};

struct ConfigKey {
    std::string name;
    std::string provenance;  // "reported" (matches the published setup) or "chosen"
    std::string help;
};

// Every recognised key, in documentation order.
const std::vector<ConfigKey>& config_keys();

// Sets one key from its text form. Throws ConfigError on unknown keys or
// unparseable values. "custom_rule" appends; "disable" takes a comma list.
void set_option(PipelineConfig& config, std::string_view key, std::string_view value);
std::string get_option(const PipelineConfig& config, std::string_view key);

// "key = value" lines; '#' starts a comment. Later lines override earlier ones.
PipelineConfig parse_config(std::string_view text, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});
std::string dump_config(const PipelineConfig& config);

// Hex SHA-256 of arbitrary bytes; stage caches are keyed by it.
std::string sha256_hex(std::string_view bytes);
std::string dataset_digest(const Dataset& dataset);

struct StageTime {
    std::string stage;
    double seconds = 0.0;
};

struct MatchResult {
    CoordinatedDataset coordinated;
    EmbeddingTable embeddings;
    TcemResult tcem;
    PruneResult pruned;              // empty when DPM is disabled
    std::vector<Cluster> clusters;   // final output
    std::optional<EvalReport> report;
    std::vector<StageTime> timings;
    bool coordination_cached = false;
    bool embeddings_cached = false;
};

struct MatchHooks {
    TextModel* text_model = nullptr;  // overrides the HTTP client
    Embedder* embedder = nullptr;     // overrides the configured embedder
    // Called after each stage completes, e.g. to persist partial artifacts.
    std::function<void(std::string_view stage, const MatchResult&)> on_stage;
};

// In-memory pipeline over an already loaded dataset. No files are written
// except cache entries under config.cache_dir.
MatchResult match(const Dataset& dataset, const PipelineConfig& config, const MatchHooks& hooks = {});

// Loads config.dataset, runs match() and writes the artifacts under
// config.out_dir as each stage finishes. On failure error.json records the
// failing stage and the exception is rethrown.
MatchResult run_pipeline(const PipelineConfig& config, const MatchHooks& hooks = {});

// Stable artifact file names inside out_dir.
namespace artifact {
inline constexpr const char* coordinated = "coordinated.csv";
inline constexpr const char* pairs = "pairs.csv";
inline constexpr const char* prematched = "clusters_prematched.csv";
inline constexpr const char* clusters = "clusters.csv";
inline constexpr const char* labels = "labels.csv";
inline constexpr const char* report_json = "report.json";
inline constexpr const char* report_txt = "report.txt";
inline constexpr const char* error_json = "error.json";
inline constexpr const char* sweep_csv = "sweep.csv";
}  // namespace artifact

std::string report_json(const MatchResult& result, const PipelineConfig& config);

enum class SweepParam { lambda, d };

std::string_view to_string(SweepParam p);
SweepParam parse_sweep_param(std::string_view s);

struct SweepSpec {
    SweepParam parameter = SweepParam::lambda;
    std::vector<double> values;  // ascending, non-empty
};

// "a:b:step" inclusive of b (within 1e-9 of a step).
std::vector<double> parse_grid(std::string_view grid);

struct SweepPoint {
    double value = 0.0;
    EvalReport report;
};

// Coordination and embeddings are computed once; lambda sweeps reuse the
// top-1 links, d sweeps reuse the TCEM clusters. Requires ground truth.
std::vector<SweepPoint> sweep(const Dataset& dataset, const PipelineConfig& config, const SweepSpec& spec,
                              const MatchHooks& hooks = {});
std::string sweep_csv(const std::vector<SweepPoint>& points);

struct AblationSet {
    bool mplac = false;
    bool dpm = false;
};

AblationSet parse_ablation(std::string_view list);

// Full pipeline with the listed stages bypassed. Requires ground truth.
EvalReport ablate(const Dataset& dataset, PipelineConfig config, AblationSet disable, const MatchHooks& hooks = {});

}  // namespace polymatch
