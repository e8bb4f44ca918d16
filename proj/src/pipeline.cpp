#include "polymatch/pipeline.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>


#include "json.hpp"
#include "polymatch/csv.hpp"

namespace polymatch {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

namespace {

// Length-prefixed so that field boundaries cannot collide.
void append_field(std::string& buf, std::string_view s) {
    buf += std::to_string(s.size());
    buf.push_back(':');
    buf.append(s);
}

std::string texts_digest(const CoordinatedDataset& data) {
    std::string buf;
    for (const auto& table : data.texts) {
        append_field(buf, "table");
        for (const auto& t : table) append_field(buf, t);
    }
    return sha256_hex(buf);
}

std::string coordination_key(const Dataset& dataset, const PipelineConfig& config) {
    std::string buf = "coordination-v1";
    append_field(buf, dataset_digest(dataset));
    append_field(buf, to_string(config.coordination_mode));
    append_field(buf, to_string(config.prompt_style));
    for (const auto& r : config.custom_rules) append_field(buf, r);
    const auto& tm = config.text_model;
    for (const auto& field : {tm.endpoint, tm.model_name, std::to_string(tm.n), std::to_string(tm.max_tokens),
                              std::to_string(tm.temperature), std::to_string(tm.top_p),
                              std::to_string(tm.batch_size), std::to_string(config.sample_size),
                              std::to_string(config.seed)}) {
        append_field(buf, field);
    }
    return sha256_hex(buf);
}

std::optional<std::vector<std::vector<std::string>>> load_texts(const fs::path& path, const Dataset& dataset) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    try {
        const auto j = nlohmann::json::parse(in);
        auto texts = j.at("texts").get<std::vector<std::vector<std::string>>>();
        const auto sizes = dataset.table_sizes();
        if (texts.size() != sizes.size()) return std::nullopt;
        for (std::size_t t = 0; t < sizes.size(); ++t) {
            if (texts[t].size() != sizes[t]) return std::nullopt;
        }
        return texts;
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
}

// Write to a temp name then rename, so a crashed run never leaves a torn entry.
template <typename WriteFn>
void atomic_write(const fs::path& path, WriteFn write) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    write(tmp);
    fs::rename(tmp, path);
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

struct Prepared {
    CoordinatedDataset coordinated;
    EmbeddingTable embeddings;
    bool coordination_cached = false;
    bool embeddings_cached = false;
    double coordinate_seconds = 0.0;
    double embed_seconds = 0.0;
};

CoordinatedDataset run_coordination(const Dataset& dataset, const PipelineConfig& config, const MatchHooks& hooks,
                                    bool& cached) {
    cached = false;
    if (config.disable_mplac) return passthrough(dataset);
    if (config.coordination_mode == CoordinationMode::rules_only || config.cache_dir.empty()) {
        return coordinate(dataset, config.coordination_options(), hooks.text_model);
    }
    // Only model-backed coordination is cached; the rule engine is cheaper
    // than reading its output back.
    const fs::path path = config.cache_dir / ("coord-" + coordination_key(dataset, config) + ".json");
    if (auto texts = load_texts(path, dataset)) {
        CoordinatedDataset out;
        out.dataset = dataset;
        out.texts = std::move(*texts);
        cached = true;
        return out;
    }
    auto out = coordinate(dataset, config.coordination_options(), hooks.text_model);
    atomic_write(path, [&](const fs::path& tmp) {
        std::ofstream f(tmp, std::ios::binary);
        f << nlohmann::json{{"texts", out.texts}}.dump();
        if (!f) throw Error("cannot write cache entry " + tmp.string());
    });
    return out;
}

EmbeddingTable run_embedding(const CoordinatedDataset& data, const PipelineConfig& config, const MatchHooks& hooks,
                             bool& cached) {
    cached = false;
    if (config.cache_dir.empty() || hooks.embedder) return embed_dataset(data, config.embedder, hooks.embedder);
    std::string key = "embedding-v1";
    append_field(key, texts_digest(data));
    append_field(key, config.embedder.fingerprint());
    const fs::path path = config.cache_dir / ("embed-" + sha256_hex(key) + ".bin");
    if (fs::exists(path)) {
        try {
            auto table = EmbeddingTable::load(path);
            if (table.table_sizes() == data.dataset.table_sizes() && table.dim() == config.embedder.dimension) {
                cached = true;
                return table;
            }
        } catch (const Error&) {
            // Unreadable entry: recompute and overwrite.
        }
    }
    auto table = embed_dataset(data, config.embedder);
    atomic_write(path, [&](const fs::path& tmp) { table.save(tmp); });
    return table;
}

Prepared prepare(const Dataset& dataset, const PipelineConfig& config, const MatchHooks& hooks) {
    Prepared p;
    Stopwatch coord_clock;
    p.coordinated = run_coordination(dataset, config, hooks, p.coordination_cached);
    p.coordinate_seconds = coord_clock.seconds();
    Stopwatch embed_clock;
    p.embeddings = run_embedding(p.coordinated, config, hooks, p.embeddings_cached);
    p.embed_seconds = embed_clock.seconds();
    return p;
}

std::vector<Cluster> finish_clusters(const TcemResult& tcem, const EmbeddingTable& embeddings,
                                     const PipelineConfig& config, PruneResult* pruned) {
    if (config.disable_dpm) return tcem.clusters;
    auto result = prune_with_labels(tcem.clusters, embeddings, config.dpm);
    auto clusters = result.clusters;
    if (pruned) *pruned = std::move(result);
    return clusters;
}

EvalReport score_stage(const std::vector<Cluster>& prematched, const std::vector<Cluster>& final_clusters,
                       const std::vector<Cluster>& truth, bool dpm_ran) {
    auto report = score(final_clusters, truth);
    report.stage_counts["tcem"] = prematched.size();
    if (dpm_ran) report.stage_counts["dpm"] = final_clusters.size();
    return report;
}

const std::vector<Cluster>& require_truth(const Dataset& dataset, const char* what) {
    if (!dataset.ground_truth || dataset.ground_truth->empty()) {
        throw Error(std::string(what) + " needs ground truth");
    }
    return *dataset.ground_truth;
}

}  // namespace

std::string dataset_digest(const Dataset& dataset) {
    std::string buf;
    for (const auto& table : dataset.tables) {
        append_field(buf, table.name);
        for (const auto& c : table.columns) append_field(buf, c);
        for (const auto& r : table.rows) {
            append_field(buf, "row");
            for (const auto& v : r.values) append_field(buf, v);
        }
    }
    return sha256_hex(buf);
}

MatchResult match(const Dataset& dataset, const PipelineConfig& config, const MatchHooks& hooks) {
    config.validate();
    validate(dataset);
    MatchResult out;
    auto stage_done = [&](std::string_view stage, double seconds) {
        out.timings.push_back({std::string(stage), seconds});
        if (hooks.on_stage) hooks.on_stage(stage, out);
    };

    Stopwatch coord_clock;
    out.coordinated = run_coordination(dataset, config, hooks, out.coordination_cached);
    stage_done("coordinate", coord_clock.seconds());

    Stopwatch embed_clock;
    out.embeddings = run_embedding(out.coordinated, config, hooks, out.embeddings_cached);
    stage_done("embed", embed_clock.seconds());

    Stopwatch tcem_clock;
    out.tcem = run_tcem(out.embeddings, config.tcem_params());
    stage_done("tcem", tcem_clock.seconds());

    Stopwatch dpm_clock;
    out.clusters = finish_clusters(out.tcem, out.embeddings, config, &out.pruned);
    stage_done("dpm", dpm_clock.seconds());

    if (config.evaluate && dataset.ground_truth && !dataset.ground_truth->empty()) {
        Stopwatch score_clock;
        out.report = score_stage(out.tcem.clusters, out.clusters, *dataset.ground_truth, !config.disable_dpm);
        stage_done("score", score_clock.seconds());
    }
    return out;
}

std::string report_json(const MatchResult& result, const PipelineConfig& config) {
    json j;
    if (result.report) {
        j["evaluation"] = json::parse(to_json(*result.report, -1));
    } else {
        j["evaluation"] = nullptr;
    }
    json counts;
    counts["records"] = result.coordinated.record_count();
    counts["model_records"] = result.coordinated.model_records;
    counts["fallback_records"] = result.coordinated.fallback_records;
    counts["pairs"] = result.tcem.pairs.size();
    counts["prematched_clusters"] = result.tcem.clusters.size();
    counts["clusters"] = result.clusters.size();
    j["counts"] = counts;
    if (!config.disable_dpm) {
        const auto h = histogram(result.pruned.labels);
        j["labels"] = {{"core", h.core}, {"reachable", h.reachable}, {"noise", h.noise}};
    }
    json timings = json::object();
    for (const auto& t : result.timings) timings[t.stage] = t.seconds;
    j["stage_seconds"] = timings;
    j["cache"] = {{"coordination", result.coordination_cached}, {"embeddings", result.embeddings_cached}};
    json cfg = json::object();
    for (const auto& key : config_keys()) {
        if (key.name == "tm_api_key_env") continue;
        cfg[key.name] = get_option(config, key.name);
    }
    j["config"] = cfg;
    return j.dump(2) + "\n";
}

MatchResult run_pipeline(const PipelineConfig& config, const MatchHooks& hooks) {
    if (config.out_dir.empty()) throw ConfigError("out_dir is not set");
    fs::create_directories(config.out_dir);
    const fs::path out = config.out_dir;
    fs::remove(out / artifact::error_json);
    std::string stage = "load";
    try {
        config.validate();
        if (config.dataset.empty()) throw ConfigError("dataset is not set");
        IngestConfig ingest = config.ingest;
        const Dataset dataset = load_dataset(config.dataset, ingest);

        MatchHooks staged = hooks;
        staged.on_stage = [&](std::string_view done, const MatchResult& r) {
            if (done == "coordinate") {
                stage = "embed";
                std::ofstream f(out / artifact::coordinated, std::ios::binary);
                csv::write_row(f, {"table_id", "row_index", "text"});
                for (std::size_t t = 0; t < r.coordinated.texts.size(); ++t) {
                    for (std::size_t row = 0; row < r.coordinated.texts[t].size(); ++row) {
                        csv::write_row(f, {std::to_string(t), std::to_string(row), r.coordinated.texts[t][row]});
                    }
                }
            } else if (done == "embed") {
                stage = "tcem";
            } else if (done == "tcem") {
                stage = "dpm";
                write_pairs(r.tcem.pairs, out / artifact::pairs);
                write_clusters(r.tcem.clusters, out / artifact::prematched);
            } else if (done == "dpm") {
                stage = "score";
                write_clusters(r.clusters, out / artifact::clusters);
                if (!config.disable_dpm) write_labels(r.pruned.labels, out / artifact::labels);
            }
            if (hooks.on_stage) hooks.on_stage(done, r);
        };
        stage = "coordinate";
        auto result = match(dataset, config, staged);
        stage = "report";
        {
            std::ofstream f(out / artifact::report_json, std::ios::binary);
            f << report_json(result, config);
        }
        {
            std::ofstream f(out / artifact::report_txt, std::ios::binary);
            if (result.report) f << to_table(*result.report);
            f << "clusters  " << result.clusters.size() << "\n";
        }
        return result;
    } catch (const std::exception& e) {
        json err;
        err["stage"] = stage;
        err["message"] = e.what();
        if (const auto* ce = dynamic_cast<const CoordinationError*>(&e)) {
            json failures = json::array();
            for (const auto& f : ce->failures()) {
                failures.push_back({{"table_id", f.ref.table}, {"row_index", f.ref.row}, {"message", f.message}});
            }
            err["failures"] = failures;
        }
        if (const auto* ee = dynamic_cast<const EmbedError*>(&e); ee && ee->ref()) {
            err["record"] = {{"table_id", ee->ref()->table}, {"row_index", ee->ref()->row}};
        }
        std::ofstream f(out / artifact::error_json, std::ios::binary);
        f << err.dump(2) << "\n";
        throw;
    }
}

std::string_view to_string(SweepParam p) { return p == SweepParam::lambda ? "lambda" : "d"; }

SweepParam parse_sweep_param(std::string_view s) {
    if (s == "lambda") return SweepParam::lambda;
    if (s == "d") return SweepParam::d;
    throw ConfigError("unknown sweep parameter '" + std::string(s) + "' (expected lambda or d)");
}

std::vector<double> parse_grid(std::string_view grid) {
    const auto c1 = grid.find(':');
    const auto c2 = c1 == std::string_view::npos ? c1 : grid.find(':', c1 + 1);
    if (c2 == std::string_view::npos) throw ConfigError("grid must look like start:stop:step");
    auto num = [&](std::string_view s) {
        const std::string str(s);
        char* end = nullptr;
        const double v = std::strtod(str.c_str(), &end);
        if (str.empty() || end != str.c_str() + str.size()) throw ConfigError("bad grid number '" + str + "'");
        return v;
    };
    const double a = num(grid.substr(0, c1));
    const double b = num(grid.substr(c1 + 1, c2 - c1 - 1));
    const double step = num(grid.substr(c2 + 1));
    if (!(step > 0.0) || b < a) throw ConfigError("grid needs step > 0 and stop >= start");
    const auto n = static_cast<std::size_t>(std::floor((b - a) / step + 1e-9)) + 1;
    std::vector<double> values;
    for (std::size_t i = 0; i < n; ++i) {
        // Round away binary noise such as 0.30000000000000004.
        values.push_back(std::round((a + static_cast<double>(i) * step) * 1e9) / 1e9);
    }
    return values;
}

std::vector<SweepPoint> sweep(const Dataset& dataset, const PipelineConfig& config, const SweepSpec& spec,
                              const MatchHooks& hooks) {
    if (spec.values.empty()) throw ConfigError("sweep needs at least one value");
    if (!std::is_sorted(spec.values.begin(), spec.values.end())) throw ConfigError("sweep values must ascend");
    config.validate();
    validate(dataset);
    const auto& truth = require_truth(dataset, "sweep");
    const Prepared prep = prepare(dataset, config, hooks);

    std::vector<SweepPoint> points;
    if (spec.parameter == SweepParam::lambda) {
        const auto links = TcemLinks::compute(prep.embeddings, config.tcem_params());
        for (double v : spec.values) {
            PipelineConfig point = config;
            point.tcem.lambda = v;
            point.validate();
            const auto tcem = links.at_lambda(v);
            const auto final_clusters = finish_clusters(tcem, prep.embeddings, point, nullptr);
            points.push_back({v, score_stage(tcem.clusters, final_clusters, truth, !point.disable_dpm)});
        }
    } else {
        const auto tcem = run_tcem(prep.embeddings, config.tcem_params());
        for (double v : spec.values) {
            PipelineConfig point = config;
            point.dpm.d = v;
            point.validate();
            const auto final_clusters = finish_clusters(tcem, prep.embeddings, point, nullptr);
            points.push_back({v, score_stage(tcem.clusters, final_clusters, truth, !point.disable_dpm)});
        }
    }
    return points;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
    std::string out = "value,precision,recall,f1\n";
    char buf[128];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof buf, "%.12g,%.6f,%.6f,%.6f\n", p.value, p.report.precision, p.report.recall,
                      p.report.f1);
        out += buf;
    }
    return out;
}

AblationSet parse_ablation(std::string_view list) {
    AblationSet set;
    std::size_t pos = 0;
    while (pos <= list.size()) {
        auto comma = list.find(',', pos);
        if (comma == std::string_view::npos) comma = list.size();
        std::string item(list.substr(pos, comma - pos));
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        for (auto& ch : item) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (item == "mplac" || item == "coordination") set.mplac = true;
        else if (item == "dpm" || item == "pruning") set.dpm = true;
        else if (!item.empty()) throw ConfigError("unknown stage '" + item + "' (expected mplac or dpm)");
        pos = comma + 1;
    }
    return set;
}

EvalReport ablate(const Dataset& dataset, PipelineConfig config, AblationSet disable, const MatchHooks& hooks) {
    require_truth(dataset, "ablate");
    config.disable_mplac = config.disable_mplac || disable.mplac;
    config.disable_dpm = config.disable_dpm || disable.dpm;
    config.evaluate = true;
    return *match(dataset, config, hooks).report;
}

}  // namespace polymatch
