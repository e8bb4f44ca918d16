#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "polymatch/pipeline.hpp"

namespace polymatch {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string normalize_key(std::string_view key) {
    std::string k = trim(key);
    std::replace(k.begin(), k.end(), '-', '_');
    return k;
}

std::uint64_t to_uint(std::string_view key, std::string_view value) {
    std::uint64_t out = 0;
    const auto s = trim(value);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + s + "'");
    }
    return out;
}

int to_int(std::string_view key, std::string_view value) {
    int out = 0;
    const auto s = trim(value);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError(std::string(key) + ": expected an integer, got '" + s + "'");
    }
    return out;
}

double to_real(std::string_view key, std::string_view value) {
    const auto s = trim(value);
    char* end = nullptr;
    errno = 0;
    const double out = std::strtod(s.c_str(), &end);
    if (s.empty() || errno != 0 || end != s.c_str() + s.size()) {
        throw ConfigError(std::string(key) + ": expected a number, got '" + s + "'");
    }
    return out;
}

bool to_bool(std::string_view key, std::string_view value) {
    const auto s = trim(value);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(std::string(key) + ": expected true/false, got '" + s + "'");
}

std::string real_text(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

using Setter = void (*)(PipelineConfig&, std::string_view key, std::string_view value);
using Getter = std::string (*)(const PipelineConfig&);

struct KeySpec {
    ConfigKey doc;
    Setter set;
    Getter get;
};

const std::vector<KeySpec>& key_table() {
    static const std::vector<KeySpec> table = {
        {{"dataset", "chosen", "directory of source CSV files ('-' reads the path from stdin)"},
         [](PipelineConfig& c, std::string_view, std::string_view v) { c.dataset = trim(v); },
         [](const PipelineConfig& c) { return c.dataset.string(); }},
        {{"out_dir", "chosen", "directory for artifacts"},
         [](PipelineConfig& c, std::string_view, std::string_view v) { c.out_dir = trim(v); },
         [](const PipelineConfig& c) { return c.out_dir.string(); }},
        {{"cache_dir", "chosen", "stage cache directory; empty disables caching"},
         [](PipelineConfig& c, std::string_view, std::string_view v) { c.cache_dir = trim(v); },
         [](const PipelineConfig& c) { return c.cache_dir.string(); }},
        {{"truth_file", "chosen", "ground-truth file name inside the dataset directory"},
         [](PipelineConfig& c, std::string_view, std::string_view v) { c.ingest.truth_file = trim(v); },
         [](const PipelineConfig& c) { return c.ingest.truth_file; }},
        {{"coordination_mode", "chosen", "rules_only | model_only | model_with_rule_fallback"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) {
             try {
                 c.coordination_mode = parse_coordination_mode(trim(v));
             } catch (const Error& e) {
                 throw ConfigError(std::string(k) + ": " + e.what());
             }
         },
         [](const PipelineConfig& c) { return std::string(to_string(c.coordination_mode)); }},
        {{"prompt_style", "reported", "simple | difficult"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) {
             try {
                 c.prompt_style = parse_prompt_style(trim(v));
             } catch (const Error& e) {
                 throw ConfigError(std::string(k) + ": " + e.what());
             }
         },
         [](const PipelineConfig& c) { return std::string(to_string(c.prompt_style)); }},
        {{"sample_size", "chosen", "records shown to the text model as examples"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.sample_size = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.sample_size); }},
        {{"custom_rule", "chosen", "extra rule 'regex => replacement'; repeatable"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) {
             try {
                 parse_custom_rule(trim(v), c.custom_rules.size());
             } catch (const Error& e) {
                 throw ConfigError(std::string(k) + ": " + e.what());
             }
             c.custom_rules.push_back(trim(v));
         },
         [](const PipelineConfig& c) {
             std::string out;
             for (const auto& r : c.custom_rules) out += (out.empty() ? "" : "; ") + r;
             return out;
         }},
        {{"tm_endpoint", "chosen", "chat-completion URL of the text model"},
         [](PipelineConfig& c, std::string_view, std::string_view v) { c.text_model.endpoint = trim(v); },
         [](const PipelineConfig& c) { return c.text_model.endpoint; }},
        {{"tm_model", "chosen", "model name sent with each request"},
         [](PipelineConfig& c, std::string_view, std::string_view v) { c.text_model.model_name = trim(v); },
         [](const PipelineConfig& c) { return c.text_model.model_name; }},
        {{"tm_n", "reported", "completions requested per call"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.text_model.n = to_int(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.text_model.n); }},
        {{"tm_max_tokens", "reported", "output tokens per record"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.text_model.max_tokens = to_int(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.text_model.max_tokens); }},
        {{"tm_temperature", "reported", "sampling temperature"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.text_model.temperature = to_real(k, v); },
         [](const PipelineConfig& c) { return real_text(c.text_model.temperature); }},
        {{"tm_top_p", "reported", "nucleus sampling mass"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.text_model.top_p = to_real(k, v); },
         [](const PipelineConfig& c) { return real_text(c.text_model.top_p); }},
        {{"tm_batch_size", "chosen", "records per request"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.text_model.batch_size = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.text_model.batch_size); }},
        {{"tm_max_in_flight", "chosen", "concurrent requests"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.text_model.max_in_flight = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.text_model.max_in_flight); }},
        {{"tm_timeout_ms", "chosen", "per-request timeout in milliseconds"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) {
             c.text_model.timeout = std::chrono::milliseconds(to_uint(k, v));
         },
         [](const PipelineConfig& c) { return std::to_string(c.text_model.timeout.count()); }},
        {{"tm_retry_limit", "chosen", "extra attempts after a failed request"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.text_model.retry_limit = to_int(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.text_model.retry_limit); }},
        {{"tm_api_key_env", "chosen", "environment variable holding the bearer token"},
         [](PipelineConfig& c, std::string_view, std::string_view v) { c.text_model.api_key_env = trim(v); },
         [](const PipelineConfig& c) { return c.text_model.api_key_env; }},
        {{"embedder", "chosen", "hashed_ngram | external_service"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) {
             const auto s = trim(v);
             if (s == "hashed_ngram") c.embedder.kind = EmbedderKind::hashed_ngram;
             else if (s == "external_service") c.embedder.kind = EmbedderKind::external_service;
             else throw ConfigError(std::string(k) + ": unknown embedder '" + s + "'");
         },
         [](const PipelineConfig& c) {
             return std::string(c.embedder.kind == EmbedderKind::hashed_ngram ? "hashed_ngram" : "external_service");
         }},
        {{"embed_endpoint", "chosen", "URL of the external embedding service"},
         [](PipelineConfig& c, std::string_view, std::string_view v) {
             const auto s = trim(v);
             if (s.empty()) c.embedder.service_endpoint.reset();
             else c.embedder.service_endpoint = s;
         },
         [](const PipelineConfig& c) { return c.embedder.service_endpoint.value_or(""); }},
        {{"embed_dim", "chosen", "embedding dimension"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.embedder.dimension = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.embedder.dimension); }},
        {{"embed_max_seq_length", "reported", "tokens kept per record before embedding"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.embedder.max_seq_length = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.embedder.max_seq_length); }},
        {{"embed_batch_size", "reported", "records per embedding batch"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.embedder.batch_size = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.embedder.batch_size); }},
        {{"embed_ngram", "chosen", "character n-gram length of the built-in embedder"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.embedder.ngram_n = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.embedder.ngram_n); }},
        {{"embed_skip_structure", "chosen", "built-in embedder ignores field labels and separators"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.embedder.skip_structure = to_bool(k, v); },
         [](const PipelineConfig& c) { return std::string(c.embedder.skip_structure ? "true" : "false"); }},
        {{"embed_threads", "chosen", "embedding worker threads; 0 = all cores"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.embedder.threads = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.embedder.threads); }},
        {{"lambda", "reported", "cosine-distance ceiling for a mutual top-1 pair"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.tcem.lambda = to_real(k, v); },
         [](const PipelineConfig& c) { return real_text(c.tcem.lambda); }},
        {{"hnsw_m", "chosen", "HNSW links per node on upper layers (2x on layer 0)"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.tcem.ann.M = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.tcem.ann.M); }},
        {{"hnsw_ef_construction", "chosen", "HNSW candidate list size while building"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.tcem.ann.ef_construction = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.tcem.ann.ef_construction); }},
        {{"hnsw_ef_search", "chosen", "HNSW candidate list size while querying"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.tcem.ann.ef_search = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.tcem.ann.ef_search); }},
        {{"hnsw_level_lambda", "chosen", "level multiplier; 0 selects 1/ln(M)"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.tcem.ann.level_lambda = to_real(k, v); },
         [](const PipelineConfig& c) { return real_text(c.tcem.ann.level_lambda); }},
        {{"exact_threshold", "chosen", "tables smaller than this are searched exhaustively"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.tcem.exact_threshold = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.tcem.exact_threshold); }},
        {{"d", "chosen", "DPM neighbourhood radius (cosine distance)"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.dpm.d = to_real(k, v); },
         [](const PipelineConfig& c) { return real_text(c.dpm.d); }},
        {{"rho_min", "reported", "neighbourhood size (self included) that makes a core entity"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.dpm.rho_min = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.dpm.rho_min); }},
        {{"disable", "chosen", "comma list of stages to bypass: mplac, dpm"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) {
             try {
                 const auto set = parse_ablation(trim(v));
                 c.disable_mplac = set.mplac;
                 c.disable_dpm = set.dpm;
             } catch (const Error& e) {
                 throw ConfigError(std::string(k) + ": " + e.what());
             }
         },
         [](const PipelineConfig& c) {
             std::string out = c.disable_mplac ? "mplac" : "";
             if (c.disable_dpm) out += out.empty() ? "dpm" : ",dpm";
             return out;
         }},
        {{"evaluate", "chosen", "score against ground truth when present"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.evaluate = to_bool(k, v); },
         [](const PipelineConfig& c) { return std::string(c.evaluate ? "true" : "false"); }},
        {{"seed", "chosen", "seed for prompt sampling and HNSW level draws"},
         [](PipelineConfig& c, std::string_view k, std::string_view v) { c.seed = to_uint(k, v); },
         [](const PipelineConfig& c) { return std::to_string(c.seed); }},
    };
    return table;
}

const KeySpec& find_key(std::string_view key) {
    const auto k = normalize_key(key);
    for (const auto& spec : key_table()) {
        if (spec.doc.name == k) return spec;
    }
    throw ConfigError("unknown config key '" + k + "'");
}

}  // namespace

void PipelineConfig::validate() const {
    try {
        if (!text_model.endpoint.empty()) text_model.validate();
        if (coordination_mode != CoordinationMode::rules_only && !disable_mplac && text_model.endpoint.empty()) {
            throw Error("coordination mode " + std::string(to_string(coordination_mode)) + " needs tm_endpoint");
        }
        embedder.validate();
        tcem.validate();
        dpm.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
}

CoordinationOptions PipelineConfig::coordination_options() const {
    CoordinationOptions o;
    o.mode = coordination_mode;
    o.prompt = PromptTemplate::for_style(prompt_style);
    for (std::size_t i = 0; i < custom_rules.size(); ++i) o.rules.push_back(parse_custom_rule(custom_rules[i], i));
    if (!text_model.endpoint.empty()) o.text_model = text_model;
    o.sample_size = sample_size;
    o.seed = seed;
    return o;
}

TcemParams PipelineConfig::tcem_params() const {
    TcemParams p = tcem;
    p.ann.seed = seed;
    return p;
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> out;
        for (const auto& spec : key_table()) out.push_back(spec.doc);
        return out;
    }();
    return keys;
}

void set_option(PipelineConfig& config, std::string_view key, std::string_view value) {
    const auto& spec = find_key(key);
    spec.set(config, spec.doc.name, value);
}

std::string get_option(const PipelineConfig& config, std::string_view key) { return find_key(key).get(config); }

PipelineConfig parse_config(std::string_view text, PipelineConfig base) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        try {
            set_option(base, line.substr(0, eq), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return base;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_config(buf.str(), std::move(base));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string dump_config(const PipelineConfig& config) {
    std::string out;
    for (const auto& spec : key_table()) {
        if (spec.doc.name == "custom_rule") {
            for (const auto& r : config.custom_rules) out += "custom_rule = " + r + "\n";
            continue;
        }
        out += spec.doc.name + " = " + spec.get(config) + "\n";
    }
    return out;
}

}  // namespace polymatch
