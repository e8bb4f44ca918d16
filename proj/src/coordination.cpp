#include "polymatch/coordination.hpp"

#include <algorithm>
#include <cstdlib>
#include <future>
#include <sstream>

#include "httplib.h"
#include "json.hpp"

namespace polymatch {

using json = nlohmann::json;

std::string_view to_string(PromptStyle s) { return s == PromptStyle::simple ? "simple" : "difficult"; }

PromptStyle parse_prompt_style(std::string_view s) {
    if (s == "simple") return PromptStyle::simple;
    if (s == "difficult") return PromptStyle::difficult;
    throw Error("unknown prompt style '" + std::string(s) + "' (simple|difficult)");
}

std::string_view to_string(CoordinationMode m) {
    switch (m) {
        case CoordinationMode::rules_only: return "rules_only";
        case CoordinationMode::model_only: return "model_only";
        case CoordinationMode::model_with_rule_fallback: return "model_with_rule_fallback";
    }
    return "rules_only";
}

CoordinationMode parse_coordination_mode(std::string_view s) {
    if (s == "rules_only") return CoordinationMode::rules_only;
    if (s == "model_only") return CoordinationMode::model_only;
    if (s == "model_with_rule_fallback") return CoordinationMode::model_with_rule_fallback;
    throw Error("unknown coordination mode '" + std::string(s) +
                "' (rules_only|model_only|model_with_rule_fallback)");
}

// ---------------------------------------------------------------------------
// Prompts

PromptTemplate PromptTemplate::simple() {
    return {PromptStyle::simple,
            "You normalize product and media records so that equivalent values are written the same way.\n"
            "Focus on these kinds of values: {rules}.\n"
            "Records look like this:\n{samples}\n"
            "For every input line, output exactly one line: the full record with the same fields in the "
            "same order and normalized values. Do not add commentary.",
            "{record}"};
}

PromptTemplate PromptTemplate::difficult() {
    return {PromptStyle::difficult,
            "You normalize heterogeneous records collected from several sources so that the same entity "
            "is written identically everywhere.\n"
            "Apply every rule below to the attribute values:\n{rules}\n"
            "Sample records from the dataset:\n{samples}\n"
            "Keep field names and field order unchanged. Only rewrite values a rule applies to. "
            "For every input line, output exactly one line holding the full normalized record. "
            "Do not add commentary.",
            "{record}"};
}

PromptTemplate PromptTemplate::for_style(PromptStyle style) {
    return style == PromptStyle::simple ? simple() : difficult();
}

namespace {

// Single pass over the template; substituted values are never rescanned.
std::string render(std::string_view tmpl, const std::vector<std::pair<std::string_view, std::string_view>>& values) {
    std::string out;
    std::size_t i = 0;
    while (i < tmpl.size()) {
        const char c = tmpl[i];
        if (c != '{') {
            out.push_back(c);
            ++i;
            continue;
        }
        const auto close = tmpl.find('}', i);
        if (close == std::string_view::npos) {
            out.push_back(c);
            ++i;
            continue;
        }
        const auto name = tmpl.substr(i + 1, close - i - 1);
        const bool identifier = !name.empty() && std::all_of(name.begin(), name.end(), [](unsigned char ch) {
            return std::isalnum(ch) || ch == '_';
        });
        if (!identifier) {
            out.push_back(c);
            ++i;
            continue;
        }
        auto it = std::find_if(values.begin(), values.end(), [&](const auto& kv) { return kv.first == name; });
        if (it == values.end()) throw PromptError("unresolved placeholder {" + std::string(name) + "}");
        out += it->second;
        i = close + 1;
    }
    return out;
}

}  // namespace

std::string build_prompt(const PromptTemplate& tmpl, const std::vector<NormalizationRule>& rules,
                         const std::vector<std::string>& samples) {
    if (samples.empty()) throw PromptError("prompt needs at least one sample record");
    std::string rule_text;
    if (tmpl.style == PromptStyle::simple) {
        std::vector<std::string_view> seen;
        for (const auto& r : rules) {
            const auto cat = to_string(r.category);
            if (std::find(seen.begin(), seen.end(), cat) != seen.end()) continue;
            if (!seen.empty()) rule_text += ", ";
            rule_text += cat;
            seen.push_back(cat);
        }
    } else {
        for (std::size_t i = 0; i < rules.size(); ++i) {
            const auto& r = rules[i];
            if (i) rule_text += '\n';
            rule_text += std::to_string(i + 1) + ". [" + std::string(to_string(r.category)) + "] " + r.instruction;
            if (!r.examples.empty()) {
                rule_text += " (e.g. ";
                for (std::size_t e = 0; e < r.examples.size(); ++e) {
                    if (e) rule_text += ", ";
                    rule_text += r.examples[e];
                }
                rule_text += ")";
            }
        }
    }
    std::string sample_text;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (i) sample_text += '\n';
        sample_text += samples[i];
    }
    return render(tmpl.system_text, {{"rules", rule_text}, {"samples", sample_text}});
}

std::string render_record(const PromptTemplate& tmpl, std::string_view record_text) {
    return render(tmpl.per_record_text, {{"record", record_text}});
}

// ---------------------------------------------------------------------------
// HTTP gateway

void TextModelConfig::validate() const {
    if (endpoint.empty()) throw Error("text model endpoint is empty");
    if (n < 1) throw Error("text model n must be >= 1");
    if (max_tokens < 1) throw Error("text model max_tokens must be >= 1");
    if (temperature < 0.0) throw Error("text model temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw Error("text model top_p must be in (0, 1]");
    if (batch_size < 1) throw Error("text model batch_size must be >= 1");
    if (max_in_flight < 1) throw Error("text model max_in_flight must be >= 1");
    if (retry_limit < 0) throw Error("text model retry_limit must be >= 0");
}

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

static SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error("endpoint must be an http(s) URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

HttpTextModel::HttpTextModel(TextModelConfig config) : config_(std::move(config)) { config_.validate(); }

std::string HttpTextModel::request_body(const std::vector<ChatMessage>& messages, int max_tokens) const {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    json body = {{"model", config_.model_name}, {"messages", msgs},         {"n", config_.n},
                 {"max_tokens", max_tokens},     {"temperature", config_.temperature}, {"top_p", config_.top_p}};
    return body.dump();
}

std::string HttpTextModel::parse_response(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw Error(std::string("text model returned invalid JSON: ") + e.what());
    }
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
        throw Error("text model response has no choices");
    }
    const auto& first = j["choices"][0];
    if (first.contains("message") && first["message"].contains("content") && first["message"]["content"].is_string()) {
        return first["message"]["content"].get<std::string>();
    }
    if (first.contains("text") && first["text"].is_string()) return first["text"].get<std::string>();
    throw Error("text model choice carries no text");
}

std::string HttpTextModel::complete(const std::vector<ChatMessage>& messages, int max_tokens) {
    const auto url = split_url(config_.endpoint);
    httplib::Client client(url.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto res = client.Post(url.path, headers, request_body(messages, max_tokens), "application/json");
    if (!res) throw Error("text model request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error("text model returned HTTP " + std::to_string(res->status));
    return parse_response(res->body);
}

// ---------------------------------------------------------------------------
// Coordination

CoordinatedDataset passthrough(const Dataset& dataset) {
    CoordinatedDataset out;
    out.dataset = dataset;
    out.texts.resize(dataset.tables.size());
    for (const auto& t : dataset.tables) {
        auto& texts = out.texts[t.table_id];
        texts.reserve(t.rows.size());
        for (std::size_t r = 0; r < t.rows.size(); ++r) texts.push_back(serialize_record(t, r));
    }
    return out;
}

namespace {

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    while (!lines.empty() && lines.back().find_first_not_of(" \t") == std::string::npos) lines.pop_back();
    return lines;
}

struct BatchOutcome {
    std::vector<std::string> lines;  // empty on failure
    std::string error;
};

BatchOutcome run_batch(TextModel& model, const std::string& system_prompt, const PromptTemplate& tmpl,
                       const std::vector<const std::string*>& inputs, const TextModelConfig& cfg) {
    std::string user;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (i) user.push_back('\n');
        user += render_record(tmpl, *inputs[i]);
    }
    const std::vector<ChatMessage> messages = {{"system", system_prompt}, {"user", user}};
    const int budget = cfg.max_tokens * static_cast<int>(inputs.size());
    std::string last_error;
    for (int attempt = 0; attempt <= cfg.retry_limit; ++attempt) {
        try {
            auto lines = split_lines(model.complete(messages, budget));
            if (lines.size() == inputs.size()) return {std::move(lines), {}};
            last_error = "expected " + std::to_string(inputs.size()) + " lines, got " + std::to_string(lines.size());
        } catch (const std::exception& e) {
            last_error = e.what();
        }
    }
    return {{}, "after " + std::to_string(cfg.retry_limit + 1) + " attempts: " + last_error};
}

}  // namespace

CoordinatedDataset coordinate(const Dataset& dataset, const CoordinationOptions& options, TextModel* model) {
    CoordinatedDataset out = passthrough(dataset);
    if (options.mode == CoordinationMode::rules_only) {
        for (auto& table : out.texts) {
            for (auto& text : table) text = apply_rules(text, options.rules);
        }
        return out;
    }

    if (!options.text_model) throw Error("model coordination modes need a text model configuration");
    const TextModelConfig& cfg = *options.text_model;
    cfg.validate();
    std::unique_ptr<TextModel> owned;
    if (!model) {
        owned = std::make_unique<HttpTextModel>(cfg);
        model = owned.get();
    }

    const std::size_t k = std::min(options.sample_size, dataset.record_count());
    std::vector<std::string> samples;
    for (const auto& s : sample_records(dataset, std::max<std::size_t>(k, 1), options.seed)) {
        samples.push_back(serialize_record(dataset.tables[s.ref.table], s.ref.row));
    }
    const std::string system_prompt = build_prompt(options.prompt, options.rules, samples);

    std::vector<EntityRef> refs;
    refs.reserve(dataset.record_count());
    for (const auto& t : dataset.tables) {
        for (std::uint32_t r = 0; r < t.rows.size(); ++r) refs.push_back({t.table_id, r});
    }
    const std::size_t batch = cfg.batch_size;
    const std::size_t n_batches = (refs.size() + batch - 1) / batch;
    std::vector<BatchOutcome> outcomes(n_batches);

    // Issue up to max_in_flight batches at a time; results land by batch index.
    for (std::size_t wave = 0; wave < n_batches; wave += cfg.max_in_flight) {
        std::vector<std::future<BatchOutcome>> pending;
        const std::size_t wave_end = std::min(n_batches, wave + cfg.max_in_flight);
        for (std::size_t b = wave; b < wave_end; ++b) {
            std::vector<const std::string*> inputs;
            for (std::size_t i = b * batch; i < std::min(refs.size(), (b + 1) * batch); ++i) {
                inputs.push_back(&out.text(refs[i]));
            }
            pending.push_back(std::async(std::launch::async, [&, inputs = std::move(inputs)] {
                return run_batch(*model, system_prompt, options.prompt, inputs, cfg);
            }));
        }
        for (std::size_t b = wave; b < wave_end; ++b) outcomes[b] = pending[b - wave].get();
    }

    std::vector<RecordFailure> failures;
    for (std::size_t b = 0; b < n_batches; ++b) {
        const auto& outcome = outcomes[b];
        for (std::size_t i = b * batch; i < std::min(refs.size(), (b + 1) * batch); ++i) {
            auto& text = out.texts[refs[i].table][refs[i].row];
            if (outcome.error.empty()) {
                text = outcome.lines[i - b * batch];
                ++out.model_records;
            } else if (options.mode == CoordinationMode::model_with_rule_fallback) {
                text = apply_rules(text, options.rules);
                ++out.fallback_records;
            } else {
                failures.push_back({refs[i], outcome.error});
            }
        }
    }
    if (!failures.empty()) {
        const std::string what = "text model failed for " + std::to_string(failures.size()) + " of " +
                                 std::to_string(refs.size()) + " records; first: " + failures.front().message;
        throw CoordinationError(what, std::move(failures));
    }
    return out;
}

}  // namespace polymatch
