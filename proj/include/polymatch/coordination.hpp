#pragma once
// Attribute coordination: rewrite each record so that equivalent attribute
// values (units, durations, years, abbreviations, ordinals) read the same
// across sources. Two back ends: a deterministic token rule engine and an
// external text model driven by a rendered prompt.

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "polymatch/error.hpp"
#include "polymatch/tables.hpp"

namespace polymatch {

enum class RuleCategory { time, year, abbreviation, ordinal, weight, capacity, custom };

std::string_view to_string(RuleCategory c);

// When a rule may fire on a field.
enum class RuleScope {
    any_field,       // explicit syntax (units): fires regardless of column
    hinted_or_bare,  // column name matches a hint, or the field has no column name
    hinted_only,     // column name must match a hint
};

struct NormalizationRule {
    std::string rule_id;
    RuleCategory category = RuleCategory::custom;
    std::string instruction;               // shown to the text model
    std::vector<std::string> examples;     // "input->output" strings for prompts
    std::vector<std::string> column_hints; // lower-case words matched against column names
    RuleScope scope = RuleScope::any_field;
    // Returns the rewritten token, or nullopt when the token does not match.
    // Must be idempotent: rewrite(rewrite(t)) == rewrite(t) (or nullopt).
    std::function<std::optional<std::string>(std::string_view token, bool hinted)> rewrite;
};

// The built-in rule set: time, year, abbreviation, ordinal, weight, capacity.
std::vector<NormalizationRule> builtin_rules();

// A user rule: whole-token ECMAScript regex match replaced by `replacement`
// (supports $1.. back-references). Fires on every field.
NormalizationRule make_custom_rule(std::string rule_id, const std::string& pattern, std::string replacement);

// Parses "pattern => replacement" as used in config files.
NormalizationRule parse_custom_rule(std::string_view spec, std::size_t index);

// Applies each rule in order to every whitespace-delimited token of every
// field in a serialized record ("col: v | col: v"). Unmatched tokens pass
// through unchanged.
std::string apply_rules(std::string_view record_text, const std::vector<NormalizationRule>& rules);

// Numeric formatting shared by the unit rules: shortest of up to 12
// significant digits, no trailing zeros.
std::string format_number(double value);

enum class PromptStyle { simple, difficult };

std::string_view to_string(PromptStyle s);
PromptStyle parse_prompt_style(std::string_view s);

struct PromptTemplate {
    PromptStyle style = PromptStyle::simple;
    std::string system_text;      // placeholders: {rules}, {samples}
    std::string per_record_text;  // placeholder: {record}

    static PromptTemplate simple();
    static PromptTemplate difficult();
    static PromptTemplate for_style(PromptStyle style);
};

class PromptError : public Error {
public:
    using Error::Error;
};

// Renders the system prompt. simple style lists only rule categories;
// difficult style enumerates each rule's instruction and examples.
std::string build_prompt(const PromptTemplate& tmpl, const std::vector<NormalizationRule>& rules,
                         const std::vector<std::string>& samples);

std::string render_record(const PromptTemplate& tmpl, std::string_view record_text);

struct TextModelConfig {
    std::string endpoint;  // e.g. http://127.0.0.1:8000/v1/chat/completions
    std::string model_name;
    int n = 1;
    int max_tokens = 64;  // per record; a batch request asks for max_tokens * batch length
    double temperature = 0.0;
    double top_p = 0.95;
    std::size_t batch_size = 1;
    std::size_t max_in_flight = 4;
    std::chrono::milliseconds timeout{30000};
    int retry_limit = 2;  // extra attempts after the first
    std::string api_key_env = "POLYMATCH_API_KEY";

    void validate() const;
};

struct ChatMessage {
    std::string role;
    std::string content;
};

// Anything that turns a chat transcript into the first choice's text.
class TextModel {
public:
    virtual ~TextModel() = default;
    virtual std::string complete(const std::vector<ChatMessage>& messages, int max_tokens) = 0;
};

// JSON-over-HTTP chat-completion client. Bearer token read from
// config.api_key_env when set. Safe to call from several threads.
class HttpTextModel : public TextModel {
public:
    explicit HttpTextModel(TextModelConfig config);
    std::string complete(const std::vector<ChatMessage>& messages, int max_tokens) override;

    // Request body for the given transcript (exposed for tests).
    std::string request_body(const std::vector<ChatMessage>& messages, int max_tokens) const;
    // Extracts the first choice's text from a response body.
    static std::string parse_response(const std::string& body);

private:
    TextModelConfig config_;
};

enum class CoordinationMode { rules_only, model_only, model_with_rule_fallback };

std::string_view to_string(CoordinationMode m);
CoordinationMode parse_coordination_mode(std::string_view s);

struct CoordinationOptions {
    CoordinationMode mode = CoordinationMode::rules_only;
    PromptTemplate prompt = PromptTemplate::simple();
    std::vector<NormalizationRule> rules = builtin_rules();
    std::optional<TextModelConfig> text_model;
    std::size_t sample_size = 8;
    std::uint64_t seed = 0;
};

struct RecordFailure {
    EntityRef ref;
    std::string message;
};

class CoordinationError : public Error {
public:
    CoordinationError(const std::string& what, std::vector<RecordFailure> failures)
        : Error(what), failures_(std::move(failures)) {}
    const std::vector<RecordFailure>& failures() const { return failures_; }

private:
    std::vector<RecordFailure> failures_;
};

// Input dataset plus one normalized text per record, same addressing.
struct CoordinatedDataset {
    Dataset dataset;
    std::vector<std::vector<std::string>> texts;  // [table][row]
    std::size_t model_records = 0;    // records normalized by the text model
    std::size_t fallback_records = 0; // records normalized by rules after a model failure

    const std::string& text(EntityRef ref) const { return texts.at(ref.table).at(ref.row); }
    std::size_t record_count() const { return dataset.record_count(); }
};

// Serialized records with no normalization (coordination bypassed).
CoordinatedDataset passthrough(const Dataset& dataset);

// `model` overrides the HTTP client built from options.text_model (tests
// pass stubs). Model modes require either.
CoordinatedDataset coordinate(const Dataset& dataset, const CoordinationOptions& options,
                              TextModel* model = nullptr);

}  // namespace polymatch
