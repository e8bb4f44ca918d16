// Token-level normalization rules.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <regex>

#include "polymatch/coordination.hpp"

namespace polymatch {

std::string_view to_string(RuleCategory c) {
    switch (c) {
        case RuleCategory::time: return "time";
        case RuleCategory::year: return "year";
        case RuleCategory::abbreviation: return "abbreviation";
        case RuleCategory::ordinal: return "ordinal";
        case RuleCategory::weight: return "weight";
        case RuleCategory::capacity: return "capacity";
        case RuleCategory::custom: return "custom";
    }
    return "custom";
}

std::string format_number(double value) {
    if (value == 0.0) return "0";
    const int magnitude = static_cast<int>(std::floor(std::log10(std::fabs(value))));
    const int decimals = std::clamp(11 - magnitude, 0, 15);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
    std::string s(buf);
    if (s.find('.') != std::string::npos) {
        while (s.back() == '0') s.pop_back();
        if (s.back() == '.') s.pop_back();
    }
    if (s == "-0") s = "0";
    return s;
}

namespace {

bool all_digits(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

// Length of the leading "123", "1.5" or ".5" numeral (no sign, no exponent),
// or 0 when the text does not start with one.
std::size_t numeral_length(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t int_digits = i;
    if (i < s.size() && s[i] == '.') {
        std::size_t j = i + 1;
        while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i + 1) return j;
    }
    return int_digits;
}

bool is_decimal(std::string_view s) {
    const auto dot = s.find('.');
    return dot != std::string_view::npos && dot > 0 && numeral_length(s) == s.size();
}

// Parses m:ss, mm:ss, mmm:ss or h:mm:ss into seconds.
std::optional<long long> parse_clock(std::string_view s) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(':', start);
        parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    if (parts.size() < 2 || parts.size() > 3) return std::nullopt;
    const std::size_t lead_max = parts.size() == 2 ? 3 : 2;
    if (!all_digits(parts[0]) || parts[0].size() > lead_max) return std::nullopt;
    long long total = std::stoll(std::string(parts[0]));
    for (std::size_t i = 1; i < parts.size(); ++i) {
        if (parts[i].size() != 2 || !all_digits(parts[i]) || parts[i][0] > '5') return std::nullopt;
        total = total * 60 + std::stoll(std::string(parts[i]));
    }
    return total;
}

std::optional<std::string> rewrite_duration(std::string_view tok, bool hinted) {
    if (auto secs = parse_clock(tok)) return std::to_string(*secs) + "sec";
    if (all_digits(tok) && tok.size() <= 15) {
        const long long v = std::stoll(std::string(tok));
        if (v >= 10000) return std::to_string(std::llround(static_cast<double>(v) / 1000.0)) + "sec";  // milliseconds
        if (hinted) return std::to_string(v) + "sec";
        return std::nullopt;
    }
    if (is_decimal(tok)) {
        return std::to_string(std::llround(std::stod(std::string(tok)) * 60.0)) + "sec";  // decimal minutes
    }
    if (hinted) {
        const std::size_t n = numeral_length(tok);
        if (n > 0 && n < tok.size() && all_digits(tok.substr(0, n))) {
            const auto unit = tok.substr(n);
            if (unit == "s" || unit == "secs" || unit == "second" || unit == "seconds") {
                return std::string(tok.substr(0, n)) + "sec";
            }
        }
    }
    return std::nullopt;
}

// Two-digit years pivot at 30: 00-29 -> 20xx, 30-99 -> 19xx.
std::optional<std::string> rewrite_year(std::string_view tok, bool /*hinted*/) {
    std::string_view t = tok;
    if (t.size() == 3 && (t[0] == '\'' || t[0] == '`')) t.remove_prefix(1);
    if (t.size() != 2 || !all_digits(t)) return std::nullopt;
    const int yy = (t[0] - '0') * 10 + (t[1] - '0');
    return std::to_string(yy < 30 ? 2000 + yy : 1900 + yy);
}

std::optional<std::string> rewrite_language(std::string_view tok, bool hinted) {
    static const std::map<std::string, std::string> names = {
        {"en", "English"},  {"eng", "English"},    {"fr", "French"},   {"fre", "French"},
        {"fra", "French"},  {"de", "German"},      {"ger", "German"},  {"deu", "German"},
        {"es", "Spanish"},  {"spa", "Spanish"},    {"it", "Italian"},  {"ita", "Italian"},
        {"pt", "Portuguese"}, {"por", "Portuguese"}, {"nl", "Dutch"},   {"nld", "Dutch"},
        {"ru", "Russian"},  {"rus", "Russian"},    {"ja", "Japanese"}, {"jpn", "Japanese"},
        {"zh", "Chinese"},  {"chi", "Chinese"},    {"zho", "Chinese"}, {"ko", "Korean"},
        {"kor", "Korean"},
    };
    if (tok.empty() || tok.size() > 3) return std::nullopt;
    // Outside a language column only capitalised codes ("En", "FR") count, so
    // ordinary lower-case words such as "it" survive.
    if (!hinted && !std::isupper(static_cast<unsigned char>(tok[0]))) return std::nullopt;
    std::string key(tok);
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    auto it = names.find(key);
    if (it == names.end()) return std::nullopt;
    return it->second;
}

std::optional<std::string> rewrite_ordinal(std::string_view tok, bool /*hinted*/) {
    if (tok.size() > 3 || !all_digits(tok)) return std::nullopt;
    const int v = std::stoi(std::string(tok));
    const char* suffix = "th";
    if (v % 100 < 11 || v % 100 > 13) {
        switch (v % 10) {
            case 1: suffix = "st"; break;
            case 2: suffix = "nd"; break;
            case 3: suffix = "rd"; break;
            default: break;
        }
    }
    return std::to_string(v) + suffix;
}

struct UnitMatch {
    double value;
    std::string unit;
};

std::optional<UnitMatch> split_quantity(std::string_view tok) {
    const std::size_t n = numeral_length(tok);
    if (n == 0 || n == tok.size()) return std::nullopt;
    const auto unit = tok.substr(n);
    if (!std::all_of(unit.begin(), unit.end(), [](unsigned char c) { return std::isalpha(c); })) {
        return std::nullopt;
    }
    return UnitMatch{std::stod(std::string(tok.substr(0, n))), std::string(unit)};
}

std::optional<std::string> rewrite_weight(std::string_view tok, bool /*hinted*/) {
    static const std::map<std::string, double> grams_per = {
        {"kg", 1000.0}, {"Kg", 1000.0}, {"KG", 1000.0}, {"mg", 0.001},
        {"lb", 453.59237}, {"lbs", 453.59237}, {"oz", 28.349523125},
    };
    auto q = split_quantity(tok);
    if (!q) return std::nullopt;
    auto it = grams_per.find(q->unit);
    if (it == grams_per.end()) return std::nullopt;
    return format_number(q->value * it->second) + "g";
}

std::optional<std::string> rewrite_capacity(std::string_view tok, bool /*hinted*/) {
    static const std::map<std::string, double> litres_per = {
        {"ml", 0.001}, {"mL", 0.001}, {"ML", 0.001}, {"cl", 0.01}, {"cL", 0.01}, {"l", 1.0},
    };
    auto q = split_quantity(tok);
    if (!q) return std::nullopt;
    auto it = litres_per.find(q->unit);
    if (it == litres_per.end()) return std::nullopt;
    return format_number(q->value * it->second) + "L";
}

}  // namespace

std::vector<NormalizationRule> builtin_rules() {
    std::vector<NormalizationRule> rules;
    rules.push_back({"time.seconds", RuleCategory::time, "Convert all durations to seconds",
                     {"02:12->132sec", "137000->137sec", "2.283->137sec"},
                     {"length", "duration", "time", "runtime", "len"},
                     RuleScope::hinted_or_bare, rewrite_duration});
    rules.push_back({"year.four_digit", RuleCategory::year, "Convert two-digit years to four-digit years",
                     {"05->2005", "95->1995"},
                     {"year", "yr"},
                     RuleScope::hinted_only, rewrite_year});
    rules.push_back({"abbreviation.expand", RuleCategory::abbreviation, "Expand and complete abbreviations.",
                     {"En->English", "Eng->English", "Fr->French"},
                     {"language", "lang"},
                     RuleScope::hinted_or_bare, rewrite_language});
    rules.push_back({"ordinal.suffix", RuleCategory::ordinal, "Convert numeric values to ordinal format",
                     {"01->1st", "2->2nd"},
                     {"number", "no", "num", "rank", "track", "position", "pos", "edition", "ordinal"},
                     RuleScope::hinted_or_bare, rewrite_ordinal});
    rules.push_back({"weight.grams", RuleCategory::weight, "Unify the weight in units of g",
                     {"0.001kg->1g"}, {}, RuleScope::any_field, rewrite_weight});
    rules.push_back({"capacity.litres", RuleCategory::capacity, "Unify the capacity in units of L",
                     {"2500ml->2.5L"}, {}, RuleScope::any_field, rewrite_capacity});
    return rules;
}

NormalizationRule make_custom_rule(std::string rule_id, const std::string& pattern, std::string replacement) {
    std::regex re;
    try {
        re = std::regex(pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
        throw Error("custom rule " + rule_id + ": bad pattern '" + pattern + "': " + e.what());
    }
    NormalizationRule rule;
    rule.rule_id = std::move(rule_id);
    rule.category = RuleCategory::custom;
    rule.instruction = "Rewrite values matching " + pattern + " as " + replacement;
    rule.examples = {};
    rule.scope = RuleScope::any_field;
    rule.rewrite = [re, replacement](std::string_view tok, bool) -> std::optional<std::string> {
        const std::string t(tok);
        if (!std::regex_match(t, re)) return std::nullopt;
        std::string out = std::regex_replace(t, re, replacement, std::regex_constants::format_first_only);
        if (out == t) return std::nullopt;
        return out;
    };
    return rule;
}

NormalizationRule parse_custom_rule(std::string_view spec, std::size_t index) {
    const auto arrow = spec.find("=>");
    if (arrow == std::string_view::npos) throw Error("custom rule must read 'pattern => replacement'");
    auto trim = [](std::string_view s) {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
        return std::string(s);
    };
    return make_custom_rule("custom." + std::to_string(index), trim(spec.substr(0, arrow)),
                            trim(spec.substr(arrow + 2)));
}

namespace {

std::vector<std::string> column_words(std::string_view column) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : column) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

bool matches_hint(const std::vector<std::string>& words, const std::vector<std::string>& hints) {
    for (const auto& w : words) {
        for (const auto& h : hints) {
            if (w == h || w == h + "s") return true;
        }
    }
    return false;
}

constexpr std::string_view kLeadPunct = "([{\"'";
constexpr std::string_view kTrailPunct = ",;)]}\"'!?";

std::string rewrite_value(std::string_view value, const std::vector<NormalizationRule>& rules,
                          const std::optional<std::vector<std::string>>& column) {
    // Split on single spaces so the join restores the original spacing.
    std::vector<std::string> tokens;
    std::size_t start = 0;
    while (true) {
        const auto pos = value.find(' ', start);
        tokens.emplace_back(value.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }

    for (const auto& rule : rules) {
        const bool hinted = column && matches_hint(*column, rule.column_hints);
        bool eligible = false;
        switch (rule.scope) {
            case RuleScope::any_field: eligible = true; break;
            case RuleScope::hinted_or_bare: eligible = hinted || !column; break;
            case RuleScope::hinted_only: eligible = hinted; break;
        }
        if (!eligible) continue;
        for (auto& tok : tokens) {
            std::string_view core = tok;
            std::size_t lead = 0;
            while (lead < core.size() && kLeadPunct.find(core[lead]) != std::string_view::npos) ++lead;
            core.remove_prefix(lead);
            std::size_t trail = 0;
            while (trail < core.size() && kTrailPunct.find(core[core.size() - 1 - trail]) != std::string_view::npos) ++trail;
            core.remove_suffix(trail);
            if (core.empty()) continue;
            auto out = rule.rewrite(core, hinted);
            if (out) tok = tok.substr(0, lead) + *out + tok.substr(tok.size() - trail);
        }
    }

    std::string joined;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) joined.push_back(' ');
        joined += tokens[i];
    }
    return joined;
}

}  // namespace

std::string apply_rules(std::string_view record_text, const std::vector<NormalizationRule>& rules) {
    static constexpr std::string_view kSep = " | ";
    std::string out;
    std::size_t start = 0;
    while (true) {
        const auto pos = record_text.find(kSep, start);
        const std::string_view segment =
            record_text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
        const auto colon = segment.find(": ");
        if (colon == std::string_view::npos) {
            out += rewrite_value(segment, rules, std::nullopt);
        } else {
            const auto name = segment.substr(0, colon);
            out += name;
            out += ": ";
            out += rewrite_value(segment.substr(colon + 2), rules, column_words(name));
        }
        if (pos == std::string_view::npos) break;
        out += kSep;
        start = pos + kSep.size();
    }
    return out;
}

}  // namespace polymatch
