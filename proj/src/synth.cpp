#include "polymatch/synth.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <string>
#include <span>
#include <vector>

#include "polymatch/coordination.hpp"
#include "polymatch/rng.hpp"

namespace polymatch {

void SynthSpec::validate() const {
    if (n_tables < 2) throw Error("synthetic dataset needs n_tables >= 2");
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) throw Error(std::string(name) + " must be in [0, 1]");
    };
    prob(presence_prob, "presence_prob");
    prob(corruption.typo_rate, "typo_rate");
    prob(corruption.unit_mangle_rate, "unit_mangle_rate");
    prob(corruption.time_format_rate, "time_format_rate");
    prob(confusion_rate, "confusion_rate");
}

namespace {

// Syllables for pseudo-words: large vocabulary, pronounceable, no real-word bias.
constexpr std::array kOnsets = {"b", "br", "c", "ch", "d", "dr", "f", "g", "gr", "h", "j", "k", "l", "m",
                                "n", "p", "pr", "r", "s", "sh", "st", "t", "tr", "v", "w", "z"};
constexpr std::array kVowels = {"a", "e", "i", "o", "u", "ai", "ea", "io", "ou", "y"};
constexpr std::array kCodas = {"", "", "", "n", "r", "l", "s", "m", "x", "nd", "rk", "st"};

struct Language {
    const char* name;
    std::array<const char*, 2> short_forms;
};
constexpr std::array kLanguages = {
    Language{"English", {"En", "Eng"}},   Language{"French", {"Fr", "Fre"}},   Language{"German", {"De", "Ger"}},
    Language{"Spanish", {"Es", "Spa"}},   Language{"Italian", {"It", "Ita"}},  Language{"Portuguese", {"Pt", "Por"}},
    Language{"Japanese", {"Ja", "Jpn"}},  Language{"Dutch", {"Nl", "Nld"}},
};

struct Entity {
    std::string title, artist, album;
    int number = 1;
    int year = 2000;
    int length_sec = 200;
    std::size_t language = 0;
    int weight_g = 100;
    int capacity_ml = 500;
};

std::string pseudo_word(Rng& rng) {
    std::string w;
    const std::size_t syllables = 2 + static_cast<std::size_t>(rng.below(2));
    for (std::size_t i = 0; i < syllables; ++i) {
        w += rng.pick(kOnsets);
        w += rng.pick(kVowels);
        w += rng.pick(kCodas);
    }
    w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    return w;
}

std::string words(Rng& rng, std::size_t lo, std::size_t hi) {
    const std::size_t n = lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out.push_back(' ');
        out += pseudo_word(rng);
    }
    return out;
}

Entity fresh_entity(Rng& rng) {
    Entity e;
    e.title = words(rng, 1, 2);
    e.artist = words(rng, 1, 1);
    e.album = words(rng, 1, 1);
    e.number = 1 + static_cast<int>(rng.below(20));
    e.year = 1960 + static_cast<int>(rng.below(65));
    e.length_sec = 90 + static_cast<int>(rng.below(511));
    e.language = static_cast<std::size_t>(rng.below(kLanguages.size()));
    e.weight_g = 50 + 5 * static_cast<int>(rng.below(391));
    e.capacity_ml = 250 + 50 * static_cast<int>(rng.below(56));
    return e;
}

Entity sibling_of(const Entity& base, Rng& rng) {
    Entity e = base;
    e.title = words(rng, 1, 2);
    e.number = 1 + static_cast<int>(rng.below(20));
    e.length_sec = 90 + static_cast<int>(rng.below(511));
    return e;
}

// Each letter is independently edited with probability `rate`: substituted,
// dropped, doubled or swapped with its right neighbour.
std::string typos(const std::string& s, double rate, Rng& rng) {
    if (rate <= 0.0) return s;
    std::string out;
    out.reserve(s.size() + 4);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char ch = s[i];
        if (!std::isalpha(static_cast<unsigned char>(ch)) || !rng.chance(rate)) {
            out.push_back(ch);
            continue;
        }
        switch (rng.below(4)) {
            case 0: out.push_back(static_cast<char>('a' + rng.below(26))); break;
            case 1: break;
            case 2: out.push_back(ch); out.push_back(ch); break;
            default:
                if (i + 1 < s.size()) {
                    out.push_back(s[i + 1]);
                    out.push_back(ch);
                    ++i;
                } else {
                    out.push_back(ch);
                }
        }
    }
    return out.empty() ? s : out;
}

std::string clock(int seconds) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d:%02d", seconds / 60, seconds % 60);
    return buf;
}

std::vector<std::string> render(const Entity& e, const Corruption& c, Rng& rng) {
    std::string title = e.title, artist = e.artist, album = e.album;
    title = typos(title, c.typo_rate, rng);
    artist = typos(artist, c.typo_rate, rng);
    album = typos(album, c.typo_rate, rng);

    // One draw per category per record: a source that writes lengths in
    // milliseconds also writes short years, not just one of the two.
    const bool time_mangled = rng.chance(c.time_format_rate);
    const bool unit_mangled = rng.chance(c.unit_mangle_rate);

    std::string number = std::to_string(e.number);
    std::string year = std::to_string(e.year);
    std::string length = clock(e.length_sec);
    if (time_mangled) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%02d", e.number);
        number = buf;
        year = year.substr(2);
        switch (rng.below(3)) {
            case 0: length = std::to_string(e.length_sec * 1000); break;
            case 1: length = std::to_string(e.length_sec); break;
            default:
                std::snprintf(buf, sizeof buf, "%.3f", e.length_sec / 60.0);
                length = buf;
        }
    }
    std::string language = kLanguages[e.language].name;
    std::string weight = std::to_string(e.weight_g) + "g";
    std::string capacity = format_number(e.capacity_ml / 1000.0) + "L";
    if (unit_mangled) {
        language = kLanguages[e.language].short_forms[rng.below(2)];
        weight = rng.chance(0.8) ? format_number(e.weight_g / 1000.0) + "kg" : std::to_string(e.weight_g * 1000) + "mg";
        capacity = rng.chance(0.8) ? std::to_string(e.capacity_ml) + "ml" : format_number(e.capacity_ml / 10.0) + "cl";
    }
    return {title, artist, album, number, year, length, language, weight, capacity};
}

}  // namespace

Dataset generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    std::vector<Entity> entities;
    entities.reserve(spec.n_entities);
    for (std::size_t i = 0; i < spec.n_entities; ++i) {
        if (i > 0 && rng.chance(spec.confusion_rate)) {
            entities.push_back(sibling_of(entities[static_cast<std::size_t>(rng.below(i))], rng));
        } else {
            entities.push_back(fresh_entity(rng));
        }
    }

    const std::vector<std::string> columns = {"tid",    "title", "artist",   "album",  "number",
                                              "year",   "length", "language", "weight", "capacity"};
    Dataset ds;
    std::vector<std::vector<EntityRef>> appearances(spec.n_entities);
    for (std::size_t t = 0; t < spec.n_tables; ++t) {
        SourceTable table;
        table.table_id = static_cast<std::uint32_t>(t);
        char name[32];
        std::snprintf(name, sizeof name, "source_%02zu", t);
        table.name = name;
        table.columns = columns;

        std::vector<std::size_t> present;
        for (std::size_t e = 0; e < spec.n_entities; ++e) {
            if (rng.chance(spec.presence_prob)) present.push_back(e);
        }
        rng.shuffle(std::span<std::size_t>(present));
        for (std::size_t row = 0; row < present.size(); ++row) {
            auto values = render(entities[present[row]], spec.corruption, rng);
            values.insert(values.begin(), "s" + std::to_string(t) + "-" + std::to_string(rng.below(1000000000)));
            table.rows.push_back(Record{std::move(values), static_cast<std::uint32_t>(row)});
            appearances[present[row]].push_back({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(row)});
        }
        ds.tables.push_back(std::move(table));
    }

    std::vector<Cluster> truth;
    for (auto& refs : appearances) {
        if (refs.size() >= 2) truth.emplace_back(std::move(refs));
    }
    std::sort(truth.begin(), truth.end());
    ds.ground_truth = std::move(truth);
    return ds;
}

}  // namespace polymatch
