#pragma once
// Synthetic multi-source catalogue with planted ground truth.
//
// Every entity carries music/product-like attributes (title, artist, album,
// track number, year, length, language, weight, capacity), so each built-in
// normalization category has something to act on. Each entity appears in each
// source with probability presence_prob; every appearance is independently
// corrupted:
//   typo_rate         per-letter edit probability in title / artist / album
//   unit_mangle_rate  per record: weight as kg/mg, capacity as ml/cl and
//                     language abbreviated
//   time_format_rate  per record: length as milliseconds, seconds or decimal
//                     minutes, two-digit year and zero-padded track number
// confusion_rate makes an entity a sibling of an earlier one (same artist,
// album, year, language, weight, capacity; different title, number, length),
// which invites cross-entity merges when one sibling is missing from a source.

#include <cstdint>

#include "polymatch/tables.hpp"

namespace polymatch {

struct Corruption {
    double typo_rate = 0.0;
    double unit_mangle_rate = 0.0;
    double time_format_rate = 0.0;
};

struct SynthSpec {
    std::size_t n_tables = 4;
    std::size_t n_entities = 100;
    double presence_prob = 0.9;
    Corruption corruption;
    double confusion_rate = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

Dataset generate(const SynthSpec& spec);

}  // namespace polymatch
