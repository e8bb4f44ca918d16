#pragma once
// Tuple-exact scoring: a predicted cluster counts only when its member set
// equals a ground-truth cluster exactly.

#include <map>
#include <string>
#include <vector>

#include "polymatch/tables.hpp"

namespace polymatch {

struct EvalReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t predicted_count = 0;
    std::size_t truth_count = 0;
    std::size_t correct_count = 0;
    std::map<std::string, std::size_t> stage_counts;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Singleton clusters are dropped from both sides before counting. Throws when
// no multi-member truth cluster remains or either side overlaps itself.
EvalReport score(const std::vector<Cluster>& predicted, const std::vector<Cluster>& truth);

std::string to_json(const EvalReport& report, int indent = 2);
std::string to_table(const EvalReport& report);

}  // namespace polymatch
