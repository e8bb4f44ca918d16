#include "polymatch/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "json.hpp"

namespace polymatch {

namespace {

std::vector<Cluster> multi_member(const std::vector<Cluster>& clusters) {
    std::vector<Cluster> out;
    for (const auto& c : clusters) {
        if (c.size() >= 2) out.push_back(c);
    }
    return out;
}

}  // namespace

EvalReport score(const std::vector<Cluster>& predicted, const std::vector<Cluster>& truth) {
    check_disjoint(predicted);
    check_disjoint(truth);
    const auto pred = multi_member(predicted);
    const auto gold = multi_member(truth);
    if (gold.empty()) throw Error("ground truth has no multi-member clusters to evaluate");

    const std::set<Cluster> gold_set(gold.begin(), gold.end());
    std::size_t correct = 0;
    for (const auto& p : pred) correct += gold_set.count(p);

    EvalReport r;
    r.predicted_count = pred.size();
    r.truth_count = gold.size();
    r.correct_count = correct;
    r.precision = pred.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pred.size());
    r.recall = static_cast<double>(correct) / static_cast<double>(gold.size());
    r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

std::string to_json(const EvalReport& report, int indent) {
    nlohmann::ordered_json j;
    j["precision"] = report.precision;
    j["recall"] = report.recall;
    j["f1"] = report.f1;
    j["predicted_count"] = report.predicted_count;
    j["truth_count"] = report.truth_count;
    j["correct_count"] = report.correct_count;
    j["stage_counts"] = nlohmann::ordered_json::object();
    for (const auto& [stage, count] : report.stage_counts) j["stage_counts"][stage] = count;
    return j.dump(indent);
}

std::string to_table(const EvalReport& report) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "%-10s %9s %9s %9s %9s %9s %9s\n"
                  "%-10s %9.4f %9.4f %9.4f %9zu %9zu %9zu\n",
                  "", "precision", "recall", "f1", "predicted", "truth", "correct", "score", report.precision,
                  report.recall, report.f1, report.predicted_count, report.truth_count, report.correct_count);
    std::string out(buf);
    for (const auto& [stage, count] : report.stage_counts) {
        std::snprintf(buf, sizeof buf, "  %-24s %zu\n", stage.c_str(), count);
        out += buf;
    }
    return out;
}

}  // namespace polymatch
