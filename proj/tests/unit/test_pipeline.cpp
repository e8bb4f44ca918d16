#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "polymatch/pipeline.hpp"
#include "polymatch/synth.hpp"

using namespace polymatch;
namespace fs = std::filesystem;

namespace {

Dataset corrupted(std::uint64_t seed, std::size_t entities = 80) {
    SynthSpec s;
    s.n_tables = 3;
    s.n_entities = entities;
    s.corruption = {0.05, 0.3, 0.3};
    s.confusion_rate = 0.2;
    s.seed = seed;
    return generate(s);
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("pm_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

PipelineConfig quiet() {
    PipelineConfig c;
    c.embedder.threads = 1;
    return c;
}

}  // namespace

TEST_CASE("config text round-trips through dump") {
    const auto c = parse_config(R"(
# comment
lambda = 0.25
d=0.1
rho_min = 3
embed_dim = 128
coordination_mode = rules_only
custom_rule = ([0-9]+)lbs => $1lb
disable = dpm
seed = 99
)");
    CHECK(c.tcem.lambda == 0.25);
    CHECK(c.dpm.d == 0.1);
    CHECK(c.dpm.rho_min == 3);
    CHECK(c.embedder.dimension == 128);
    CHECK(c.disable_dpm);
    CHECK_FALSE(c.disable_mplac);
    CHECK(c.custom_rules.size() == 1);
    CHECK(c.seed == 99);
    const auto back = parse_config(dump_config(c));
    CHECK(dump_config(back) == dump_config(c));
    for (const auto& key : config_keys()) {
        CHECK((key.provenance == "reported" || key.provenance == "chosen"));
        CHECK_FALSE(key.help.empty());
    }
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(parse_config("lambda = abc"), ConfigError);
    CHECK_THROWS_AS(parse_config("no_such_key = 1"), ConfigError);
    CHECK_THROWS_AS(parse_config("lambda 0.3"), ConfigError);
    CHECK_THROWS_AS(parse_config("rho_min = -1"), ConfigError);
    CHECK_THROWS_AS(parse_config("coordination_mode = psychic"), ConfigError);
    CHECK_THROWS_AS(parse_config("disable = everything"), ConfigError);
    PipelineConfig c;
    c.coordination_mode = CoordinationMode::model_only;
    CHECK_THROWS_AS(c.validate(), ConfigError);  // no endpoint
    CHECK_THROWS_AS(load_config("/nonexistent/pm.conf"), ConfigError);
}

TEST_CASE("sha256 known answers") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("match is deterministic and scores against truth") {
    const auto d = corrupted(1);
    const auto a = match(d, quiet());
    const auto b = match(d, quiet());
    CHECK(a.clusters == b.clusters);
    REQUIRE(a.report);
    CHECK(*a.report == *b.report);
    CHECK(a.report->f1 > 0.8);
    CHECK(a.report->stage_counts.at("tcem") == a.tcem.clusters.size());
    CHECK_NOTHROW(check_disjoint(a.clusters, &d));
    std::vector<std::string> stages;
    for (const auto& t : a.timings) stages.push_back(t.stage);
    CHECK(stages == std::vector<std::string>{"coordinate", "embed", "tcem", "dpm", "score"});
}

TEST_CASE("disabling DPM returns the TCEM clusters") {
    const auto d = corrupted(2);
    auto c = quiet();
    c.disable_dpm = true;
    const auto r = match(d, c);
    CHECK(r.clusters == r.tcem.clusters);
    CHECK(r.pruned.clusters.empty());
    CHECK(r.report->stage_counts.count("dpm") == 0);
}

TEST_CASE("disabling MPLAC embeds raw serialized records") {
    const auto d = corrupted(3);
    auto c = quiet();
    c.disable_mplac = true;
    const auto r = match(d, c);
    CHECK(r.coordinated.texts == passthrough(d).texts);
}

TEST_CASE("run_pipeline writes every artifact and a warm cache reproduces the run") {
    const auto root = scratch("pipeline");
    write_dataset(corrupted(4), root / "data");
    auto c = quiet();
    c.dataset = root / "data";
    c.out_dir = root / "out";
    c.cache_dir = root / "cache";
    const auto cold = run_pipeline(c);
    for (const char* name : {artifact::coordinated, artifact::pairs, artifact::prematched, artifact::clusters,
                             artifact::labels, artifact::report_json, artifact::report_txt}) {
        CHECK(fs::exists(c.out_dir / name));
    }
    CHECK_FALSE(cold.embeddings_cached);
    const auto first = slurp(c.out_dir / artifact::clusters);
    const auto report = nlohmann::json::parse(slurp(c.out_dir / artifact::report_json));
    CHECK(report["evaluation"]["f1"].get<double>() == cold.report->f1);

    const auto warm = run_pipeline(c);
    CHECK(warm.embeddings_cached);
    CHECK(warm.embeddings == cold.embeddings);
    CHECK(slurp(c.out_dir / artifact::clusters) == first);

    // A changed embedding setting misses the cache.
    c.embedder.dimension = 256;
    CHECK_FALSE(run_pipeline(c).embeddings_cached);
}

TEST_CASE("pipeline failure leaves error.json naming the stage") {
    const auto root = scratch("failure");
    write_dataset(corrupted(5, 20), root / "data");
    auto c = quiet();
    c.dataset = root / "data";
    c.out_dir = root / "out";
    c.coordination_mode = CoordinationMode::model_only;
    c.text_model.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    c.text_model.retry_limit = 0;
    c.text_model.timeout = std::chrono::milliseconds(300);
    CHECK_THROWS(run_pipeline(c));
    const auto err = nlohmann::json::parse(slurp(c.out_dir / artifact::error_json));
    CHECK(err["stage"] == "coordinate");
    CHECK(err["failures"].size() > 0);
}

TEST_CASE("grid parsing") {
    CHECK(parse_grid("0.1:0.5:0.1") == std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5});
    CHECK(parse_grid("0.2:0.2:0.05") == std::vector<double>{0.2});
    CHECK_THROWS_AS(parse_grid("0.5:0.1:0.1"), ConfigError);
    CHECK_THROWS_AS(parse_grid("0.1:0.5:0"), ConfigError);
    CHECK_THROWS_AS(parse_grid("0.1:0.5"), ConfigError);
    CHECK(parse_sweep_param("lambda") == SweepParam::lambda);
    CHECK_THROWS_AS(parse_sweep_param("rho"), ConfigError);
}

TEST_CASE("sweep points equal standalone runs") {
    const auto d = corrupted(6);
    for (auto param : {SweepParam::lambda, SweepParam::d}) {
        SweepSpec spec{param, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}};
        const auto points = sweep(d, quiet(), spec);
        REQUIRE(points.size() == 9);
        for (std::size_t i : {0u, 4u, 8u}) {
            auto c = quiet();
            (param == SweepParam::lambda ? c.tcem.lambda : c.dpm.d) = spec.values[i];
            CHECK(points[i].value == spec.values[i]);
            CHECK(points[i].report == *match(d, c).report);
        }
    }
    const auto csv = sweep_csv(sweep(d, quiet(), {SweepParam::lambda, {0.3}}));
    CHECK(csv.rfind("value,precision,recall,f1\n", 0) == 0);
}

TEST_CASE("ablation") {
    const auto d = corrupted(7);
    CHECK(parse_ablation("mplac").mplac);
    CHECK(parse_ablation("dpm,mplac").dpm);
    CHECK_THROWS_AS(parse_ablation("tcem"), ConfigError);
    auto c = quiet();
    const auto without = ablate(d, c, {true, false});
    c.disable_mplac = true;
    CHECK(without == *match(d, c).report);
}
