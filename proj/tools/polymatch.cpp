// polymatch: multi-table entity matching from the command line.
//
//   polymatch match  --dataset DIR --out-dir DIR [--lambda 0.3 --d 0.4 ...]
//   polymatch sweep  --dataset DIR --param lambda --grid 0.1:0.9:0.1
//   polymatch ablate --dataset DIR --disable mplac,dpm
//   polymatch synth  --seed 7 --out DIR
//   polymatch score  predicted.csv truth.csv
//
// Every config key is also a flag (underscores become dashes). Flags override
// values from --config.

#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "polymatch/pipeline.hpp"
#include "polymatch/synth.hpp"

namespace fs = std::filesystem;
using namespace polymatch;

namespace {

struct ConfigFlags {
    std::string config_file;
    std::map<std::string, std::string> values;
    std::vector<std::string> custom_rules;
};

void add_config_flags(CLI::App& cmd, ConfigFlags& flags, const std::vector<std::string>& skip = {}) {
    cmd.add_option("--config", flags.config_file, "key = value config file")->check(CLI::ExistingFile);
    for (const auto& key : config_keys()) {
        if (std::find(skip.begin(), skip.end(), key.name) != skip.end()) continue;
        std::string flag = "--" + key.name;
        std::replace(flag.begin(), flag.end(), '_', '-');
        const std::string help = key.help + " [" + key.provenance + "]";
        if (key.name == "custom_rule") {
            cmd.add_option(flag, flags.custom_rules, help);
        } else {
            cmd.add_option(flag, flags.values[key.name], help);
        }
    }
}

PipelineConfig resolve(const CLI::App& cmd, const ConfigFlags& flags) {
    PipelineConfig config;
    if (!flags.config_file.empty()) config = load_config(flags.config_file);
    for (const auto& [key, value] : flags.values) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (cmd.count(flag) > 0) set_option(config, key, value);
    }
    for (const auto& rule : flags.custom_rules) set_option(config, "custom_rule", rule);
    if (config.dataset == "-") {
        std::string line;
        if (!std::getline(std::cin, line)) throw ConfigError("expected a dataset path on stdin");
        set_option(config, "dataset", line);
    }
    if (config.dataset.empty()) throw ConfigError("no dataset given (use --dataset DIR or --dataset -)");
    return config;
}

Dataset load(const PipelineConfig& config) { return load_dataset(config.dataset, config.ingest); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-table entity matching"};
    app.require_subcommand(1);

    ConfigFlags match_flags;
    auto* match_cmd = app.add_subcommand("match", "run the full pipeline and write artifacts");
    add_config_flags(*match_cmd, match_flags);

    ConfigFlags sweep_flags;
    std::string sweep_param = "lambda";
    std::string sweep_grid;
    std::vector<double> sweep_values;
    auto* sweep_cmd = app.add_subcommand("sweep", "score a grid of lambda or d values");
    add_config_flags(*sweep_cmd, sweep_flags);
    sweep_cmd->add_option("--param", sweep_param, "lambda | d")->check(CLI::IsMember({"lambda", "d"}));
    auto* grid_opt = sweep_cmd->add_option("--grid", sweep_grid, "start:stop:step");
    auto* values_opt = sweep_cmd->add_option("--values", sweep_values, "explicit ascending values")->delimiter(',');
    grid_opt->excludes(values_opt);

    ConfigFlags ablate_flags;
    std::string ablate_list;
    auto* ablate_cmd = app.add_subcommand("ablate", "compare the full pipeline against bypassed stages");
    add_config_flags(*ablate_cmd, ablate_flags, {"disable"});
    ablate_cmd->add_option("--disable", ablate_list, "stages to bypass: mplac, dpm")->required();

    SynthSpec synth;
    std::string synth_out;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset and print its directory");
    synth_cmd->add_option("--tables", synth.n_tables, "number of source tables")->capture_default_str();
    synth_cmd->add_option("--entities", synth.n_entities, "planted entities")->capture_default_str();
    synth_cmd->add_option("--presence", synth.presence_prob, "chance an entity appears in a table")
        ->capture_default_str();
    synth_cmd->add_option("--typo", synth.corruption.typo_rate, "typo rate per text field")->capture_default_str();
    synth_cmd->add_option("--unit-mangle", synth.corruption.unit_mangle_rate, "unit/abbreviation rewrite rate")
        ->capture_default_str();
    synth_cmd->add_option("--time-format", synth.corruption.time_format_rate, "duration/year/number rewrite rate")
        ->capture_default_str();
    synth_cmd->add_option("--confusion", synth.confusion_rate, "sibling-entity rate")->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
    synth_cmd->add_option("--out", synth_out, "output directory (default synth-<seed>)");

    std::string score_pred, score_truth;
    bool score_json = false;
    auto* score_cmd = app.add_subcommand("score", "score a cluster file against a truth file");
    score_cmd->add_option("predicted", score_pred, "predicted clusters CSV")->required()->check(CLI::ExistingFile);
    score_cmd->add_option("truth", score_truth, "ground-truth clusters CSV")->required()->check(CLI::ExistingFile);
    score_cmd->add_flag("--json", score_json, "print JSON instead of a table");

    CLI11_PARSE(app, argc, argv);

    try {
        if (match_cmd->parsed()) {
            auto config = resolve(*match_cmd, match_flags);
            if (config.out_dir.empty()) config.out_dir = "polymatch-out";
            const auto result = run_pipeline(config);
            if (result.report) std::cout << to_table(*result.report);
            std::cout << "clusters   " << result.clusters.size() << "\n"
                      << "artifacts  " << config.out_dir.string() << "\n";
        } else if (sweep_cmd->parsed()) {
            const auto config = resolve(*sweep_cmd, sweep_flags);
            SweepSpec spec;
            spec.parameter = parse_sweep_param(sweep_param);
            spec.values = !sweep_grid.empty() ? parse_grid(sweep_grid) : sweep_values;
            if (spec.values.empty()) spec.values = {spec.parameter == SweepParam::lambda ? config.tcem.lambda
                                                                                       : config.dpm.d};
            const auto text = sweep_csv(sweep(load(config), config, spec));
            if (!config.out_dir.empty()) {
                fs::create_directories(config.out_dir);
                write_text(config.out_dir / artifact::sweep_csv, text);
            }
            std::cout << text;
        } else if (ablate_cmd->parsed()) {
            const auto config = resolve(*ablate_cmd, ablate_flags);
            const auto dataset = load(config);
            const auto disable = parse_ablation(ablate_list);
            const auto full = ablate(dataset, config, {});
            const auto reduced = ablate(dataset, config, disable);
            std::string label = "w/o";
            if (disable.mplac) label += " mplac";
            if (disable.dpm) label += disable.mplac ? ",dpm" : " dpm";
            std::cout << "== full\n" << to_table(full) << "== " << label << "\n" << to_table(reduced);
            std::printf("delta f1   %+.6f\n", reduced.f1 - full.f1);
        } else if (synth_cmd->parsed()) {
            const fs::path out = synth_out.empty() ? fs::path("synth-" + std::to_string(synth.seed)) : fs::path(synth_out);
            write_dataset(generate(synth), out);
            std::cout << out.string() << "\n";
        } else if (score_cmd->parsed()) {
            const auto report = score(read_clusters(score_pred), read_clusters(score_truth));
            std::cout << (score_json ? to_json(report) + "\n" : to_table(report));
        }
    } catch (const ConfigError& e) {
        std::cerr << "polymatch: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "polymatch: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
