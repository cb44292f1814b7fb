#include "sitfaith/cli.hpp"

#include <CLI11.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iostream>
#include <map>

#include "sitfaith/util.hpp"

namespace sitfaith::cli {

using nlohmann::json;

namespace {

prompts::PromptLibrary load_library(const RunConfig& config) {
    const std::string dir =
        config.prompts_dir.empty() ? prompts::default_prompt_dir() : config.prompts_dir;
    return prompts::PromptLibrary(dir);
}

void add_common_options(CLI::App* cmd, RunConfig& config, std::string& config_path) {
    cmd->add_option("--config", config_path, "JSON run-config file (flags override it)");
    cmd->add_option("--dataset", config.dataset_paths, "dataset JSONL path (repeatable)");
    cmd->add_option("--method", config.methods, "method id, e.g. dia, internal_conf+tuned");
    cmd->add_option("--backend", config.backend_kind, "backend kind: mock | http");
    cmd->add_option("--endpoint", config.endpoint, "OpenAI-compatible endpoint URL");
    cmd->add_option("--model", config.model, "model id");
    cmd->add_option("--mock-script", config.mock_script_path, "scripted replies for the mock");
    cmd->add_option("--prompts", config.prompts_dir, "prompt template directory");
    cmd->add_option("--calibration-dir", config.calibration_dir, "calibration artifact dir");
    cmd->add_option("--out", config.out_dir, "output directory");
    cmd->add_option("--split", config.split, "train | dev | test | all");
    cmd->add_option("--seed", config.seed, "run seed");
    cmd->add_option("--max-concurrency", config.max_concurrency, "parallel request limit");
    cmd->add_option("--calib-size", config.calib_size, "calibration set size (0 = all dev)");
    cmd->add_flag("--no-cache", [&config](std::int64_t) { config.cache_enabled = false; },
                  "disable the response cache");
    cmd->add_option_function<double>(
           "--threshold", [&config](const double& value) { config.threshold = value; },
           "confidence gate (default 0.5)")
        ->check(CLI::Range(0.0, 1.0));
}

/// Flags override config-file values: re-parse after loading the file.
RunConfig resolve_config(const CLI::App* cmd, const RunConfig& parsed,
                         const std::string& config_path) {
    if (config_path.empty()) return parsed;
    RunConfig config = RunConfig::from_json_file(config_path);
    RunConfig overrides = parsed;
    if (!cmd->count("--dataset")) overrides.dataset_paths = config.dataset_paths;
    if (!cmd->count("--method")) overrides.methods = config.methods;
    if (!cmd->count("--backend")) overrides.backend_kind = config.backend_kind;
    if (!cmd->count("--endpoint")) overrides.endpoint = config.endpoint;
    if (!cmd->count("--model")) overrides.model = config.model;
    if (!cmd->count("--mock-script")) overrides.mock_script_path = config.mock_script_path;
    if (!cmd->count("--prompts")) overrides.prompts_dir = config.prompts_dir;
    if (!cmd->count("--calibration-dir")) overrides.calibration_dir = config.calibration_dir;
    if (!cmd->count("--out")) overrides.out_dir = config.out_dir;
    if (!cmd->count("--split")) overrides.split = config.split;
    if (!cmd->count("--seed")) overrides.seed = config.seed;
    if (!cmd->count("--max-concurrency")) overrides.max_concurrency = config.max_concurrency;
    if (!cmd->count("--calib-size")) overrides.calib_size = config.calib_size;
    if (!cmd->count("--no-cache")) overrides.cache_enabled = config.cache_enabled;
    if (!cmd->count("--threshold")) overrides.threshold = config.threshold;
    overrides.judge_policy = config.judge_policy;
    overrides.gen = config.gen;
    overrides.sampling = config.sampling;
    overrides.synthesis = config.synthesis;
    return overrides;
}

int cmd_evaluate(const RunConfig& config) {
    const prompts::PromptLibrary library = load_library(config);
    backend::Client client = make_client(config, make_backend(config));
    const EvaluationOutputs outputs = run_evaluation(config, client, library);

    std::filesystem::create_directories(config.out_dir);
    util::write_file(config.out_dir + "/decisions.jsonl", outputs.decisions_jsonl);
    util::write_file(config.out_dir + "/report.csv", outputs.formatted.csv);
    util::write_file(config.out_dir + "/report.txt", outputs.formatted.table);
    std::cout << outputs.formatted.table;
    std::cout << "wrote " << config.out_dir << "/decisions.jsonl, report.csv, report.txt\n";
    return 0;
}

int cmd_tune(const RunConfig& config) {
    const prompts::PromptLibrary library = load_library(config);
    backend::Client client = make_client(config, make_backend(config));
    for (const std::string& line : run_tune(config, client, library)) {
        std::cout << line << "\n";
    }
    return 0;
}

int cmd_calibrate(const RunConfig& config) {
    const prompts::PromptLibrary library = load_library(config);
    backend::Client client = make_client(config, make_backend(config));
    for (const std::string& line : run_calibrate(config, client, library)) {
        std::cout << line << "\n";
    }
    return 0;
}

int cmd_gen_crdpo(const RunConfig& config) {
    const prompts::PromptLibrary library = load_library(config);
    backend::Client client = make_client(config, make_backend(config));
    const CrdpoOutputs outputs = run_gen_crdpo(config, client, library);
    crdpo::emit_training_bundle(outputs.pairs, crdpo::TrainConfig{}, config.out_dir);
    std::cout << "sampled " << outputs.pairs.size() << " preference pairs from "
              << outputs.instances_eligible << "/" << outputs.instances_seen
              << " eligible instances into " << config.out_dir << "\n";
    return 0;
}

int cmd_synth_contexts(const RunConfig& config, const std::string& out_path, bool overwrite) {
    if (config.dataset_paths.size() != 1) {
        throw Error("synth-contexts takes exactly one --dataset");
    }
    backend::Client client = make_client(config, make_backend(config));
    data::LoadOptions load_options;
    load_options.allow_missing_wrong_context = true;
    std::vector<data::QAInstance> instances =
        data::load_dataset(config.dataset_paths.front(), load_options);

    data::SynthesisOptions synthesis = config.synthesis;
    synthesis.seed = config.seed;
    std::size_t synthesized = 0;
    for (data::QAInstance& instance : instances) {
        if (!instance.wrong_context.empty() && !overwrite) continue;
        const data::SynthesisResult result =
            data::synthesize_wrong_context(instance, client, synthesis);
        instance.wrong_context = result.text;
        instance.wrong_context_answer.reset();
        instance.validate();
        ++synthesized;
    }
    data::save_dataset(out_path, instances);
    std::cout << "synthesized " << synthesized << " wrong contexts -> " << out_path << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& decision_paths, const std::string& out_dir) {
    if (decision_paths.empty()) throw Error("report needs at least one --decisions file");

    struct Group {
        std::vector<bool> true_labels;
        std::vector<bool> false_labels;
    };
    std::map<std::pair<std::string, std::string>, Group> groups;
    std::vector<std::pair<std::string, std::string>> group_order;
    std::map<std::string, std::map<std::string, bool>> closed_book;  // dataset -> id -> label

    for (const std::string& path : decision_paths) {
        int line_no = 0;
        for (const std::string& line : util::split_lines(util::read_file(path))) {
            ++line_no;
            if (util::trim(line).empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::exception& e) {
                throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
            }
            const std::string method = j.at("method").get<std::string>();
            const std::string dataset = j.at("dataset").get<std::string>();
            const auto key = std::make_pair(method, dataset);
            if (groups.find(key) == groups.end()) group_order.push_back(key);
            Group& group = groups[key];
            const bool correct = j.at("correct").get<bool>();
            if (j.at("condition").get<std::string>() == "true_context") {
                group.true_labels.push_back(correct);
            } else {
                group.false_labels.push_back(correct);
            }
            closed_book[dataset][j.at("id").get<std::string>()] =
                j.at("closed_book_correct").get<bool>();
        }
    }

    std::vector<metrics::MethodReport> reports;
    for (const auto& key : group_order) {
        const Group& group = groups.at(key);
        std::vector<bool> closed_book_labels;
        for (const auto& [id, label] : closed_book.at(key.second)) {
            closed_book_labels.push_back(label);
        }
        reports.push_back(metrics::compute_report(key.first, key.second, group.true_labels,
                                                  group.false_labels, closed_book_labels));
    }
    const metrics::FormattedReports formatted = metrics::format_table(reports);
    std::cout << formatted.table;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        util::write_file(out_dir + "/report.csv", formatted.csv);
        util::write_file(out_dir + "/report.txt", formatted.table);
        std::cout << "wrote " << out_dir << "/report.csv, report.txt\n";
    }
    return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"situated-faithfulness evaluation framework"};
    app.require_subcommand(1);

    RunConfig config;
    std::string config_path;
    std::string synth_out = "synthesized.jsonl";
    bool synth_overwrite = false;
    std::vector<std::string> decision_paths;
    std::string report_out;

    CLI::App* evaluate = app.add_subcommand("evaluate", "run methods over eval pairs");
    add_common_options(evaluate, config, config_path);
    CLI::App* tune = app.add_subcommand("tune", "fit decision thresholds on the dev split");
    add_common_options(tune, config, config_path);
    CLI::App* calibrate =
        app.add_subcommand("calibrate", "fit isotonic maps and percentile references");
    add_common_options(calibrate, config, config_path);
    CLI::App* gen_crdpo =
        app.add_subcommand("gen-crdpo", "generate preference-pair training data");
    add_common_options(gen_crdpo, config, config_path);
    gen_crdpo->add_flag("--include-agreement", config.include_agreement,
                        "also sample non-conflict quadrants (experimental)");
    CLI::App* synth = app.add_subcommand("synth-contexts", "synthesize wrong contexts");
    add_common_options(synth, config, config_path);
    synth->add_option("--synth-out", synth_out, "output dataset path");
    synth->add_flag("--overwrite", synth_overwrite, "re-synthesize existing wrong contexts");
    CLI::App* report = app.add_subcommand("report", "aggregate decision JSONL into tables");
    report->add_option("--decisions", decision_paths, "decision JSONL path (repeatable)")
        ->required();
    report->add_option("--out", report_out, "optional output directory");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (evaluate->parsed()) {
            return cmd_evaluate(resolve_config(evaluate, config, config_path));
        }
        if (tune->parsed()) return cmd_tune(resolve_config(tune, config, config_path));
        if (calibrate->parsed()) {
            return cmd_calibrate(resolve_config(calibrate, config, config_path));
        }
        if (gen_crdpo->parsed()) {
            return cmd_gen_crdpo(resolve_config(gen_crdpo, config, config_path));
        }
        if (synth->parsed()) {
            return cmd_synth_contexts(resolve_config(synth, config, config_path), synth_out,
                                      synth_overwrite);
        }
        if (report->parsed()) return cmd_report(decision_paths, report_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 2;
}

}  // namespace sitfaith::cli
