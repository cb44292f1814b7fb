#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>

#include "sitfaith/cli.hpp"
#include "sitfaith/confidence.hpp"
#include "sitfaith/util.hpp"

namespace sitfaith::cli {

using backend::Client;
using data::EvalCondition;
using data::QAInstance;
using methods::MethodId;
using nlohmann::json;
using nlohmann::ordered_json;

void RunConfig::apply_json(const std::string& json_text) {
    json j = json::parse(json_text);
    if (j.contains("datasets")) dataset_paths = j.at("datasets").get<std::vector<std::string>>();
    if (j.contains("methods")) methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("backend")) {
        const json& b = j.at("backend");
        backend_kind = b.value("kind", backend_kind);
        endpoint = b.value("endpoint", endpoint);
        model = b.value("model", model);
        mock_script_path = b.value("mock_script", mock_script_path);
        max_concurrency = b.value("max_concurrency", max_concurrency);
        retry_limit = b.value("retry_limit", retry_limit);
        backoff_base_ms = b.value("backoff_base_ms", backoff_base_ms);
    }
    if (j.contains("judge_policy")) {
        for (const auto& [dataset, strategy] : j.at("judge_policy").items()) {
            judge_policy.by_dataset[dataset] =
                correctness::judge_strategy_from_string(strategy.get<std::string>());
        }
    }
    if (j.contains("prompts_dir")) prompts_dir = j.at("prompts_dir").get<std::string>();
    if (j.contains("calibration_dir")) calibration_dir = j.at("calibration_dir").get<std::string>();
    if (j.contains("out")) out_dir = j.at("out").get<std::string>();
    if (j.contains("split")) split = j.at("split").get<std::string>();
    if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("cache")) cache_enabled = j.at("cache").get<bool>();
    if (j.contains("threshold")) threshold = j.at("threshold").get<double>();
    if (j.contains("calib_size")) calib_size = j.at("calib_size").get<std::size_t>();
    if (j.contains("generation")) {
        const json& g = j.at("generation");
        gen.answer_max_tokens = g.value("answer_max_tokens", gen.answer_max_tokens);
        gen.reasoning_max_tokens = g.value("reasoning_max_tokens", gen.reasoning_max_tokens);
        gen.sc_samples = g.value("sc_samples", gen.sc_samples);
        gen.sc_temperature = g.value("sc_temperature", gen.sc_temperature);
    }
    if (j.contains("sampling")) {
        const json& s = j.at("sampling");
        sampling.temperature = s.value("temperature", sampling.temperature);
        sampling.max_tokens = s.value("max_tokens", sampling.max_tokens);
    }
    if (j.contains("synthesis")) {
        const json& s = j.at("synthesis");
        synthesis.max_attempts = s.value("max_attempts", synthesis.max_attempts);
        synthesis.temperature = s.value("temperature", synthesis.temperature);
        synthesis.max_tokens = s.value("max_tokens", synthesis.max_tokens);
    }
}

RunConfig RunConfig::from_json_file(const std::string& path) {
    RunConfig config;
    config.apply_json(util::read_file(path));
    return config;
}

std::shared_ptr<backend::Backend> make_backend(const RunConfig& config) {
    if (config.backend_kind == "mock") {
        if (!config.mock_script_path.empty()) {
            return std::make_shared<backend::MockBackend>(
                backend::MockScript::from_jsonl(util::read_file(config.mock_script_path)));
        }
        return std::make_shared<backend::MockBackend>();
    }
    if (config.backend_kind == "http") {
        backend::BackendConfig bc;
        bc.endpoint = config.endpoint;
        if (bc.endpoint.empty()) {
            const char* env = std::getenv("OPENAI_BASE_URL");
            bc.endpoint = env != nullptr ? env : "https://api.openai.com";
        }
        bc.model = config.model;
        bc.retry_limit = config.retry_limit;
        bc.backoff_base_ms = config.backoff_base_ms;
        return std::make_shared<backend::HttpBackend>(bc);
    }
    throw Error("unknown backend kind: " + config.backend_kind);
}

Client make_client(const RunConfig& config, std::shared_ptr<backend::Backend> backend) {
    backend::BackendConfig bc;
    bc.endpoint = config.endpoint;
    bc.model = config.model;
    bc.max_concurrent = config.max_concurrency;
    bc.retry_limit = config.retry_limit;
    bc.backoff_base_ms = config.backoff_base_ms;
    if (config.cache_enabled) bc.cache_dir = config.out_dir + "/cache";
    return Client(std::move(backend), bc);
}

namespace {

std::vector<QAInstance> load_instances(const RunConfig& config) {
    if (config.dataset_paths.empty()) throw Error("no dataset given (--dataset)");
    std::vector<QAInstance> instances;
    for (const std::string& path : config.dataset_paths) {
        std::vector<QAInstance> loaded = data::load_dataset(path);
        instances.insert(instances.end(), loaded.begin(), loaded.end());
    }
    if (config.split != "all") {
        const data::Split wanted = data::split_from_string(config.split);
        std::erase_if(instances,
                      [wanted](const QAInstance& i) { return i.split != wanted; });
    }
    if (instances.empty()) {
        throw Error("no instances in split \"" + config.split + "\"");
    }
    return instances;
}

std::vector<QAInstance> dev_instances_for(const std::vector<QAInstance>& instances,
                                          const std::string& dataset) {
    std::vector<QAInstance> dev;
    for (const QAInstance& instance : instances) {
        if (instance.dataset == dataset && instance.split == data::Split::Dev) {
            dev.push_back(instance);
        }
    }
    return dev;
}

std::vector<std::string> dataset_names(const std::vector<QAInstance>& instances) {
    std::vector<std::string> names;
    for (const QAInstance& instance : instances) {
        if (std::find(names.begin(), names.end(), instance.dataset) == names.end()) {
            names.push_back(instance.dataset);
        }
    }
    return names;
}

/// Loads everything a method needs from the calibration store up front so a
/// missing artifact fails before any generation happens.
methods::CalibrationInputs load_calibration_inputs(const RunConfig& config,
                                                   const MethodId& method,
                                                   const std::string& dataset) {
    methods::CalibrationInputs inputs;
    inputs.default_threshold = config.threshold;
    const bool needs_store = method.threshold_tuned || method.isotonic_calibrated ||
                             method.base == methods::BaseMethod::CTPC;
    if (!needs_store) return inputs;
    if (config.calibration_dir.empty()) {
        throw Error("method " + method.to_string() + " needs --calibration-dir");
    }
    confidence::CalibrationStore store(config.calibration_dir);
    if (method.threshold_tuned) {
        inputs.tuned_threshold = store.load_threshold(dataset, method.to_string());
        if (!inputs.tuned_threshold) {
            throw Error("missing tuned threshold artifact for " + method.to_string() + " on " +
                        dataset + " (run `tune` first)");
        }
    }
    if (method.isotonic_calibrated) {
        const confidence::ConfidenceSource source =
            method.base == methods::BaseMethod::ContextConf
                ? confidence::ConfidenceSource::Context
                : confidence::ConfidenceSource::Internal;
        inputs.isotonic = store.load_isotonic(dataset, source);
        if (!inputs.isotonic) {
            throw Error("missing isotonic artifact for " + method.to_string() + " on " + dataset +
                        " (run `calibrate` first)");
        }
    }
    if (method.base == methods::BaseMethod::CTPC) {
        inputs.internal_percentile_reference =
            store.load_percentile_reference(dataset, confidence::ConfidenceSource::Internal);
        inputs.context_percentile_reference =
            store.load_percentile_reference(dataset, confidence::ConfidenceSource::Context);
        if (!inputs.internal_percentile_reference || !inputs.context_percentile_reference) {
            throw Error("missing percentile reference lists for ctpc on " + dataset +
                        " (run `calibrate` first)");
        }
    }
    return inputs;
}

struct ClosedBookStage {
    std::vector<methods::AnswerRecord> records;
    std::vector<bool> labels;
};

ClosedBookStage run_closed_book_stage(const methods::Env& env, const RunConfig& config,
                                      const std::vector<QAInstance>& instances,
                                      const prompts::PromptLibrary& library) {
    ClosedBookStage stage;
    stage.records.resize(instances.size());
    stage.labels.resize(instances.size());
    env.client.parallel_for(instances.size(), [&](std::size_t i) {
        stage.records[i] = methods::run_closed_book(env, instances[i]);
        stage.labels[i] = correctness::judge(instances[i], stage.records[i].answer,
                                             config.judge_policy, env.client, library)
                              .correct;
    });
    return stage;
}

ordered_json trace_json(const std::vector<methods::TraceStep>& trace) {
    ordered_json steps = ordered_json::array();
    for (const methods::TraceStep& step : trace) {
        steps.push_back(
            {{"name", step.name}, {"detail", step.detail}, {"output", step.output}});
    }
    return steps;
}

}  // namespace

EvaluationOutputs run_evaluation(const RunConfig& config, Client& client,
                                 const prompts::PromptLibrary& library) {
    if (config.methods.empty()) throw Error("no methods given (--method)");
    std::vector<MethodId> method_ids;
    for (const std::string& name : config.methods) {
        method_ids.push_back(MethodId::parse(name));
    }

    const std::vector<QAInstance> instances = load_instances(config);
    const std::vector<std::string> datasets = dataset_names(instances);

    methods::GenerationDefaults gen = config.gen;
    gen.seed = config.seed;
    methods::Env env{client, library, gen};

    // Calibration artifacts resolve up front, per (method, dataset).
    std::map<std::pair<std::string, std::string>, methods::CalibrationInputs> calibration;
    for (const MethodId& method : method_ids) {
        for (const std::string& dataset : datasets) {
            calibration[{method.to_string(), dataset}] =
                load_calibration_inputs(config, method, dataset);
        }
    }

    // Closed-book answers double as the internal-accuracy bound for every
    // method report.
    const ClosedBookStage closed_book = run_closed_book_stage(env, config, instances, library);
    std::map<std::string, std::vector<bool>> closed_book_by_dataset;
    std::map<std::pair<std::string, std::string>, bool> closed_book_by_id;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        closed_book_by_dataset[instances[i].dataset].push_back(closed_book.labels[i]);
        closed_book_by_id[{instances[i].dataset, instances[i].id}] = closed_book.labels[i];
    }

    const auto pairs = data::make_eval_pairs(instances);

    EvaluationOutputs outputs;
    for (const MethodId& method : method_ids) {
        struct Row {
            methods::Decision decision;
            correctness::CorrectnessLabel label;
        };
        std::vector<Row> rows(pairs.size());
        client.parallel_for(pairs.size(), [&](std::size_t i) {
            const auto& [instance, condition] = pairs[i];
            const methods::CalibrationInputs& inputs =
                calibration.at({method.to_string(), instance.dataset});
            Row row;
            try {
                row.decision = methods::run_method(env, method, instance, condition, inputs);
            } catch (const std::exception& e) {
                throw Error("method " + method.to_string() + ", instance " + instance.id + ", " +
                            data::condition_string(condition) + ": " + e.what());
            }
            row.label = correctness::judge(instance, row.decision.final_answer,
                                           config.judge_policy, client, library);
            rows[i] = std::move(row);
        });

        std::map<std::string, std::vector<bool>> true_labels;
        std::map<std::string, std::vector<bool>> false_labels;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto& [instance, condition] = pairs[i];
            const Row& row = rows[i];
            ordered_json line = {
                {"id", instance.id},
                {"dataset", instance.dataset},
                {"split", data::split_string(instance.split)},
                {"condition", data::condition_string(condition)},
                {"method", method.to_string()},
                {"final_answer", row.decision.final_answer},
                {"source", methods::decision_source_string(row.decision.source)},
                {"correct", row.label.correct},
                {"judge", correctness::judge_kind_string(row.label.judge)},
                {"closed_book_correct", closed_book_by_id.at({instance.dataset, instance.id})},
                {"trace", trace_json(row.decision.trace)},
            };
            outputs.decisions_jsonl += line.dump();
            outputs.decisions_jsonl += '\n';
            if (condition == EvalCondition::TrueContext) {
                true_labels[instance.dataset].push_back(row.label.correct);
            } else {
                false_labels[instance.dataset].push_back(row.label.correct);
            }
        }
        for (const std::string& dataset : datasets) {
            outputs.reports.push_back(metrics::compute_report(
                method.to_string(), dataset, true_labels.at(dataset), false_labels.at(dataset),
                closed_book_by_dataset.at(dataset)));
        }
    }
    outputs.formatted = metrics::format_table(outputs.reports);
    return outputs;
}

namespace {

struct CalibrationObservations {
    std::vector<confidence::ThresholdRecord> records;  // gate confidence per entry
    std::vector<double> internal_confidences;
    std::vector<double> context_confidences;
    std::vector<int> internal_labels;
    std::vector<int> context_labels;
};

/// Generates internal/context answers over a calibration set and judges both.
/// The gate confidence follows the method's modifiers when `method` is given.
CalibrationObservations observe_calibration_set(const RunConfig& config,
                                                const methods::Env& env,
                                                const prompts::PromptLibrary& library,
                                                const data::CalibrationSet& set,
                                                const MethodId* method,
                                                const methods::CalibrationInputs* inputs) {
    CalibrationObservations obs;
    const std::size_t n = set.entries.size();
    obs.records.resize(n);
    obs.internal_confidences.resize(n);
    obs.context_confidences.resize(n);
    obs.internal_labels.resize(n);
    obs.context_labels.resize(n);

    env.client.parallel_for(n, [&](std::size_t i) {
        const auto& [instance, condition] = set.entries[i];
        methods::AnswerRecord internal = methods::run_closed_book(env, instance);
        methods::AnswerRecord context = methods::run_context_answer(env, instance, condition);
        const bool internal_correct =
            correctness::judge(instance, internal.answer, config.judge_policy, env.client,
                               library)
                .correct;
        const bool context_correct =
            correctness::judge(instance, context.answer, config.judge_policy, env.client,
                               library)
                .correct;
        const double internal_conf = confidence::answer_confidence(internal.answer_logprobs);
        const double context_conf = confidence::answer_confidence(context.answer_logprobs);

        double gate = 0.0;
        if (method != nullptr) {
            const bool context_gate = method->base == methods::BaseMethod::ContextConf;
            const methods::AnswerRecord& gated = context_gate ? context : internal;
            if (method->self_consistency) {
                const backend::GenerationRequest base =
                    context_gate
                        ? methods::make_context_answer_request(
                              env, instance, data::context_for(instance, condition))
                        : methods::make_closed_book_request(env, instance);
                const backend::GenerationRequest request =
                    methods::make_self_consistency_request(env, base);
                std::vector<std::string> texts;
                for (const backend::Sample& s : env.client.generate(request).samples) {
                    texts.push_back(s.text);
                }
                gate = confidence::self_consistency(texts, gated.answer);
            } else {
                gate = context_gate ? context_conf : internal_conf;
            }
            if (method->isotonic_calibrated) {
                if (inputs == nullptr || !inputs->isotonic) {
                    throw Error("method " + method->to_string() +
                                " needs an isotonic artifact during tuning");
                }
                gate = confidence::isotonic_apply(*inputs->isotonic, gate);
            }
        }

        obs.records[i] = confidence::ThresholdRecord{gate, internal_correct, context_correct,
                                                     condition};
        obs.internal_confidences[i] = internal_conf;
        obs.context_confidences[i] = context_conf;
        obs.internal_labels[i] = internal_correct ? 1 : 0;
        obs.context_labels[i] = context_correct ? 1 : 0;
    });
    return obs;
}

data::CalibrationSet calibration_set_for(const RunConfig& config,
                                         const std::vector<QAInstance>& dev) {
    const std::size_t size =
        config.calib_size == 0 ? 2 * dev.size() : std::min(config.calib_size, 2 * dev.size());
    return data::build_calibration_set(dev, size, config.seed);
}

}  // namespace

std::vector<std::string> run_tune(const RunConfig& config, Client& client,
                                  const prompts::PromptLibrary& library) {
    if (config.methods.empty()) throw Error("tune needs --method");
    if (config.calibration_dir.empty()) throw Error("tune needs --calibration-dir");

    RunConfig dev_config = config;
    dev_config.split = "dev";
    const std::vector<QAInstance> instances = load_instances(dev_config);

    methods::GenerationDefaults gen = config.gen;
    gen.seed = config.seed;
    methods::Env env{client, library, gen};
    confidence::CalibrationStore store(config.calibration_dir);

    std::vector<std::string> summaries;
    for (const std::string& method_name : config.methods) {
        const MethodId method = MethodId::parse(method_name);
        if (method.base != methods::BaseMethod::InternalConf &&
            method.base != methods::BaseMethod::ContextConf) {
            throw Error("tune only applies to internal_conf/context_conf methods, got " +
                        method_name);
        }
        for (const std::string& dataset : dataset_names(instances)) {
            const std::vector<QAInstance> dev = dev_instances_for(instances, dataset);
            if (dev.empty()) throw Error("no dev instances for dataset " + dataset);
            const data::CalibrationSet set = calibration_set_for(config, dev);

            methods::CalibrationInputs inputs;
            if (method.isotonic_calibrated) {
                const confidence::ConfidenceSource source =
                    method.base == methods::BaseMethod::ContextConf
                        ? confidence::ConfidenceSource::Context
                        : confidence::ConfidenceSource::Internal;
                inputs.isotonic = store.load_isotonic(dataset, source);
                if (!inputs.isotonic) {
                    throw Error("missing isotonic artifact for " + method_name + " on " +
                                dataset + " (run `calibrate` first)");
                }
            }
            const CalibrationObservations obs =
                observe_calibration_set(config, env, library, set, &method, &inputs);
            const confidence::ThresholdRule rule =
                method.base == methods::BaseMethod::ContextConf
                    ? confidence::ThresholdRule::ContextGate
                    : confidence::ThresholdRule::InternalGate;
            const double threshold = confidence::tune_threshold(obs.records, rule);
            // Stored under the +tuned id so evaluation finds it whether the
            // method was given as internal_conf or internal_conf+tuned.
            MethodId tuned_id = method;
            tuned_id.threshold_tuned = true;
            store.save_threshold(dataset, tuned_id.to_string(), threshold);
            summaries.push_back("tuned " + tuned_id.to_string() + " on " + dataset +
                                ": threshold " + util::format_fixed1(threshold * 100.0) + "% (" +
                                std::to_string(set.entries.size()) + " entries)");
        }
    }
    return summaries;
}

std::vector<std::string> run_calibrate(const RunConfig& config, Client& client,
                                       const prompts::PromptLibrary& library) {
    if (config.calibration_dir.empty()) throw Error("calibrate needs --calibration-dir");

    RunConfig dev_config = config;
    dev_config.split = "dev";
    const std::vector<QAInstance> instances = load_instances(dev_config);

    methods::GenerationDefaults gen = config.gen;
    gen.seed = config.seed;
    methods::Env env{client, library, gen};
    confidence::CalibrationStore store(config.calibration_dir);

    std::vector<std::string> summaries;
    for (const std::string& dataset : dataset_names(instances)) {
        const std::vector<QAInstance> dev = dev_instances_for(instances, dataset);
        if (dev.empty()) throw Error("no dev instances for dataset " + dataset);
        const data::CalibrationSet set = calibration_set_for(config, dev);
        const CalibrationObservations obs =
            observe_calibration_set(config, env, library, set, nullptr, nullptr);

        struct SourceData {
            confidence::ConfidenceSource source;
            const std::vector<double>* confidences;
            const std::vector<int>* labels;
        };
        for (const SourceData& sd :
             {SourceData{confidence::ConfidenceSource::Internal, &obs.internal_confidences,
                         &obs.internal_labels},
              SourceData{confidence::ConfidenceSource::Context, &obs.context_confidences,
                         &obs.context_labels}}) {
            std::vector<std::pair<double, int>> fit_pairs;
            for (std::size_t i = 0; i < sd.confidences->size(); ++i) {
                fit_pairs.emplace_back((*sd.confidences)[i], (*sd.labels)[i]);
            }
            const confidence::IsotonicMap map = confidence::isotonic_fit(fit_pairs);
            store.save_isotonic(dataset, sd.source, map);
            store.save_percentile_reference(dataset, sd.source, *sd.confidences);

            const double ece_before = confidence::ece(*sd.confidences, *sd.labels);
            std::vector<double> calibrated;
            for (double c : *sd.confidences) {
                calibrated.push_back(confidence::isotonic_apply(map, c));
            }
            const double ece_after = confidence::ece(calibrated, *sd.labels);
            summaries.push_back("calibrated " + dataset + "/" +
                                confidence::confidence_source_string(sd.source) + ": ECE " +
                                util::format_fixed1(ece_before * 100.0) + "% -> " +
                                util::format_fixed1(ece_after * 100.0) + "% (" +
                                std::to_string(set.entries.size()) + " entries)");
        }
    }
    return summaries;
}

CrdpoOutputs run_gen_crdpo(const RunConfig& config, Client& client,
                           const prompts::PromptLibrary& library) {
    RunConfig train_config = config;
    if (train_config.split == "test") train_config.split = "train";
    const std::vector<QAInstance> instances = load_instances(train_config);

    methods::GenerationDefaults gen = config.gen;
    gen.seed = config.seed;
    methods::Env env{client, library, gen};
    crdpo::SamplingOptions sampling = config.sampling;
    sampling.seed = config.seed;

    CrdpoOutputs outputs;
    outputs.instances_seen = instances.size();
    std::vector<std::vector<crdpo::PreferencePair>> per_instance(instances.size());
    std::vector<bool> eligible(instances.size(), false);

    client.parallel_for(instances.size(), [&](std::size_t i) {
        const QAInstance& instance = instances[i];
        const methods::AnswerRecord internal = methods::run_closed_book(env, instance);
        const correctness::CorrectnessLabel internal_label = correctness::judge(
            instance, internal.answer, config.judge_policy, client, library);
        for (EvalCondition condition :
             {EvalCondition::TrueContext, EvalCondition::FalseContext}) {
            std::optional<crdpo::Pattern> pattern =
                crdpo::classify_pattern(internal_label, condition);
            if (!pattern && config.include_agreement) {
                pattern = condition == EvalCondition::TrueContext
                              ? crdpo::Pattern::InternalWrongContextRight
                              : crdpo::Pattern::InternalRightContextWrong;
            }
            if (!pattern) continue;
            eligible[i] = true;
            const methods::AnswerRecord context =
                methods::run_context_answer(env, instance, condition);
            std::vector<crdpo::PreferencePair> pairs =
                crdpo::dual_sample(env, instance, *pattern, internal, context, sampling);
            for (crdpo::PreferencePair& pair : pairs) {
                per_instance[i].push_back(std::move(pair));
            }
        }
    });

    for (std::size_t i = 0; i < instances.size(); ++i) {
        if (eligible[i]) ++outputs.instances_eligible;
        for (crdpo::PreferencePair& pair : per_instance[i]) {
            outputs.pairs.push_back(std::move(pair));
        }
    }
    return outputs;
}

}  // namespace sitfaith::cli
