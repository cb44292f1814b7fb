#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sitfaith/backend.hpp"
#include "sitfaith/correctness.hpp"
#include "sitfaith/crdpo.hpp"
#include "sitfaith/data.hpp"
#include "sitfaith/methods.hpp"
#include "sitfaith/metrics.hpp"
#include "sitfaith/prompts.hpp"

namespace sitfaith::cli {

/// Run configuration: defaults < config file < command-line flags.
struct RunConfig {
    std::vector<std::string> dataset_paths;
    std::vector<std::string> methods;

    std::string backend_kind = "mock";  // mock | http
    std::string endpoint;               // empty -> $OPENAI_BASE_URL or the OpenAI default
    std::string model = "gpt-4o-mini";
    std::string mock_script_path;
    int max_concurrency = 4;
    int retry_limit = 5;
    int backoff_base_ms = 500;

    std::string prompts_dir;  // empty -> default_prompt_dir()
    correctness::JudgePolicy judge_policy = correctness::JudgePolicy::defaults();
    std::string calibration_dir;
    std::string out_dir = "out";
    std::string split = "test";  // train | dev | test | all
    std::uint64_t seed = 0;
    bool cache_enabled = true;
    std::optional<double> threshold;  // overrides the 0.5 default gate
    std::size_t calib_size = 0;       // 0 -> all dev pairs

    methods::GenerationDefaults gen;
    crdpo::SamplingOptions sampling;
    data::SynthesisOptions synthesis;
    bool include_agreement = false;  // experimental: also sample non-conflict quadrants

    static RunConfig from_json_file(const std::string& path);
    void apply_json(const std::string& json_text);
};

/// Builds the configured backend behind a caching client.
backend::Client make_client(const RunConfig& config, std::shared_ptr<backend::Backend> backend);
std::shared_ptr<backend::Backend> make_backend(const RunConfig& config);

struct EvaluationOutputs {
    std::string decisions_jsonl;
    std::vector<metrics::MethodReport> reports;
    metrics::FormattedReports formatted;
};

/// Expands eval pairs, runs every configured method, judges the decisions,
/// and aggregates reports. Deterministic: results are keyed by
/// (method, instance, condition) and emitted in that order regardless of
/// completion order.
EvaluationOutputs run_evaluation(const RunConfig& config, backend::Client& client,
                                 const prompts::PromptLibrary& library);

/// Fits decision thresholds on a dev calibration set and writes artifacts.
std::vector<std::string> run_tune(const RunConfig& config, backend::Client& client,
                                  const prompts::PromptLibrary& library);

/// Fits isotonic maps and percentile references and writes artifacts.
std::vector<std::string> run_calibrate(const RunConfig& config, backend::Client& client,
                                       const prompts::PromptLibrary& library);

struct CrdpoOutputs {
    std::vector<crdpo::PreferencePair> pairs;
    std::size_t instances_seen = 0;
    std::size_t instances_eligible = 0;
};

/// Classifies train instances into conflict patterns and dual-samples
/// preference pairs; emit_training_bundle writes the results.
CrdpoOutputs run_gen_crdpo(const RunConfig& config, backend::Client& client,
                           const prompts::PromptLibrary& library);

/// Entry point for the command-line tool; args exclude the program name.
/// Subcommands: evaluate, tune, calibrate, gen-crdpo, synth-contexts, report.
int dispatch(const std::vector<std::string>& args);

}  // namespace sitfaith::cli
