#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sitfaith/backend.hpp"
#include "sitfaith/confidence.hpp"
#include "sitfaith/data.hpp"
#include "sitfaith/prompts.hpp"

namespace sitfaith::methods {

enum class BaseMethod {
    ClosedBook,
    DIA,
    TACS_LR,
    ImplicitSCR,
    ExplicitSCR,
    InternalEval,
    ContextEval,
    InternalConf,
    ContextConf,
    TPC,
    CTPC,
};

/// Stable method identifier: base name plus enhancement modifiers, written
/// e.g. "internal_conf+sc+tuned". "tpc+percentile" parses to CTPC.
struct MethodId {
    BaseMethod base = BaseMethod::DIA;
    bool threshold_tuned = false;
    bool isotonic_calibrated = false;
    bool self_consistency = false;

    std::string to_string() const;
    static MethodId parse(const std::string& text);
    /// Modifiers are only valid on InternalConf/ContextConf.
    void validate() const;

    bool operator==(const MethodId&) const = default;
};

struct AnswerRecord {
    std::string raw;     // full completion text
    std::string answer;  // extracted answer
    std::vector<double> answer_logprobs;  // logprobs of the answer's tokens, if requested
    std::optional<double> confidence;
    confidence::ConfidenceSource source = confidence::ConfidenceSource::Internal;
};

enum class DecisionSource { Internal, Context, Blended };

std::string decision_source_string(DecisionSource source);

struct TraceStep {
    std::string name;
    std::string detail;  // prompt digest or rule inputs
    std::string output;
};

struct Decision {
    std::string final_answer;
    DecisionSource source = DecisionSource::Blended;
    std::vector<TraceStep> trace;
    std::optional<double> internal_confidence;
    std::optional<double> context_confidence;
};

enum class Rule {
    EvalInternal,
    EvalContext,
    ThresholdInternal,
    ThresholdContext,
    CompareRaw,
    ComparePercentile,
};

struct RuleSpec {
    Rule rule = Rule::CompareRaw;
    std::optional<double> threshold;
    std::optional<std::vector<double>> internal_reference;  // compare_percentile
    std::optional<std::vector<double>> context_reference;
};

/// Pure selector over the internal/context answer pair. Thresholds use a
/// strict ">"; raw and percentile comparisons break ties toward internal.
Decision rule_select(const AnswerRecord& internal, const AnswerRecord& context,
                     const RuleSpec& spec, std::optional<bool> verdict = std::nullopt);

// --- pipelines ---------------------------------------------------------------

struct GenerationDefaults {
    int answer_max_tokens = 64;
    int reasoning_max_tokens = 512;
    int sc_samples = 10;
    double sc_temperature = 1.0;
    std::optional<std::uint64_t> seed;  // forwarded on sampled generations
};

struct Env {
    backend::Client& client;
    const prompts::PromptLibrary& prompts;
    GenerationDefaults gen;
};

// Request builders are exposed so tests can script exact digests.
backend::GenerationRequest make_closed_book_request(const Env& env,
                                                    const data::QAInstance& instance);
backend::GenerationRequest make_context_answer_request(const Env& env,
                                                       const data::QAInstance& instance,
                                                       const std::string& document);
backend::GenerationRequest make_dia_request(const Env& env, const data::QAInstance& instance,
                                            const std::string& document);
backend::GenerationRequest make_implicit_scr_request(const Env& env,
                                                     const data::QAInstance& instance,
                                                     const std::string& document);
backend::GenerationRequest make_explicit_scr_request(const Env& env, const std::string& question,
                                                     const std::string& internal_answer,
                                                     const std::string& document,
                                                     const std::string& doc_answer);
backend::GenerationRequest make_internal_eval_request(const Env& env, const std::string& question,
                                                      const std::string& internal_answer);
backend::GenerationRequest make_context_eval_request(const Env& env, const std::string& question,
                                                     const std::string& document);
backend::GenerationRequest make_filter_context_request(const Env& env,
                                                       const data::QAInstance& instance,
                                                       const std::string& document);
backend::GenerationRequest make_self_consistency_request(const Env& env,
                                                         backend::GenerationRequest base);

/// Extracted answer with its character span in the completion text.
struct Extraction {
    std::string answer;
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// First non-empty line, an optional leading "Answer:" label removed.
Extraction extract_first_line_answer(const std::string& text);
/// Last non-empty line with surrounding markup (*, `, #) stripped.
Extraction extract_last_line_answer(const std::string& text);

/// Logprobs of the tokens overlapping the extracted answer span.
std::vector<double> answer_token_logprobs(const backend::Sample& sample,
                                          const Extraction& extraction);

/// Closed-book answer (no context). Always requests logprobs so the record
/// doubles as the internal answer for rule-based pipelines.
AnswerRecord run_closed_book(const Env& env, const data::QAInstance& instance);

/// Context-faithful answer under the given condition's document.
AnswerRecord run_context_answer(const Env& env, const data::QAInstance& instance,
                                data::EvalCondition condition);

Decision run_dia(const Env& env, const data::QAInstance& instance, data::EvalCondition condition);
Decision run_tacs_lr(const Env& env, const data::QAInstance& instance,
                     data::EvalCondition condition);
Decision run_implicit_scr(const Env& env, const data::QAInstance& instance,
                          data::EvalCondition condition);
Decision run_explicit_scr(const Env& env, const data::QAInstance& instance,
                          data::EvalCondition condition);

/// Calibration artifacts required by modifier flags and CTPC.
struct CalibrationInputs {
    std::optional<double> tuned_threshold;
    std::optional<double> default_threshold;  // overrides the 0.5 default gate
    std::optional<confidence::IsotonicMap> isotonic;  // for the gated source
    std::optional<std::vector<double>> internal_percentile_reference;
    std::optional<std::vector<double>> context_percentile_reference;
};

/// Dispatches to the pipeline for `method`; for rule-based methods, obtains
/// internal and context answers, the required confidences or verdicts, and
/// applies rule_select. Deterministic given a scripted backend.
Decision run_method(const Env& env, const MethodId& method, const data::QAInstance& instance,
                    data::EvalCondition condition, const CalibrationInputs& calibration = {});

}  // namespace sitfaith::methods
