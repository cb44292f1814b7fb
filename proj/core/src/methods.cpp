#include "sitfaith/methods.hpp"

#include <algorithm>
#include <cstdio>

#include "sitfaith/correctness.hpp"
#include "sitfaith/util.hpp"

namespace sitfaith::methods {

using backend::GenerationRequest;
using backend::Sample;
using confidence::ConfidenceSource;
using data::EvalCondition;
using data::QAInstance;
using prompts::TemplateName;

namespace {

struct BaseEntry {
    BaseMethod base;
    const char* str;
};

constexpr BaseEntry kBases[] = {
    {BaseMethod::ClosedBook, "closed_book"},
    {BaseMethod::DIA, "dia"},
    {BaseMethod::TACS_LR, "tacs_lr"},
    {BaseMethod::ImplicitSCR, "implicit_scr"},
    {BaseMethod::ExplicitSCR, "explicit_scr"},
    {BaseMethod::InternalEval, "internal_eval"},
    {BaseMethod::ContextEval, "context_eval"},
    {BaseMethod::InternalConf, "internal_conf"},
    {BaseMethod::ContextConf, "context_conf"},
    {BaseMethod::TPC, "tpc"},
    {BaseMethod::CTPC, "ctpc"},
};

std::string base_string(BaseMethod base) {
    for (const BaseEntry& e : kBases) {
        if (e.base == base) return e.str;
    }
    throw Error("unknown method");
}

std::string fmt_double(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", value);
    return buf;
}

}  // namespace

std::string MethodId::to_string() const {
    std::string out = base_string(base);
    if (self_consistency) out += "+sc";
    if (isotonic_calibrated) out += "+iso";
    if (threshold_tuned) out += "+tuned";
    return out;
}

MethodId MethodId::parse(const std::string& text) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t plus = text.find('+', start);
        if (plus == std::string::npos) {
            parts.push_back(text.substr(start));
            break;
        }
        parts.push_back(text.substr(start, plus - start));
        start = plus + 1;
    }
    MethodId id;
    bool found = false;
    for (const BaseEntry& e : kBases) {
        if (parts.front() == e.str) {
            id.base = e.base;
            found = true;
            break;
        }
    }
    if (!found) throw Error("unknown method: " + text);
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const std::string& mod = parts[i];
        if (mod == "tuned") {
            id.threshold_tuned = true;
        } else if (mod == "iso") {
            id.isotonic_calibrated = true;
        } else if (mod == "sc") {
            id.self_consistency = true;
        } else if (mod == "percentile" && id.base == BaseMethod::TPC) {
            id.base = BaseMethod::CTPC;
        } else {
            throw Error("unknown method modifier \"" + mod + "\" in " + text);
        }
    }
    id.validate();
    return id;
}

void MethodId::validate() const {
    const bool any_modifier = threshold_tuned || isotonic_calibrated || self_consistency;
    if (any_modifier && base != BaseMethod::InternalConf && base != BaseMethod::ContextConf) {
        throw Error("modifiers are only valid on internal_conf/context_conf: " + to_string());
    }
}

std::string decision_source_string(DecisionSource source) {
    switch (source) {
        case DecisionSource::Internal: return "internal";
        case DecisionSource::Context: return "context";
        case DecisionSource::Blended: return "blended";
    }
    throw Error("unknown decision source");
}

// --- answer extraction --------------------------------------------------------

namespace {

Extraction extract_line(const std::string& text, bool last, bool strip_markup) {
    // Locate the target line's byte span.
    std::size_t best_begin = std::string::npos;
    std::size_t best_end = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        std::size_t line_end = nl == std::string::npos ? text.size() : nl;
        if (!util::trim(text.substr(pos, line_end - pos)).empty()) {
            best_begin = pos;
            best_end = line_end;
            if (!last) break;
        }
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    if (best_begin == std::string::npos) {
        throw Error("answer extraction failed: completion is empty");
    }

    std::size_t begin = best_begin;
    std::size_t end = best_end;
    auto is_trim_char = [strip_markup](char c) {
        if (std::isspace(static_cast<unsigned char>(c))) return true;
        return strip_markup && (c == '*' || c == '`' || c == '#');
    };
    while (begin < end && is_trim_char(text[begin])) ++begin;
    while (end > begin && is_trim_char(text[end - 1])) --end;
    if (util::starts_with_ci(text.substr(begin, end - begin), "answer:")) {
        begin += std::string("answer:").size();
        while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
    }
    if (begin >= end) throw Error("answer extraction failed: empty answer line");
    return Extraction{text.substr(begin, end - begin), begin, end};
}

}  // namespace

Extraction extract_first_line_answer(const std::string& text) {
    return extract_line(text, /*last=*/false, /*strip_markup=*/false);
}

Extraction extract_last_line_answer(const std::string& text) {
    return extract_line(text, /*last=*/true, /*strip_markup=*/true);
}

std::vector<double> answer_token_logprobs(const Sample& sample, const Extraction& extraction) {
    if (!sample.logprobs) throw Error("sample carries no logprobs");
    std::vector<double> out;
    std::size_t offset = 0;
    for (const backend::TokenLogprob& tl : *sample.logprobs) {
        const std::size_t token_begin = offset;
        const std::size_t token_end = offset + tl.token.size();
        if (token_begin < extraction.end && token_end > extraction.begin) {
            out.push_back(tl.logprob);
        }
        offset = token_end;
    }
    if (out.empty()) {
        throw Error("could not align any token with the extracted answer \"" +
                    extraction.answer + "\"");
    }
    return out;
}

// --- request builders -----------------------------------------------------------

GenerationRequest make_closed_book_request(const Env& env, const QAInstance& instance) {
    GenerationRequest request;
    request.messages = env.prompts.render_messages(TemplateName::ClosedBook,
                                                   {{"question", instance.question}});
    request.max_tokens = env.gen.answer_max_tokens;
    request.want_logprobs = true;
    return request;
}

GenerationRequest make_context_answer_request(const Env& env, const QAInstance& instance,
                                              const std::string& document) {
    GenerationRequest request;
    request.messages = env.prompts.render_messages(
        TemplateName::ContextFaithfulAnswer,
        {{"question", instance.question}, {"document", document}});
    request.max_tokens = env.gen.answer_max_tokens;
    request.want_logprobs = true;
    return request;
}

GenerationRequest make_dia_request(const Env& env, const QAInstance& instance,
                                   const std::string& document) {
    GenerationRequest request;
    request.messages = env.prompts.render_messages(
        TemplateName::Dia, {{"question", instance.question}, {"document", document}});
    request.max_tokens = env.gen.answer_max_tokens;
    return request;
}

GenerationRequest make_implicit_scr_request(const Env& env, const QAInstance& instance,
                                            const std::string& document) {
    GenerationRequest request;
    request.messages = env.prompts.render_messages(
        TemplateName::ImplicitScr, {{"question", instance.question}, {"document", document}});
    request.max_tokens = env.gen.answer_max_tokens;
    return request;
}

GenerationRequest make_explicit_scr_request(const Env& env, const std::string& question,
                                            const std::string& internal_answer,
                                            const std::string& document,
                                            const std::string& doc_answer) {
    GenerationRequest request;
    request.messages = env.prompts.render_messages(TemplateName::ExplicitScr,
                                                   {{"question", question},
                                                    {"internal_answer", internal_answer},
                                                    {"document", document},
                                                    {"doc_answer", doc_answer}});
    request.max_tokens = env.gen.reasoning_max_tokens;
    return request;
}

GenerationRequest make_internal_eval_request(const Env& env, const std::string& question,
                                             const std::string& internal_answer) {
    GenerationRequest request;
    request.messages = env.prompts.render_messages(
        TemplateName::InternalEval,
        {{"question", question}, {"model_answer", internal_answer}});
    request.max_tokens = 8;
    return request;
}

GenerationRequest make_context_eval_request(const Env& env, const std::string& question,
                                            const std::string& document) {
    GenerationRequest request;
    request.messages = env.prompts.render_messages(
        TemplateName::ContextEval, {{"question", question}, {"document", document}});
    request.max_tokens = 8;
    return request;
}

GenerationRequest make_filter_context_request(const Env& env, const QAInstance& instance,
                                              const std::string& document) {
    GenerationRequest request;
    request.messages = env.prompts.render_messages(
        TemplateName::FilterContext,
        {{"question", instance.question}, {"document", document}});
    request.max_tokens = env.gen.reasoning_max_tokens;
    return request;
}

GenerationRequest make_self_consistency_request(const Env& env, GenerationRequest base) {
    base.temperature = env.gen.sc_temperature;
    base.n_samples = env.gen.sc_samples;
    base.want_logprobs = false;
    base.seed = env.gen.seed;
    return base;
}

// --- pipelines -------------------------------------------------------------------

namespace {

void require_context(EvalCondition condition, const char* method) {
    if (condition == EvalCondition::NoContext) {
        throw Error(std::string(method) + " requires a context condition");
    }
}

AnswerRecord answer_from_sample(const Sample& sample, ConfidenceSource source, bool last_line) {
    AnswerRecord record;
    record.raw = sample.text;
    record.source = source;
    const Extraction extraction =
        last_line ? extract_last_line_answer(sample.text) : extract_first_line_answer(sample.text);
    record.answer = extraction.answer;
    if (sample.logprobs) {
        record.answer_logprobs = answer_token_logprobs(sample, extraction);
    }
    return record;
}

TraceStep prompt_step(const Env& env, const std::string& name, const GenerationRequest& request,
                      const std::string& output) {
    return TraceStep{name, env.client.digest(request), output};
}

bool parse_eval_verdict(const std::string& reply, const std::string& instance_id) {
    const std::string word = util::trim(reply);
    if (util::starts_with_ci(word, "true")) return true;
    if (util::starts_with_ci(word, "false")) return false;
    throw Error("unparseable eval verdict for instance " + instance_id + ": \"" + word + "\"");
}

std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> sentences;
    std::string current;
    for (char c : text) {
        current.push_back(c);
        if (c == '.' || c == '!' || c == '?') {
            const std::string trimmed = util::trim(current);
            if (!trimmed.empty()) sentences.push_back(trimmed);
            current.clear();
        }
    }
    const std::string trimmed = util::trim(current);
    if (!trimmed.empty()) sentences.push_back(trimmed);
    return sentences;
}

bool is_sentence_subsequence(const std::string& filtered, const std::string& original) {
    std::vector<std::string> filtered_sentences;
    for (const std::string& s : split_sentences(filtered)) {
        filtered_sentences.push_back(correctness::normalize(s));
    }
    std::vector<std::string> original_sentences;
    for (const std::string& s : split_sentences(original)) {
        original_sentences.push_back(correctness::normalize(s));
    }
    std::size_t oi = 0;
    for (const std::string& sentence : filtered_sentences) {
        bool matched = false;
        while (oi < original_sentences.size()) {
            if (original_sentences[oi++] == sentence) {
                matched = true;
                break;
            }
        }
        if (!matched) return false;
    }
    return true;
}

}  // namespace

AnswerRecord run_closed_book(const Env& env, const QAInstance& instance) {
    const GenerationRequest request = make_closed_book_request(env, instance);
    const backend::GenerationResponse response = env.client.generate(request);
    return answer_from_sample(response.single(), ConfidenceSource::Internal, false);
}

AnswerRecord run_context_answer(const Env& env, const QAInstance& instance,
                                EvalCondition condition) {
    require_context(condition, "context answer");
    const std::string& document = data::context_for(instance, condition);
    const GenerationRequest request = make_context_answer_request(env, instance, document);
    const backend::GenerationResponse response = env.client.generate(request);
    return answer_from_sample(response.single(), ConfidenceSource::Context, false);
}

Decision run_dia(const Env& env, const QAInstance& instance, EvalCondition condition) {
    require_context(condition, "dia");
    const std::string& document = data::context_for(instance, condition);
    const GenerationRequest request = make_dia_request(env, instance, document);
    const backend::GenerationResponse response = env.client.generate(request);
    const Extraction extraction = extract_first_line_answer(response.single().text);
    Decision decision;
    decision.final_answer = extraction.answer;
    decision.source = DecisionSource::Blended;
    decision.trace.push_back(prompt_step(env, "dia", request, decision.final_answer));
    return decision;
}

Decision run_tacs_lr(const Env& env, const QAInstance& instance, EvalCondition condition) {
    require_context(condition, "tacs_lr");
    const std::string& document = data::context_for(instance, condition);
    const GenerationRequest filter_request = make_filter_context_request(env, instance, document);
    std::string filtered = util::trim(env.client.generate(filter_request).single().text);

    Decision decision;
    decision.trace.push_back(prompt_step(env, "filter_context", filter_request, filtered));
    if (!is_sentence_subsequence(filtered, document)) {
        // The filter may only remove sentences; anything else falls back to
        // the original context.
        decision.trace.push_back(TraceStep{"removal_violation", "", "using original context"});
        filtered = document;
    }

    const GenerationRequest dia_request = make_dia_request(env, instance, filtered);
    const backend::GenerationResponse response = env.client.generate(dia_request);
    const Extraction extraction = extract_first_line_answer(response.single().text);
    decision.final_answer = extraction.answer;
    decision.source = DecisionSource::Blended;
    decision.trace.push_back(prompt_step(env, "dia_filtered", dia_request, decision.final_answer));
    return decision;
}

Decision run_implicit_scr(const Env& env, const QAInstance& instance, EvalCondition condition) {
    require_context(condition, "implicit_scr");
    const std::string& document = data::context_for(instance, condition);
    const GenerationRequest request = make_implicit_scr_request(env, instance, document);
    const backend::GenerationResponse response = env.client.generate(request);
    const Extraction extraction = extract_first_line_answer(response.single().text);
    Decision decision;
    decision.final_answer = extraction.answer;
    decision.source = DecisionSource::Blended;
    decision.trace.push_back(prompt_step(env, "implicit_scr", request, decision.final_answer));
    return decision;
}

Decision run_explicit_scr(const Env& env, const QAInstance& instance, EvalCondition condition) {
    require_context(condition, "explicit_scr");
    const std::string& document = data::context_for(instance, condition);

    const AnswerRecord internal = run_closed_book(env, instance);
    const AnswerRecord context = run_context_answer(env, instance, condition);

    const GenerationRequest judgment = make_explicit_scr_request(
        env, instance.question, internal.answer, document, context.answer);
    const backend::GenerationResponse response = env.client.generate(judgment);
    const Extraction extraction = extract_last_line_answer(response.single().text);

    Decision decision;
    decision.final_answer = extraction.answer;
    decision.source = DecisionSource::Blended;
    decision.trace.push_back(prompt_step(env, "internal_answer",
                                         make_closed_book_request(env, instance),
                                         internal.answer));
    decision.trace.push_back(prompt_step(env, "context_answer",
                                         make_context_answer_request(env, instance, document),
                                         context.answer));
    decision.trace.push_back(prompt_step(env, "scr_judgment", judgment, decision.final_answer));
    return decision;
}

Decision rule_select(const AnswerRecord& internal, const AnswerRecord& context,
                     const RuleSpec& spec, std::optional<bool> verdict) {
    auto require_confidences = [&] {
        if (!internal.confidence || !context.confidence) {
            throw Error("rule_select: confidence required for this rule");
        }
    };
    auto pick = [&](bool use_internal, const std::string& rule_name,
                    const std::string& detail) {
        Decision decision;
        decision.final_answer = use_internal ? internal.answer : context.answer;
        decision.source = use_internal ? DecisionSource::Internal : DecisionSource::Context;
        decision.internal_confidence = internal.confidence;
        decision.context_confidence = context.confidence;
        decision.trace.push_back(
            TraceStep{rule_name, detail, use_internal ? "internal" : "context"});
        return decision;
    };

    switch (spec.rule) {
        case Rule::EvalInternal: {
            if (!verdict) throw Error("rule_select: eval_internal requires a verdict");
            return pick(*verdict, "eval_internal", *verdict ? "verdict=True" : "verdict=False");
        }
        case Rule::EvalContext: {
            if (!verdict) throw Error("rule_select: eval_context requires a verdict");
            return pick(!*verdict, "eval_context", *verdict ? "verdict=True" : "verdict=False");
        }
        case Rule::ThresholdInternal: {
            require_confidences();
            if (!spec.threshold) throw Error("rule_select: threshold_internal needs a threshold");
            const bool use_internal = *internal.confidence > *spec.threshold;
            return pick(use_internal, "threshold_internal",
                        "conf=" + fmt_double(*internal.confidence) +
                            " threshold=" + fmt_double(*spec.threshold));
        }
        case Rule::ThresholdContext: {
            require_confidences();
            if (!spec.threshold) throw Error("rule_select: threshold_context needs a threshold");
            const bool use_context = *context.confidence > *spec.threshold;
            return pick(!use_context, "threshold_context",
                        "conf=" + fmt_double(*context.confidence) +
                            " threshold=" + fmt_double(*spec.threshold));
        }
        case Rule::CompareRaw: {
            require_confidences();
            const bool use_internal = *internal.confidence >= *context.confidence;
            return pick(use_internal, "compare_raw",
                        "internal=" + fmt_double(*internal.confidence) +
                            " context=" + fmt_double(*context.confidence));
        }
        case Rule::ComparePercentile: {
            require_confidences();
            if (!spec.internal_reference || !spec.context_reference) {
                throw Error("rule_select: compare_percentile needs both reference lists");
            }
            const double internal_pct =
                confidence::percentile(*internal.confidence, *spec.internal_reference);
            const double context_pct =
                confidence::percentile(*context.confidence, *spec.context_reference);
            const bool use_internal = internal_pct >= context_pct;
            return pick(use_internal, "compare_percentile",
                        "internal_pct=" + fmt_double(internal_pct) +
                            " context_pct=" + fmt_double(context_pct));
        }
    }
    throw Error("unknown rule");
}

namespace {

double self_consistency_confidence(const Env& env, const GenerationRequest& base,
                                   const std::string& reference) {
    const GenerationRequest request = make_self_consistency_request(env, base);
    const backend::GenerationResponse response = env.client.generate(request);
    std::vector<std::string> texts;
    for (const Sample& sample : response.samples) texts.push_back(sample.text);
    return confidence::self_consistency(texts, reference);
}

double gate_confidence(const Env& env, const MethodId& method, const AnswerRecord& record,
                       const GenerationRequest& base_request,
                       const CalibrationInputs& calibration) {
    double conf;
    if (method.self_consistency) {
        conf = self_consistency_confidence(env, base_request, record.answer);
    } else {
        conf = confidence::answer_confidence(record.answer_logprobs);
    }
    if (method.isotonic_calibrated) {
        if (!calibration.isotonic) {
            throw Error("method " + method.to_string() + " needs an isotonic calibration map");
        }
        conf = confidence::isotonic_apply(*calibration.isotonic, conf);
    }
    return conf;
}

double resolve_threshold(const MethodId& method, const CalibrationInputs& calibration) {
    if (!method.threshold_tuned) return calibration.default_threshold.value_or(0.5);
    if (!calibration.tuned_threshold) {
        throw Error("method " + method.to_string() + " needs a tuned threshold artifact");
    }
    return *calibration.tuned_threshold;
}

}  // namespace

Decision run_method(const Env& env, const MethodId& method, const QAInstance& instance,
                    EvalCondition condition, const CalibrationInputs& calibration) {
    method.validate();
    switch (method.base) {
        case BaseMethod::ClosedBook: {
            const AnswerRecord internal = run_closed_book(env, instance);
            Decision decision;
            decision.final_answer = internal.answer;
            decision.source = DecisionSource::Internal;
            decision.trace.push_back(prompt_step(env, "closed_book",
                                                 make_closed_book_request(env, instance),
                                                 internal.answer));
            return decision;
        }
        case BaseMethod::DIA:
            return run_dia(env, instance, condition);
        case BaseMethod::TACS_LR:
            return run_tacs_lr(env, instance, condition);
        case BaseMethod::ImplicitSCR:
            return run_implicit_scr(env, instance, condition);
        case BaseMethod::ExplicitSCR:
            return run_explicit_scr(env, instance, condition);
        default:
            break;
    }

    // Rule-based methods: internal answer + context-faithful answer, then select.
    require_context(condition, method.to_string().c_str());
    const std::string& document = data::context_for(instance, condition);
    AnswerRecord internal = run_closed_book(env, instance);
    AnswerRecord context = run_context_answer(env, instance, condition);

    auto finish = [&](Decision selected) {
        std::vector<TraceStep> trace;
        trace.push_back(TraceStep{"internal_answer",
                                  env.client.digest(make_closed_book_request(env, instance)),
                                  internal.answer});
        trace.push_back(TraceStep{
            "context_answer",
            env.client.digest(make_context_answer_request(env, instance, document)),
            context.answer});
        for (TraceStep& step : selected.trace) trace.push_back(std::move(step));
        selected.trace = std::move(trace);
        return selected;
    };

    switch (method.base) {
        case BaseMethod::InternalEval: {
            const GenerationRequest request =
                make_internal_eval_request(env, instance.question, internal.answer);
            const std::string reply = env.client.generate(request).single().text;
            const bool verdict = parse_eval_verdict(reply, instance.id);
            Decision selected = rule_select(internal, context,
                                            RuleSpec{Rule::EvalInternal}, verdict);
            selected.trace.insert(selected.trace.begin(),
                                  prompt_step(env, "internal_eval", request, reply));
            return finish(std::move(selected));
        }
        case BaseMethod::ContextEval: {
            const GenerationRequest request =
                make_context_eval_request(env, instance.question, document);
            const std::string reply = env.client.generate(request).single().text;
            const bool verdict = parse_eval_verdict(reply, instance.id);
            Decision selected = rule_select(internal, context,
                                            RuleSpec{Rule::EvalContext}, verdict);
            selected.trace.insert(selected.trace.begin(),
                                  prompt_step(env, "context_eval", request, reply));
            return finish(std::move(selected));
        }
        case BaseMethod::InternalConf: {
            internal.confidence = gate_confidence(env, method, internal,
                                                  make_closed_book_request(env, instance),
                                                  calibration);
            context.confidence = confidence::answer_confidence(context.answer_logprobs);
            RuleSpec spec{Rule::ThresholdInternal};
            spec.threshold = resolve_threshold(method, calibration);
            return finish(rule_select(internal, context, spec));
        }
        case BaseMethod::ContextConf: {
            context.confidence = gate_confidence(
                env, method, context, make_context_answer_request(env, instance, document),
                calibration);
            internal.confidence = confidence::answer_confidence(internal.answer_logprobs);
            RuleSpec spec{Rule::ThresholdContext};
            spec.threshold = resolve_threshold(method, calibration);
            return finish(rule_select(internal, context, spec));
        }
        case BaseMethod::TPC: {
            internal.confidence = confidence::answer_confidence(internal.answer_logprobs);
            context.confidence = confidence::answer_confidence(context.answer_logprobs);
            return finish(rule_select(internal, context, RuleSpec{Rule::CompareRaw}));
        }
        case BaseMethod::CTPC: {
            internal.confidence = confidence::answer_confidence(internal.answer_logprobs);
            context.confidence = confidence::answer_confidence(context.answer_logprobs);
            if (!calibration.internal_percentile_reference ||
                !calibration.context_percentile_reference) {
                throw Error("ctpc needs percentile reference lists for both sources "
                            "(instance " + instance.id + ")");
            }
            RuleSpec spec{Rule::ComparePercentile};
            spec.internal_reference = calibration.internal_percentile_reference;
            spec.context_reference = calibration.context_percentile_reference;
            return finish(rule_select(internal, context, spec));
        }
        default:
            throw Error("unhandled method: " + method.to_string());
    }
}

}  // namespace sitfaith::methods
