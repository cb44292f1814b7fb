#pragma once

// Shared helpers for the test suites: fixture locations, a scripted mock
// environment, and the hand-designed reply script for the 6-instance fixture.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "sitfaith/backend.hpp"
#include "sitfaith/crdpo.hpp"
#include "sitfaith/data.hpp"
#include "sitfaith/methods.hpp"
#include "sitfaith/prompts.hpp"

#ifndef SITFAITH_TEST_DIR
#error "SITFAITH_TEST_DIR must be defined by the build"
#endif

namespace sitfaith::testing {

inline std::string test_dir() { return SITFAITH_TEST_DIR; }
inline std::string fixture_path(const std::string& name) {
    return test_dir() + "/fixtures/" + name;
}
inline std::string golden_path(const std::string& name) {
    return test_dir() + "/golden/" + name;
}

/// Scripted-mock environment owning everything a pipeline needs.
struct MockEnv {
    std::shared_ptr<backend::MockBackend> mock;
    std::unique_ptr<backend::Client> client;
    std::unique_ptr<prompts::PromptLibrary> library;
    methods::GenerationDefaults gen;

    explicit MockEnv(const std::string& cache_dir = "", int max_concurrent = 4) {
        mock = std::make_shared<backend::MockBackend>();
        backend::BackendConfig config;
        config.cache_dir = cache_dir;
        config.max_concurrent = max_concurrent;
        client = std::make_unique<backend::Client>(mock, config);
        library = std::make_unique<prompts::PromptLibrary>(prompts::default_prompt_dir());
    }

    methods::Env env() { return methods::Env{*client, *library, gen}; }
};

/// One token with probability p (logprob ln p).
inline backend::Sample tokens(std::initializer_list<std::pair<const char*, double>> parts) {
    backend::Sample sample;
    std::vector<backend::TokenLogprob> lps;
    for (const auto& [text, prob] : parts) {
        sample.text += text;
        lps.push_back({text, std::log(prob)});
    }
    sample.logprobs = std::move(lps);
    return sample;
}

inline backend::Sample plain(const std::string& text) {
    return backend::Sample{text, std::nullopt};
}

/// Per-instance reply plan for the 6-instance fixture. Confidences are the
/// means of exp(logprob) over the scripted answer tokens.
struct FixturePlan {
    std::string id;
    backend::Sample internal_answer;       // closed_book reply (with logprobs)
    backend::Sample context_answer_true;   // context-faithful reply, correct context
    backend::Sample context_answer_false;  // context-faithful reply, wrong context
    std::string dia_true, dia_false;
    std::string iscr_true, iscr_false;
    std::string escr_true, escr_false;  // full CoT replies
    std::string internal_eval_verdict;  // "True" / "False"
};

inline std::string cot(const std::string& reasoning, const std::string& final_answer) {
    return reasoning + "\nTherefore, the final answer is:\n" + final_answer;
}

/// Hand-designed script: internal answers are correct for f1/f3/f5 and wrong
/// for f2/f4/f6; context answers echo whichever context is shown. Confidences
/// sit on a 0.01+ margin away from every gate, comparison, and percentile
/// reference value, so decisions are stable to floating-point noise.
inline std::vector<FixturePlan> fixture_plans() {
    std::vector<FixturePlan> plans;
    plans.push_back({"f1",
                     tokens({{"Copenhagen", 0.9}}),
                     tokens({{"Copenhagen", 0.75}}),
                     tokens({{"Aarhus", 0.93}}),
                     "Copenhagen", "Aarhus",
                     "Copenhagen", "Copenhagen",
                     cot("The document matches what I know about Denmark.", "Copenhagen"),
                     cot("The document claims Aarhus, but the Danish parliament sits in "
                         "Copenhagen, so the document is deceptive.",
                         "Copenhagen"),
                     "True"});
    plans.push_back({"f2",
                     tokens({{"Jupiter", 0.3}}),
                     tokens({{"Mars", 0.91}}),
                     tokens({{"Venus", 0.86}}),
                     "Mars", "Venus",
                     "Mars", "Venus",
                     cot("I was unsure about my internal answer; the document's iron oxide "
                         "explanation is convincing.",
                         "Mars"),
                     cot("I had little confidence in my own answer, so I follow the document.",
                         "Venus"),
                     "False"});
    plans.push_back({"f3",
                     tokens({{"Jane", 0.7}, {" Austen", 0.5}}),
                     tokens({{"Jane", 0.8}, {" Austen", 0.6}}),
                     tokens({{"Charlotte", 0.6}, {" Bronte", 0.5}}),
                     "Jane Austen", "Jane Austen",
                     "Jane Austen", "Jane Austen",
                     cot("The document agrees with my knowledge of the novel.", "Jane Austen"),
                     cot("The document gives publication details that sound plausible, so I "
                         "follow its author attribution.",
                         "Charlotte Bronte"),
                     "True"});
    plans.push_back({"f4",
                     tokens({{"Ag", 0.4}}),
                     tokens({{"Au", 0.93}}),
                     tokens({{"Gd", 0.89}}),
                     "Au", "Gd",
                     "Au", "Gd",
                     cot("The document cites the Latin aurum, which corrects my confusion "
                         "with silver.",
                         "Au"),
                     cot("The document cites a Latin origin, so I adopt its symbol.", "Gd"),
                     "False"});
    plans.push_back({"f5",
                     tokens({{"seven", 0.58}}),
                     tokens({{"seven", 0.45}}),
                     tokens({{"five", 0.91}}),
                     "seven", "five",
                     "seven", "seven",
                     cot("The document lists the continents I remember.", "seven"),
                     cot("Geographers have not merged the Americas and Eurasia; the document "
                         "is deceptive.",
                         "seven"),
                     "True"});
    plans.push_back({"f6",
                     tokens({{"1967", 0.2}}),
                     tokens({{"1969", 0.93}}),
                     tokens({{"1972", 0.99}}),
                     "1969", "1972",
                     "1969", "1972",
                     cot("My memory of the landing year feels reliable despite the document.",
                         "1967"),
                     cot("The document's date is later than I remembered, but it is detailed, "
                         "so I follow it.",
                         "1972"),
                     "True"});
    return plans;
}

/// Percentile reference lists for CTPC: uniform internal scores vs
/// right-skewed context scores.
inline std::vector<double> internal_reference() {
    return {0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95};
}
inline std::vector<double> context_reference() {
    return {0.80, 0.85, 0.88, 0.90, 0.92, 0.94, 0.95, 0.96, 0.97, 0.98};
}

/// Registers the full reply script for the given instances on a mock, using
/// the same request builders the pipelines use.
inline void script_fixture(backend::MockBackend& mock, const methods::Env& env,
                           const std::vector<data::QAInstance>& instances) {
    const auto plans = fixture_plans();
    for (const data::QAInstance& instance : instances) {
        const FixturePlan* plan = nullptr;
        for (const FixturePlan& p : plans) {
            if (p.id == instance.id) {
                plan = &p;
                break;
            }
        }
        if (plan == nullptr) throw Error("no fixture plan for instance " + instance.id);

        mock.script_request(methods::make_closed_book_request(env, instance),
                            {plan->internal_answer});
        mock.script_request(
            methods::make_context_answer_request(env, instance, instance.correct_context),
            {plan->context_answer_true});
        mock.script_request(
            methods::make_context_answer_request(env, instance, instance.wrong_context),
            {plan->context_answer_false});
        mock.script_request(make_dia_request(env, instance, instance.correct_context),
                            plan->dia_true);
        mock.script_request(make_dia_request(env, instance, instance.wrong_context),
                            plan->dia_false);
        mock.script_request(make_implicit_scr_request(env, instance, instance.correct_context),
                            plan->iscr_true);
        mock.script_request(make_implicit_scr_request(env, instance, instance.wrong_context),
                            plan->iscr_false);

        const std::string internal_answer =
            methods::extract_first_line_answer(plan->internal_answer.text).answer;
        const std::string ctx_true =
            methods::extract_first_line_answer(plan->context_answer_true.text).answer;
        const std::string ctx_false =
            methods::extract_first_line_answer(plan->context_answer_false.text).answer;
        mock.script_request(
            methods::make_explicit_scr_request(env, instance.question, internal_answer,
                                               instance.correct_context, ctx_true),
            plan->escr_true);
        mock.script_request(
            methods::make_explicit_scr_request(env, instance.question, internal_answer,
                                               instance.wrong_context, ctx_false),
            plan->escr_false);
        mock.script_request(
            methods::make_internal_eval_request(env, instance.question, internal_answer),
            plan->internal_eval_verdict);
    }
}

/// Same script serialized for `--backend mock --mock-script <file>` runs.
inline backend::MockScript fixture_script(const methods::Env& env,
                                          const std::vector<data::QAInstance>& instances) {
    backend::MockScript script;
    const auto plans = fixture_plans();
    auto add = [&](const backend::GenerationRequest& request, backend::Sample reply) {
        script.entries.push_back(backend::ScriptEntry{
            backend::request_digest(request, "mock"), "", {std::move(reply)}});
    };
    for (const data::QAInstance& instance : instances) {
        const FixturePlan* plan = nullptr;
        for (const FixturePlan& p : plans) {
            if (p.id == instance.id) plan = &p;
        }
        if (plan == nullptr) throw Error("no fixture plan for instance " + instance.id);
        add(methods::make_closed_book_request(env, instance), plan->internal_answer);
        add(methods::make_context_answer_request(env, instance, instance.correct_context),
            plan->context_answer_true);
        add(methods::make_context_answer_request(env, instance, instance.wrong_context),
            plan->context_answer_false);
        add(make_dia_request(env, instance, instance.correct_context), plain(plan->dia_true));
        add(make_dia_request(env, instance, instance.wrong_context), plain(plan->dia_false));
        add(make_implicit_scr_request(env, instance, instance.correct_context),
            plain(plan->iscr_true));
        add(make_implicit_scr_request(env, instance, instance.wrong_context),
            plain(plan->iscr_false));
        const std::string internal_answer =
            methods::extract_first_line_answer(plan->internal_answer.text).answer;
        const std::string ctx_true =
            methods::extract_first_line_answer(plan->context_answer_true.text).answer;
        const std::string ctx_false =
            methods::extract_first_line_answer(plan->context_answer_false.text).answer;
        add(methods::make_explicit_scr_request(env, instance.question, internal_answer,
                                               instance.correct_context, ctx_true),
            plain(plan->escr_true));
        add(methods::make_explicit_scr_request(env, instance.question, internal_answer,
                                               instance.wrong_context, ctx_false),
            plain(plan->escr_false));
        add(methods::make_internal_eval_request(env, instance.question, internal_answer),
            plain(plan->internal_eval_verdict));
    }
    return script;
}

}  // namespace sitfaith::testing
