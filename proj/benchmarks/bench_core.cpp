#include <benchmark/benchmark.h>

#include <cmath>
#include <string>
#include <vector>

#include "sitfaith/confidence.hpp"
#include "sitfaith/correctness.hpp"
#include "sitfaith/methods.hpp"
#include "sitfaith/prompts.hpp"
#include "sitfaith/util.hpp"

namespace {

using namespace sitfaith;

std::vector<std::pair<double, int>> random_fit_pairs(std::size_t n) {
    util::DetRng rng(17);
    std::vector<std::pair<double, int>> pairs;
    pairs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double score = rng.next_double();
        pairs.emplace_back(score, rng.next_double() < score ? 1 : 0);
    }
    return pairs;
}

void BM_Normalize(benchmark::State& state) {
    const std::string text =
        "The  Quick, Brown Fox! Jumped over the lazy dog's back; 12,345 times.";
    for (auto _ : state) {
        benchmark::DoNotOptimize(correctness::normalize(text));
    }
}
BENCHMARK(BM_Normalize);

void BM_ExactMatchRelaxed(benchmark::State& state) {
    const std::string response =
        "After weighing the document against everything I know, the final answer "
        "is: St. Francis Preparatory School.";
    const std::vector<std::string> golds = {"St. Francis Preparatory School", "St Francis Prep"};
    for (auto _ : state) {
        benchmark::DoNotOptimize(correctness::exact_match_relaxed(response, golds));
    }
}
BENCHMARK(BM_ExactMatchRelaxed);

void BM_TokenRecallTail(benchmark::State& state) {
    std::string response;
    for (int i = 0; i < 200; ++i) response += "word" + std::to_string(i) + " ";
    response += "therefore the final answer is New England Patriots";
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            correctness::token_recall_tail(response, "New England Patriots"));
    }
}
BENCHMARK(BM_TokenRecallTail);

void BM_IsotonicFit(benchmark::State& state) {
    const auto pairs = random_fit_pairs(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(confidence::isotonic_fit(pairs));
    }
}
BENCHMARK(BM_IsotonicFit)->Arg(100)->Arg(1000)->Arg(10000);

void BM_AucRoc(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    util::DetRng rng(23);
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) {
        scores.push_back(rng.next_double());
        labels.push_back(static_cast<int>(i % 2));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(confidence::auc_roc(scores, labels));
    }
}
BENCHMARK(BM_AucRoc)->Arg(1000)->Arg(10000);

void BM_TuneThreshold(benchmark::State& state) {
    util::DetRng rng(29);
    std::vector<confidence::ThresholdRecord> records;
    for (int i = 0; i < 1000; ++i) {
        records.push_back(confidence::ThresholdRecord{
            rng.next_double(), rng.next_below(2) == 1, rng.next_below(2) == 1,
            i % 2 == 0 ? data::EvalCondition::TrueContext : data::EvalCondition::FalseContext});
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            confidence::tune_threshold(records, confidence::ThresholdRule::InternalGate));
    }
}
BENCHMARK(BM_TuneThreshold);

void BM_RuleSelect(benchmark::State& state) {
    methods::AnswerRecord internal;
    internal.answer = "internal";
    internal.confidence = 0.62;
    methods::AnswerRecord context;
    context.answer = "context";
    context.confidence = 0.88;
    methods::RuleSpec spec{methods::Rule::ComparePercentile};
    spec.internal_reference = std::vector<double>(256, 0.5);
    spec.context_reference = std::vector<double>(256, 0.9);
    for (auto _ : state) {
        benchmark::DoNotOptimize(methods::rule_select(internal, context, spec));
    }
}
BENCHMARK(BM_RuleSelect);

void BM_RenderPrompt(benchmark::State& state) {
    const prompts::PromptLibrary library(prompts::default_prompt_dir());
    const prompts::Bindings bindings = {
        {"question", "Who painted the ceiling of the Sistine Chapel?"},
        {"document", std::string(2000, 'x')},
        {"internal_answer", "Michelangelo"},
        {"doc_answer", "Raphael"},
    };
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            library.render(prompts::TemplateName::ExplicitScr, bindings));
    }
}
BENCHMARK(BM_RenderPrompt);

}  // namespace

BENCHMARK_MAIN();
