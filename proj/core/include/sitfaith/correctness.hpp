#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sitfaith/backend.hpp"
#include "sitfaith/prompts.hpp"

namespace sitfaith::data {
struct QAInstance;
}

namespace sitfaith::correctness {

enum class JudgeKind { ExactMatch, TokenRecall, LlmJudge };

std::string judge_kind_string(JudgeKind kind);

struct CorrectnessLabel {
    bool correct = false;
    JudgeKind judge = JudgeKind::ExactMatch;
    std::optional<double> detail;
};

enum class JudgeStrategy { EM, LLM, EM_then_LLM };

JudgeStrategy judge_strategy_from_string(const std::string& name);
std::string judge_strategy_string(JudgeStrategy strategy);

/// Per-dataset judging strategy; datasets without an entry use EM.
struct JudgePolicy {
    std::map<std::string, JudgeStrategy> by_dataset;

    JudgeStrategy strategy_for(const std::string& dataset) const;

    /// The mapping used in the experiments this framework reproduces:
    /// triviaqa/popqa/clasheval -> EM, freshqa -> LLM, naturalqa -> EM_then_LLM.
    static JudgePolicy defaults();
};

/// Lowercase, punctuation stripped to spaces, whitespace collapsed, and
/// leading articles (a, an, the) removed from the start of the full string.
std::string normalize(std::string_view text);

/// True iff any normalized gold alias is a substring of the normalized
/// response. Aliases that normalize to nothing never match.
bool exact_match_relaxed(std::string_view response, const std::vector<std::string>& gold_answers);

struct RecallResult {
    double score = 0.0;  // in [0, 1]
    bool pass = false;   // score strictly above threshold
};

/// Token recall of `gold` within the last window_mult * |gold tokens| tokens
/// of `response`. Tokens are whitespace-delimited normalized words; overlap
/// is counted as a multiset intersection.
RecallResult token_recall_tail(std::string_view response, std::string_view gold,
                               int window_mult = 3, double threshold = 0.5);

/// Applies the dataset's strategy: EM, LLM-judge yes/no, or EM with an
/// LLM-judge fallback when EM fails. The judge field records which rule
/// produced the verdict; an unparseable judge reply is an error.
CorrectnessLabel judge(const data::QAInstance& instance, std::string_view response,
                       const JudgePolicy& policy, backend::Client& client,
                       const prompts::PromptLibrary& library);

}  // namespace sitfaith::correctness
