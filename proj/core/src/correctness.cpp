#include "sitfaith/correctness.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "sitfaith/data.hpp"
#include "sitfaith/util.hpp"

namespace sitfaith::correctness {

std::string judge_kind_string(JudgeKind kind) {
    switch (kind) {
        case JudgeKind::ExactMatch: return "exact_match";
        case JudgeKind::TokenRecall: return "token_recall";
        case JudgeKind::LlmJudge: return "llm_judge";
    }
    throw Error("unknown judge kind");
}

JudgeStrategy judge_strategy_from_string(const std::string& name) {
    if (name == "em") return JudgeStrategy::EM;
    if (name == "llm") return JudgeStrategy::LLM;
    if (name == "em_then_llm") return JudgeStrategy::EM_then_LLM;
    throw Error("unknown judge strategy: " + name);
}

std::string judge_strategy_string(JudgeStrategy strategy) {
    switch (strategy) {
        case JudgeStrategy::EM: return "em";
        case JudgeStrategy::LLM: return "llm";
        case JudgeStrategy::EM_then_LLM: return "em_then_llm";
    }
    throw Error("unknown judge strategy");
}

JudgeStrategy JudgePolicy::strategy_for(const std::string& dataset) const {
    auto it = by_dataset.find(dataset);
    return it == by_dataset.end() ? JudgeStrategy::EM : it->second;
}

JudgePolicy JudgePolicy::defaults() {
    JudgePolicy policy;
    policy.by_dataset = {
        {"triviaqa", JudgeStrategy::EM},
        {"popqa", JudgeStrategy::EM},
        {"clasheval", JudgeStrategy::EM},
        {"redditqa", JudgeStrategy::EM},
        {"freshqa", JudgeStrategy::LLM},
        {"naturalqa", JudgeStrategy::EM_then_LLM},
    };
    return policy;
}

std::string normalize(std::string_view text) {
    std::string lowered;
    lowered.reserve(text.size());
    for (char c : text) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::ispunct(u)) {
            lowered.push_back(' ');
        } else {
            lowered.push_back(static_cast<char>(std::tolower(u)));
        }
    }
    std::vector<std::string> words = util::split_whitespace(lowered);
    // Leading article applies to the string as a whole only. A lone article
    // survives, so multiple-choice answers like "A" keep matching.
    if (words.size() > 1 && (words[0] == "a" || words[0] == "an" || words[0] == "the")) {
        words.erase(words.begin());
    }
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += words[i];
    }
    return out;
}

bool exact_match_relaxed(std::string_view response,
                         const std::vector<std::string>& gold_answers) {
    if (gold_answers.empty()) throw Error("exact_match_relaxed: no gold answers");
    const std::string norm_response = normalize(response);
    for (const std::string& gold : gold_answers) {
        const std::string norm_gold = normalize(gold);
        if (norm_gold.empty()) continue;
        if (norm_response.find(norm_gold) != std::string::npos) return true;
    }
    return false;
}

RecallResult token_recall_tail(std::string_view response, std::string_view gold,
                               int window_mult, double threshold) {
    const std::vector<std::string> gold_tokens = util::split_whitespace(normalize(gold));
    if (gold_tokens.empty()) throw Error("token_recall_tail: gold normalizes to nothing");
    std::vector<std::string> response_tokens = util::split_whitespace(normalize(response));

    const std::size_t window = static_cast<std::size_t>(window_mult) * gold_tokens.size();
    if (response_tokens.size() > window) {
        response_tokens.erase(response_tokens.begin(),
                              response_tokens.end() - static_cast<std::ptrdiff_t>(window));
    }

    std::map<std::string, int> available;
    for (const std::string& tok : response_tokens) ++available[tok];
    int hits = 0;
    for (const std::string& tok : gold_tokens) {
        auto it = available.find(tok);
        if (it != available.end() && it->second > 0) {
            --it->second;
            ++hits;
        }
    }
    RecallResult result;
    result.score = static_cast<double>(hits) / static_cast<double>(gold_tokens.size());
    result.pass = result.score > threshold;
    return result;
}

namespace {

bool llm_judge_verdict(const data::QAInstance& instance, std::string_view response,
                       backend::Client& client, const prompts::PromptLibrary& library) {
    backend::GenerationRequest request;
    request.messages = library.render_messages(
        prompts::TemplateName::LlmJudge,
        {{"question", instance.question},
         {"gold_answer", instance.gold_answers.front()},
         {"model_answer", std::string(response)}});
    request.temperature = 0.0;
    request.max_tokens = 8;
    const std::string reply = client.generate(request).single().text;
    const std::string word = util::to_lower(util::trim(reply));
    if (util::starts_with_ci(word, "yes")) return true;
    if (util::starts_with_ci(word, "no")) return false;
    throw Error("unparseable judge verdict for instance " + instance.id + ": \"" +
                util::trim(reply) + "\"");
}

}  // namespace

CorrectnessLabel judge(const data::QAInstance& instance, std::string_view response,
                       const JudgePolicy& policy, backend::Client& client,
                       const prompts::PromptLibrary& library) {
    const JudgeStrategy strategy = policy.strategy_for(instance.dataset);
    CorrectnessLabel label;
    switch (strategy) {
        case JudgeStrategy::EM:
            label.correct = exact_match_relaxed(response, instance.gold_answers);
            label.judge = JudgeKind::ExactMatch;
            return label;
        case JudgeStrategy::LLM:
            label.correct = llm_judge_verdict(instance, response, client, library);
            label.judge = JudgeKind::LlmJudge;
            return label;
        case JudgeStrategy::EM_then_LLM:
            if (exact_match_relaxed(response, instance.gold_answers)) {
                label.correct = true;
                label.judge = JudgeKind::ExactMatch;
                return label;
            }
            label.correct = llm_judge_verdict(instance, response, client, library);
            label.judge = JudgeKind::LlmJudge;
            return label;
    }
    throw Error("unknown judge strategy");
}

}  // namespace sitfaith::correctness
