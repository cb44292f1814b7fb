#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sitfaith/backend.hpp"

namespace sitfaith::data {

enum class Split { Train, Dev, Test };

std::string split_string(Split split);
Split split_from_string(const std::string& name);

/// One question paired with a correct and an incorrect context.
struct QAInstance {
    std::string id;
    std::string dataset;
    std::string question;
    std::vector<std::string> gold_answers;
    std::optional<std::vector<std::string>> choices;  // multiple-choice datasets: 4 options
    std::string correct_context;
    std::string wrong_context;
    std::optional<std::string> wrong_context_answer;
    Split split = Split::Test;

    /// Throws with the instance id on any violated invariant.
    void validate(bool allow_missing_wrong_context = false) const;

    bool operator==(const QAInstance&) const = default;
};

enum class EvalCondition { TrueContext, FalseContext, NoContext };

std::string condition_string(EvalCondition condition);
EvalCondition condition_from_string(const std::string& name);

/// The context presented under `condition`. NoContext has none.
const std::string& context_for(const QAInstance& instance, EvalCondition condition);

struct LoadOptions {
    bool allow_missing_wrong_context = false;  // only for synthesis input
};

/// Reads one JSON record per line. Invalid records are errors (with line
/// number and id where available), never silently dropped.
std::vector<QAInstance> load_dataset(const std::string& path, const LoadOptions& options = {});

/// Canonical JSONL serialization; load_dataset(save_dataset(x)) == x.
void save_dataset(const std::string& path, const std::vector<QAInstance>& instances);
std::string to_jsonl(const std::vector<QAInstance>& instances);

/// Each instance appears once with TrueContext and once with FalseContext,
/// in instance order, TrueContext first.
std::vector<std::pair<QAInstance, EvalCondition>> make_eval_pairs(
    const std::vector<QAInstance>& instances);

struct CalibrationSet {
    std::vector<std::pair<QAInstance, EvalCondition>> entries;
    std::uint64_t seed = 0;
};

/// Balanced 50/50 condition mix drawn from the dev split, reproducible under
/// a fixed seed. Requires size <= 2 * |dev_instances|.
CalibrationSet build_calibration_set(const std::vector<QAInstance>& dev_instances,
                                     std::size_t size, std::uint64_t seed);

struct SynthesisOptions {
    int max_attempts = 5;
    double temperature = 0.7;
    int max_tokens = 768;
    std::uint64_t seed = 0;
};

struct SynthesisResult {
    std::string text;
    int attempts = 0;
};

/// The rewrite request issued on a given attempt (1-based); each attempt
/// carries a distinct derived seed. Exposed for request-level test scripting.
backend::GenerationRequest make_synthesis_request(const QAInstance& instance,
                                                  const SynthesisOptions& options, int attempt);

/// Asks the backend to rewrite the correct context so it entails a different,
/// incorrect answer. Candidates containing any gold alias (normalized
/// matching) or an artifact keyword ("fake", "imaginary", "fictional",
/// "hypothetical") are rejected and retried, up to max_attempts.
SynthesisResult synthesize_wrong_context(const QAInstance& instance, backend::Client& client,
                                         const SynthesisOptions& options = {});

}  // namespace sitfaith::data
