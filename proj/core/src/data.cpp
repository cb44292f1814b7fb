#include "sitfaith/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>

#include "sitfaith/correctness.hpp"
#include "sitfaith/util.hpp"

namespace sitfaith::data {

using nlohmann::json;
using nlohmann::ordered_json;

std::string split_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Dev: return "dev";
        case Split::Test: return "test";
    }
    throw Error("unknown split");
}

Split split_from_string(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "dev") return Split::Dev;
    if (name == "test") return Split::Test;
    throw Error("unknown split: " + name);
}

std::string condition_string(EvalCondition condition) {
    switch (condition) {
        case EvalCondition::TrueContext: return "true_context";
        case EvalCondition::FalseContext: return "false_context";
        case EvalCondition::NoContext: return "no_context";
    }
    throw Error("unknown condition");
}

EvalCondition condition_from_string(const std::string& name) {
    if (name == "true_context") return EvalCondition::TrueContext;
    if (name == "false_context") return EvalCondition::FalseContext;
    if (name == "no_context") return EvalCondition::NoContext;
    throw Error("unknown condition: " + name);
}

const std::string& context_for(const QAInstance& instance, EvalCondition condition) {
    switch (condition) {
        case EvalCondition::TrueContext: return instance.correct_context;
        case EvalCondition::FalseContext: return instance.wrong_context;
        case EvalCondition::NoContext: break;
    }
    throw Error("no context under NoContext condition (instance " + instance.id + ")");
}

void QAInstance::validate(bool allow_missing_wrong_context) const {
    auto fail = [this](const std::string& what) {
        throw Error("instance " + (id.empty() ? std::string("<missing id>") : id) + ": " + what);
    };
    if (id.empty()) fail("id is empty");
    if (question.empty()) fail("question is empty");
    if (gold_answers.empty()) fail("gold_answers is empty");
    if (correct_context.empty()) fail("correct_context is empty");
    if (wrong_context.empty() && !allow_missing_wrong_context) fail("wrong_context is empty");
    if (!wrong_context.empty() && wrong_context == correct_context) {
        fail("wrong_context equals correct_context");
    }
    if (choices) {
        if (choices->size() != 4) fail("choices must hold exactly 4 options");
        int gold_in_choices = 0;
        for (const std::string& choice : *choices) {
            for (const std::string& gold : gold_answers) {
                if (correctness::normalize(choice) == correctness::normalize(gold)) {
                    ++gold_in_choices;
                    break;
                }
            }
        }
        if (gold_in_choices != 1) fail("exactly one gold answer must appear among choices");
        if (wrong_context_answer) {
            bool found = false;
            for (const std::string& choice : *choices) {
                if (correctness::normalize(choice) ==
                    correctness::normalize(*wrong_context_answer)) {
                    found = true;
                    break;
                }
            }
            if (!found) fail("wrong_context_answer must be one of the choices");
            for (const std::string& gold : gold_answers) {
                if (correctness::normalize(gold) ==
                    correctness::normalize(*wrong_context_answer)) {
                    fail("wrong_context_answer must differ from the gold answer");
                }
            }
        }
    }
}

namespace {

QAInstance instance_from_json(const json& j, int line_no, const LoadOptions& options) {
    auto require = [&](const char* field) {
        if (!j.contains(field) || j.at(field).is_null()) {
            std::string id = j.value("id", std::string("<missing id>"));
            throw Error("line " + std::to_string(line_no) + " (instance " + id +
                        "): missing field \"" + field + "\"");
        }
    };
    for (const char* field : {"id", "dataset", "question", "gold_answers", "correct_context",
                              "split"}) {
        require(field);
    }
    if (!options.allow_missing_wrong_context) require("wrong_context");

    QAInstance instance;
    instance.id = j.at("id").get<std::string>();
    instance.dataset = j.at("dataset").get<std::string>();
    instance.question = j.at("question").get<std::string>();
    instance.gold_answers = j.at("gold_answers").get<std::vector<std::string>>();
    if (j.contains("choices") && !j.at("choices").is_null()) {
        instance.choices = j.at("choices").get<std::vector<std::string>>();
    }
    instance.correct_context = j.at("correct_context").get<std::string>();
    if (j.contains("wrong_context") && !j.at("wrong_context").is_null()) {
        instance.wrong_context = j.at("wrong_context").get<std::string>();
    }
    if (j.contains("wrong_context_answer") && !j.at("wrong_context_answer").is_null()) {
        instance.wrong_context_answer = j.at("wrong_context_answer").get<std::string>();
    }
    instance.split = split_from_string(j.at("split").get<std::string>());
    instance.validate(options.allow_missing_wrong_context);
    return instance;
}

ordered_json instance_to_json(const QAInstance& instance) {
    ordered_json j = {
        {"id", instance.id},
        {"dataset", instance.dataset},
        {"question", instance.question},
        {"gold_answers", instance.gold_answers},
        {"choices", instance.choices ? ordered_json(*instance.choices) : ordered_json(nullptr)},
        {"correct_context", instance.correct_context},
        {"wrong_context", instance.wrong_context},
        {"wrong_context_answer", instance.wrong_context_answer
                                     ? ordered_json(*instance.wrong_context_answer)
                                     : ordered_json(nullptr)},
        {"split", split_string(instance.split)},
    };
    return j;
}

}  // namespace

std::vector<QAInstance> load_dataset(const std::string& path, const LoadOptions& options) {
    const std::string text = util::read_file(path);
    std::vector<QAInstance> instances;
    int line_no = 0;
    for (const std::string& line : util::split_lines(text)) {
        ++line_no;
        if (util::trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(path + ":" + std::to_string(line_no) + ": parse error: " + e.what());
        }
        instances.push_back(instance_from_json(j, line_no, options));
    }
    return instances;
}

std::string to_jsonl(const std::vector<QAInstance>& instances) {
    std::string out;
    for (const QAInstance& instance : instances) {
        out += instance_to_json(instance).dump();
        out += '\n';
    }
    return out;
}

void save_dataset(const std::string& path, const std::vector<QAInstance>& instances) {
    util::write_file(path, to_jsonl(instances));
}

std::vector<std::pair<QAInstance, EvalCondition>> make_eval_pairs(
    const std::vector<QAInstance>& instances) {
    std::vector<std::pair<QAInstance, EvalCondition>> pairs;
    pairs.reserve(instances.size() * 2);
    for (const QAInstance& instance : instances) {
        pairs.emplace_back(instance, EvalCondition::TrueContext);
        pairs.emplace_back(instance, EvalCondition::FalseContext);
    }
    return pairs;
}

CalibrationSet build_calibration_set(const std::vector<QAInstance>& dev_instances,
                                     std::size_t size, std::uint64_t seed) {
    if (size > 2 * dev_instances.size()) {
        throw Error("calibration size " + std::to_string(size) + " exceeds 2 x " +
                    std::to_string(dev_instances.size()) + " dev instances");
    }
    for (const QAInstance& instance : dev_instances) {
        if (instance.split != Split::Dev) {
            throw Error("calibration set must be drawn from the dev split (instance " +
                        instance.id + " is " + split_string(instance.split) + ")");
        }
    }
    CalibrationSet set;
    set.seed = seed;
    if (size == 0) return set;

    util::DetRng rng(seed);
    std::vector<QAInstance> true_pool = dev_instances;
    rng.shuffle(true_pool);
    std::vector<QAInstance> false_pool = dev_instances;
    rng.shuffle(false_pool);

    // Interleave True/False so every prefix stays balanced.
    std::size_t ti = 0;
    std::size_t fi = 0;
    for (std::size_t i = 0; i < size; ++i) {
        if (i % 2 == 0) {
            set.entries.emplace_back(true_pool[ti++], EvalCondition::TrueContext);
        } else {
            set.entries.emplace_back(false_pool[fi++], EvalCondition::FalseContext);
        }
    }
    return set;
}

namespace {

const char* const kArtifactKeywords[] = {"fake", "imaginary", "fictional", "hypothetical"};

bool passes_artifact_filter(const std::string& candidate) {
    const std::vector<std::string> words =
        util::split_whitespace(correctness::normalize(candidate));
    for (const std::string& word : words) {
        for (const char* keyword : kArtifactKeywords) {
            if (word == keyword) return false;
        }
    }
    return true;
}

}  // namespace

backend::GenerationRequest make_synthesis_request(const QAInstance& instance,
                                                  const SynthesisOptions& options, int attempt) {
    const std::string prompt =
        "You will be given a question, its correct answer, and a document that supports that "
        "answer. Rewrite the document so that it coherently leads to a different, incorrect "
        "answer to the question. Keep the style and length of the original document, do not "
        "mention that anything was changed, and do not include the correct answer anywhere. "
        "Only return the rewritten document.\n\nQuestion: " +
        instance.question + "\n\nCorrect answer: " + instance.gold_answers.front() +
        "\n\nDocument: " + instance.correct_context + "\n\nRewritten document:";
    backend::GenerationRequest request;
    request.messages = {{backend::Role::User, prompt}};
    request.temperature = options.temperature;
    request.max_tokens = options.max_tokens;
    request.seed = options.seed + static_cast<std::uint64_t>(attempt);
    return request;
}

SynthesisResult synthesize_wrong_context(const QAInstance& instance, backend::Client& client,
                                         const SynthesisOptions& options) {
    if (instance.correct_context.empty() || instance.gold_answers.empty()) {
        throw Error("instance " + instance.id + ": synthesis needs correct_context and gold_answers");
    }
    for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
        const backend::GenerationRequest request =
            make_synthesis_request(instance, options, attempt);
        const std::string candidate = util::trim(client.generate(request).single().text);
        if (candidate.empty()) continue;
        if (correctness::exact_match_relaxed(candidate, instance.gold_answers)) continue;
        if (!passes_artifact_filter(candidate)) continue;
        return SynthesisResult{candidate, attempt};
    }
    throw Error("instance " + instance.id + ": wrong-context synthesis exhausted after " +
                std::to_string(options.max_attempts) + " attempts");
}

}  // namespace sitfaith::data
