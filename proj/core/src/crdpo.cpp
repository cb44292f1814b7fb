#include "sitfaith/crdpo.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>

#include "sitfaith/util.hpp"

namespace sitfaith::crdpo {

using backend::GenerationRequest;
using data::EvalCondition;
using data::QAInstance;
using nlohmann::json;
using nlohmann::ordered_json;
using prompts::TemplateName;

std::string pattern_string(Pattern pattern) {
    switch (pattern) {
        case Pattern::InternalWrongContextRight: return "internal_wrong_context_right";
        case Pattern::InternalRightContextWrong: return "internal_right_context_wrong";
    }
    throw Error("unknown pattern");
}

Pattern pattern_from_string(const std::string& name) {
    if (name == "internal_wrong_context_right") return Pattern::InternalWrongContextRight;
    if (name == "internal_right_context_wrong") return Pattern::InternalRightContextWrong;
    throw Error("unknown pattern: " + name);
}

void TrainConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (v <= 0) throw Error(std::string("train config: ") + name + " must be positive");
    };
    positive(learning_rate, "learning_rate");
    positive(max_grad_norm, "max_grad_norm");
    positive(per_device_train_batch_size, "per_device_train_batch_size");
    positive(gradient_accumulation_steps, "gradient_accumulation_steps");
    positive(num_train_epochs, "num_train_epochs");
    positive(warmup_steps, "warmup_steps");
    positive(max_length, "max_length");
    positive(max_prompt_length, "max_prompt_length");
    positive(beta, "beta");
    positive(rpo_alpha, "rpo_alpha");
    positive(lora_r, "lora_r");
    positive(lora_alpha, "lora_alpha");
    positive(lora_dropout, "lora_dropout");
    if (loss_type.empty()) throw Error("train config: loss_type must be set");
}

namespace {

std::string fmt_number(double value) {
    char buf[64];
    if (value == static_cast<double>(static_cast<long long>(value)) && std::abs(value) < 1e15) {
        std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(value));
    } else {
        std::snprintf(buf, sizeof(buf), "%g", value);
    }
    return buf;
}

}  // namespace

std::string TrainConfig::to_kv() const {
    std::string out;
    out += "learning_rate = " + fmt_number(learning_rate) + "\n";
    out += "max_grad_norm = " + fmt_number(max_grad_norm) + "\n";
    out += "per_device_train_batch_size = " + std::to_string(per_device_train_batch_size) + "\n";
    out += "gradient_accumulation_steps = " + std::to_string(gradient_accumulation_steps) + "\n";
    out += "num_train_epochs = " + std::to_string(num_train_epochs) + "\n";
    out += "warmup_steps = " + std::to_string(warmup_steps) + "\n";
    out += "max_length = " + std::to_string(max_length) + "\n";
    out += "max_prompt_length = " + std::to_string(max_prompt_length) + "\n";
    out += "beta = " + fmt_number(beta) + "\n";
    out += "loss_type = " + loss_type + "\n";
    out += "rpo_alpha = " + fmt_number(rpo_alpha) + "\n";
    out += "lora_r = " + std::to_string(lora_r) + "\n";
    out += "lora_alpha = " + std::to_string(lora_alpha) + "\n";
    out += "lora_dropout = " + fmt_number(lora_dropout) + "\n";
    return out;
}

TrainConfig TrainConfig::from_kv(const std::string& text) {
    TrainConfig config;
    for (const std::string& line : util::split_lines(text)) {
        const std::string trimmed = util::trim(line);
        if (trimmed.empty() || trimmed[0] == '#') continue;
        const std::size_t eq = trimmed.find('=');
        if (eq == std::string::npos) throw Error("train config: malformed line: " + trimmed);
        const std::string key = util::trim(trimmed.substr(0, eq));
        const std::string value = util::trim(trimmed.substr(eq + 1));
        if (key == "learning_rate") config.learning_rate = std::stod(value);
        else if (key == "max_grad_norm") config.max_grad_norm = std::stod(value);
        else if (key == "per_device_train_batch_size")
            config.per_device_train_batch_size = std::stoi(value);
        else if (key == "gradient_accumulation_steps")
            config.gradient_accumulation_steps = std::stoi(value);
        else if (key == "num_train_epochs") config.num_train_epochs = std::stoi(value);
        else if (key == "warmup_steps") config.warmup_steps = std::stoi(value);
        else if (key == "max_length") config.max_length = std::stoi(value);
        else if (key == "max_prompt_length") config.max_prompt_length = std::stoi(value);
        else if (key == "beta") config.beta = std::stod(value);
        else if (key == "loss_type") config.loss_type = value;
        else if (key == "rpo_alpha") config.rpo_alpha = std::stod(value);
        else if (key == "lora_r") config.lora_r = std::stoi(value);
        else if (key == "lora_alpha") config.lora_alpha = std::stoi(value);
        else if (key == "lora_dropout") config.lora_dropout = std::stod(value);
        else throw Error("train config: unknown key: " + key);
    }
    config.validate();
    return config;
}

std::optional<Pattern> classify_pattern(const correctness::CorrectnessLabel& internal_label,
                                        EvalCondition condition) {
    if (!internal_label.correct && condition == EvalCondition::TrueContext) {
        return Pattern::InternalWrongContextRight;
    }
    if (internal_label.correct && condition == EvalCondition::FalseContext) {
        return Pattern::InternalRightContextWrong;
    }
    return std::nullopt;
}

TemplateName truthful_template(Pattern pattern) {
    // The template states the actual role assignment.
    return pattern == Pattern::InternalWrongContextRight ? TemplateName::CrdpoDocCorrect
                                                         : TemplateName::CrdpoDocDeceptive;
}

TemplateName lying_template(Pattern pattern) {
    return pattern == Pattern::InternalWrongContextRight ? TemplateName::CrdpoDocDeceptive
                                                         : TemplateName::CrdpoDocCorrect;
}

const std::string& pattern_document(const QAInstance& instance, Pattern pattern) {
    return pattern == Pattern::InternalWrongContextRight ? instance.correct_context
                                                         : instance.wrong_context;
}

namespace {

std::uint64_t derive_seed(const SamplingOptions& options, const QAInstance& instance,
                          TemplateName template_name, int variant, int resample) {
    const std::string key = std::to_string(options.seed) + "|" + instance.id + "|" +
                            prompts::template_name_string(template_name) + "|" +
                            std::to_string(variant) + "|" + std::to_string(resample);
    const std::string digest = util::sha256_hex(key);
    std::uint64_t seed = 0;
    for (int i = 0; i < 16; ++i) {
        const char c = digest[static_cast<std::size_t>(i)];
        seed = seed * 16 + static_cast<std::uint64_t>(c <= '9' ? c - '0' : c - 'a' + 10);
    }
    return seed;
}

}  // namespace

GenerationRequest make_sampling_request(const methods::Env& env, const QAInstance& instance,
                                        TemplateName template_name, int variant,
                                        const std::string& internal_answer,
                                        const std::string& doc_answer,
                                        const std::string& document,
                                        const SamplingOptions& options, int resample) {
    GenerationRequest request;
    request.messages = env.prompts.render_messages(template_name,
                                                   {{"question", instance.question},
                                                    {"internal_answer", internal_answer},
                                                    {"document", document},
                                                    {"doc_answer", doc_answer}},
                                                   variant);
    request.temperature = options.temperature;
    request.max_tokens = options.max_tokens;
    request.seed = derive_seed(options, instance, template_name, variant, resample);
    return request;
}

std::optional<PreferencePair> sample_pair(const methods::Env& env, const QAInstance& instance,
                                          Pattern pattern, int variant,
                                          const methods::AnswerRecord& internal,
                                          const methods::AnswerRecord& context,
                                          const SamplingOptions& options) {
    const std::string& document = pattern_document(instance, pattern);

    auto draw = [&](TemplateName template_name, int resample) {
        const GenerationRequest request =
            make_sampling_request(env, instance, template_name, variant, internal.answer,
                                  context.answer, document, options, resample);
        return util::trim(env.client.generate(request).single().text);
    };

    std::string chosen = draw(truthful_template(pattern), 0);
    std::string rejected = draw(lying_template(pattern), 0);
    if (chosen == rejected) {
        chosen = draw(truthful_template(pattern), 1);
        if (chosen == rejected) return std::nullopt;
    }

    PreferencePair pair;
    pair.instance_id = instance.id;
    pair.dataset = instance.dataset;
    // The training prompt is the judgment prompt the tuned model sees at
    // inference time, without few-shot exemplars (which would not fit the
    // configured prompt-length budget).
    pair.prompt = env.prompts.render(TemplateName::ExplicitScr,
                                     {{"question", instance.question},
                                      {"internal_answer", internal.answer},
                                      {"document", document},
                                      {"doc_answer", context.answer}},
                                     /*exemplar_variant=*/0,
                                     /*include_exemplars=*/false);
    pair.chosen = chosen;
    pair.rejected = rejected;
    pair.variant = variant;
    pair.pattern = pattern;
    return pair;
}

bool validate_chosen(const std::string& path, const std::vector<std::string>& gold_answers) {
    if (path.empty()) throw Error("validate_chosen: empty reasoning path");
    for (const std::string& gold : gold_answers) {
        if (correctness::normalize(gold).empty()) continue;
        if (correctness::token_recall_tail(path, gold).pass) return true;
    }
    return false;
}

std::vector<PreferencePair> dual_sample(const methods::Env& env, const QAInstance& instance,
                                        Pattern pattern, const methods::AnswerRecord& internal,
                                        const methods::AnswerRecord& context,
                                        const SamplingOptions& options) {
    std::vector<PreferencePair> pairs;
    for (int variant : {0, 1}) {
        std::optional<PreferencePair> pair =
            sample_pair(env, instance, pattern, variant, internal, context, options);
        if (!pair) continue;
        if (!validate_chosen(pair->chosen, instance.gold_answers)) continue;
        pairs.push_back(std::move(*pair));
    }
    return pairs;
}

std::string pairs_to_jsonl(const std::vector<PreferencePair>& pairs) {
    std::string out;
    for (const PreferencePair& pair : pairs) {
        ordered_json j = {
            {"prompt", pair.prompt},
            {"chosen", pair.chosen},
            {"rejected", pair.rejected},
            {"meta",
             {{"instance", pair.instance_id},
              {"dataset", pair.dataset},
              {"pattern", pattern_string(pair.pattern)},
              {"variant", pair.variant}}},
        };
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<PreferencePair> pairs_from_jsonl(const std::string& text) {
    std::vector<PreferencePair> pairs;
    int line_no = 0;
    for (const std::string& line : util::split_lines(text)) {
        ++line_no;
        if (util::trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error("pairs line " + std::to_string(line_no) + ": " + e.what());
        }
        PreferencePair pair;
        pair.prompt = j.at("prompt").get<std::string>();
        pair.chosen = j.at("chosen").get<std::string>();
        pair.rejected = j.at("rejected").get<std::string>();
        pair.instance_id = j.at("meta").at("instance").get<std::string>();
        pair.dataset = j.at("meta").at("dataset").get<std::string>();
        pair.pattern = pattern_from_string(j.at("meta").at("pattern").get<std::string>());
        pair.variant = j.at("meta").at("variant").get<int>();
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

void emit_training_bundle(const std::vector<PreferencePair>& pairs, const TrainConfig& config,
                          const std::string& out_dir) {
    if (pairs.empty()) throw Error("emit_training_bundle: no pairs to emit");
    config.validate();
    for (const PreferencePair& pair : pairs) {
        if (pair.chosen == pair.rejected) {
            throw Error("emit_training_bundle: degenerate pair for instance " + pair.instance_id);
        }
    }
    std::filesystem::create_directories(out_dir);
    util::write_file(out_dir + "/pairs.jsonl", pairs_to_jsonl(pairs));
    util::write_file(out_dir + "/train_config.txt", config.to_kv());

    std::map<std::string, int> by_pattern;
    std::map<std::string, int> by_dataset;
    for (const PreferencePair& pair : pairs) {
        ++by_pattern[pattern_string(pair.pattern)];
        ++by_dataset[pair.dataset];
    }
    ordered_json manifest = {
        {"total", pairs.size()},
        {"by_pattern", by_pattern},
        {"by_dataset", by_dataset},
    };
    util::write_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
}

}  // namespace sitfaith::crdpo
