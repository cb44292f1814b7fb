#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sitfaith/correctness.hpp"
#include "sitfaith/data.hpp"
#include "sitfaith/methods.hpp"

namespace sitfaith::crdpo {

/// The two knowledge-conflict quadrants that produce training pairs.
enum class Pattern { InternalWrongContextRight, InternalRightContextWrong };

std::string pattern_string(Pattern pattern);
Pattern pattern_from_string(const std::string& name);

struct PreferencePair {
    std::string instance_id;
    std::string dataset;
    std::string prompt;  // judgment prompt the trained model will see
    std::string chosen;
    std::string rejected;
    int variant = 0;  // which sampling prompt/exemplar set produced the pair
    Pattern pattern = Pattern::InternalWrongContextRight;

    bool operator==(const PreferencePair&) const = default;
};

/// DPO/LoRA hyperparameters emitted alongside the pairs.
struct TrainConfig {
    double learning_rate = 5e-6;
    double max_grad_norm = 0.3;
    int per_device_train_batch_size = 1;
    int gradient_accumulation_steps = 4;
    int num_train_epochs = 5;
    int warmup_steps = 100;
    int max_length = 900;
    int max_prompt_length = 600;
    double beta = 0.1;
    std::string loss_type = "sigmoid";
    double rpo_alpha = 1.0;
    int lora_r = 8;
    int lora_alpha = 16;
    double lora_dropout = 0.1;

    void validate() const;
    std::string to_kv() const;
    static TrainConfig from_kv(const std::string& text);
};

/// (internal wrong, TrueContext) and (internal right, FalseContext) are the
/// eligible quadrants; everything else is skipped.
std::optional<Pattern> classify_pattern(const correctness::CorrectnessLabel& internal_label,
                                        data::EvalCondition condition);

struct SamplingOptions {
    double temperature = 0.8;
    int max_tokens = 512;
    std::uint64_t seed = 0;
};

/// The truthful sampling template for a pattern tells the model the actual
/// role assignment; the opposite template is the lie used for rejected paths.
prompts::TemplateName truthful_template(Pattern pattern);
prompts::TemplateName lying_template(Pattern pattern);

/// Exposed so tests can script exact request digests. `resample` bumps the
/// derived seed when the first chosen/rejected draw degenerates.
backend::GenerationRequest make_sampling_request(const methods::Env& env,
                                                 const data::QAInstance& instance,
                                                 prompts::TemplateName template_name, int variant,
                                                 const std::string& internal_answer,
                                                 const std::string& doc_answer,
                                                 const std::string& document,
                                                 const SamplingOptions& options,
                                                 int resample = 0);

/// The pattern's document: the correct context when the context is playing
/// the right role, the wrong context otherwise.
const std::string& pattern_document(const data::QAInstance& instance, Pattern pattern);

/// Samples a chosen path under the truthful template and a rejected path
/// under the lying one, both at sampling temperature. A pair whose paths
/// coincide is resampled once and then skipped (nullopt).
std::optional<PreferencePair> sample_pair(const methods::Env& env,
                                          const data::QAInstance& instance, Pattern pattern,
                                          int variant, const methods::AnswerRecord& internal,
                                          const methods::AnswerRecord& context,
                                          const SamplingOptions& options);

/// True iff the tail token recall passes for any gold alias.
bool validate_chosen(const std::string& path, const std::vector<std::string>& gold_answers);

/// One pair per variant in {0, 1}; pairs whose chosen path fails the recall
/// filter (or that degenerate) are dropped individually.
std::vector<PreferencePair> dual_sample(const methods::Env& env, const data::QAInstance& instance,
                                        Pattern pattern, const methods::AnswerRecord& internal,
                                        const methods::AnswerRecord& context,
                                        const SamplingOptions& options);

std::string pairs_to_jsonl(const std::vector<PreferencePair>& pairs);
std::vector<PreferencePair> pairs_from_jsonl(const std::string& text);

/// Writes pairs.jsonl, train_config.txt, and manifest.json (counts per
/// pattern and dataset) under out_dir. Requires a non-empty pair list.
void emit_training_bundle(const std::vector<PreferencePair>& pairs, const TrainConfig& config,
                          const std::string& out_dir);

}  // namespace sitfaith::crdpo
