#include "sitfaith/confidence.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "sitfaith/correctness.hpp"
#include "sitfaith/util.hpp"

namespace sitfaith::confidence {

using nlohmann::json;
using nlohmann::ordered_json;

std::string confidence_source_string(ConfidenceSource source) {
    return source == ConfidenceSource::Internal ? "internal" : "context";
}

double answer_confidence(const std::vector<double>& logprobs) {
    if (logprobs.empty()) throw Error("answer_confidence: empty logprob list");
    double sum = 0.0;
    for (double lp : logprobs) sum += std::exp(lp);
    return sum / static_cast<double>(logprobs.size());
}

double self_consistency(const std::vector<std::string>& samples, const std::string& reference) {
    if (samples.empty()) throw Error("self_consistency: no samples");
    if (reference.empty()) throw Error("self_consistency: empty reference answer");
    int hits = 0;
    for (const std::string& sample : samples) {
        if (correctness::exact_match_relaxed(sample, {reference})) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

double percentile(double score, const std::vector<double>& calibration_scores) {
    if (calibration_scores.empty()) throw Error("percentile: empty calibration list");
    std::size_t below = 0;
    std::size_t equal = 0;
    for (double s : calibration_scores) {
        if (s < score) ++below;
        else if (s == score) ++equal;
    }
    return (static_cast<double>(below) + 0.5 * static_cast<double>(equal)) /
           static_cast<double>(calibration_scores.size());
}

IsotonicMap isotonic_fit(const std::vector<std::pair<double, int>>& pairs) {
    if (pairs.size() < 2) throw Error("isotonic_fit: need at least 2 pairs");
    std::vector<std::pair<double, int>> sorted = pairs;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    struct Block {
        double score_start;
        double sum;
        double weight;
        double mean() const { return sum / weight; }
    };
    std::vector<Block> blocks;
    std::size_t i = 0;
    while (i < sorted.size()) {
        // Equal scores must map to one value, so pool ties up front.
        std::size_t j = i;
        double sum = 0.0;
        while (j < sorted.size() && sorted[j].first == sorted[i].first) {
            sum += static_cast<double>(sorted[j].second);
            ++j;
        }
        blocks.push_back({sorted[i].first, sum, static_cast<double>(j - i)});
        while (blocks.size() >= 2 &&
               blocks[blocks.size() - 2].mean() >= blocks.back().mean()) {
            Block last = blocks.back();
            blocks.pop_back();
            blocks.back().sum += last.sum;
            blocks.back().weight += last.weight;
        }
        i = j;
    }

    IsotonicMap map;
    map.fitted_on = pairs.size();
    for (const Block& block : blocks) {
        map.breakpoints.emplace_back(block.score_start, block.mean());
    }
    return map;
}

double isotonic_apply(const IsotonicMap& map, double score) {
    if (map.breakpoints.empty()) throw Error("isotonic_apply: empty map");
    if (score < map.breakpoints.front().first) return map.breakpoints.front().second;
    double value = map.breakpoints.front().second;
    for (const auto& [start, calibrated] : map.breakpoints) {
        if (start <= score) value = calibrated;
        else break;
    }
    return value;
}

std::string IsotonicMap::to_json() const {
    ordered_json points = ordered_json::array();
    for (const auto& [score, value] : breakpoints) {
        points.push_back(ordered_json::array({score, value}));
    }
    ordered_json j = {{"breakpoints", std::move(points)}, {"fitted_on", fitted_on}};
    return j.dump(2);
}

IsotonicMap IsotonicMap::from_json(const std::string& text) {
    json j = json::parse(text);
    IsotonicMap map;
    map.fitted_on = j.at("fitted_on").get<std::size_t>();
    for (const auto& point : j.at("breakpoints")) {
        map.breakpoints.emplace_back(point.at(0).get<double>(), point.at(1).get<double>());
    }
    return map;
}

double ece(const std::vector<double>& scores, const std::vector<int>& labels, int bins) {
    if (scores.size() != labels.size()) throw Error("ece: scores/labels length mismatch");
    if (scores.empty()) throw Error("ece: empty input");
    if (bins < 1) throw Error("ece: bins must be positive");
    std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> acc_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        int b = static_cast<int>(scores[i] * bins);
        b = std::clamp(b, 0, bins - 1);  // score 1.0 lands in the top bin
        conf_sum[static_cast<std::size_t>(b)] += scores[i];
        acc_sum[static_cast<std::size_t>(b)] += static_cast<double>(labels[i]);
        ++counts[static_cast<std::size_t>(b)];
    }
    double total = 0.0;
    for (int b = 0; b < bins; ++b) {
        const std::size_t n = counts[static_cast<std::size_t>(b)];
        if (n == 0) continue;
        const double conf = conf_sum[static_cast<std::size_t>(b)] / static_cast<double>(n);
        const double acc = acc_sum[static_cast<std::size_t>(b)] / static_cast<double>(n);
        total += (static_cast<double>(n) / static_cast<double>(scores.size())) *
                 std::abs(acc - conf);
    }
    return total;
}

double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw Error("auc_roc: scores/labels length mismatch");
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    for (int label : labels) {
        if (label == 1) ++n_pos;
        else if (label == 0) ++n_neg;
        else throw Error("auc_roc: labels must be 0 or 1");
    }
    if (n_pos == 0 || n_neg == 0) throw Error("auc_roc: both classes must be present");

    // Average ranks with midrank for ties.
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) rank_sum_pos += midrank;
        }
        i = j;
    }
    const double n_pos_d = static_cast<double>(n_pos);
    const double n_neg_d = static_cast<double>(n_neg);
    return (rank_sum_pos - n_pos_d * (n_pos_d + 1.0) / 2.0) / (n_pos_d * n_neg_d);
}

double replay_sf(const std::vector<ThresholdRecord>& records, ThresholdRule rule,
                 double threshold) {
    std::size_t n_true = 0;
    std::size_t n_false = 0;
    std::size_t correct_true = 0;
    std::size_t correct_false = 0;
    for (const ThresholdRecord& record : records) {
        const bool gate_open = record.confidence > threshold;
        bool pick_internal;
        if (rule == ThresholdRule::InternalGate) {
            pick_internal = gate_open;
        } else {
            pick_internal = !gate_open;
        }
        const bool correct = pick_internal ? record.internal_correct : record.context_correct;
        if (record.condition == data::EvalCondition::TrueContext) {
            ++n_true;
            if (correct) ++correct_true;
        } else if (record.condition == data::EvalCondition::FalseContext) {
            ++n_false;
            if (correct) ++correct_false;
        } else {
            throw Error("replay_sf: NoContext record");
        }
    }
    if (n_true == 0 || n_false == 0) {
        throw Error("replay_sf: both conditions must be represented");
    }
    const double acc_t = static_cast<double>(correct_true) / static_cast<double>(n_true);
    const double acc_f = static_cast<double>(correct_false) / static_cast<double>(n_false);
    return (acc_t + acc_f) / 2.0;
}

double tune_threshold(const std::vector<ThresholdRecord>& records, ThresholdRule rule) {
    if (records.empty()) throw Error("tune_threshold: empty input");
    double best_threshold = 0.0;
    double best_sf = -1.0;
    for (int step = 0; step <= 100; ++step) {
        const double threshold = static_cast<double>(step) / 100.0;
        const double sf = replay_sf(records, rule, threshold);
        if (sf > best_sf) {
            best_sf = sf;
            best_threshold = threshold;
        }
    }
    return best_threshold;
}

// --- CalibrationStore ---------------------------------------------------------

CalibrationStore::CalibrationStore(std::string dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::string CalibrationStore::path_for(const std::string& kind, const std::string& dataset,
                                       const std::string& key) const {
    std::string safe_key = key;
    std::replace(safe_key.begin(), safe_key.end(), '+', '-');
    return dir_ + "/" + kind + "__" + dataset + "__" + safe_key + ".json";
}

void CalibrationStore::save_threshold(const std::string& dataset, const std::string& method,
                                      double threshold) {
    ordered_json j = {{"dataset", dataset}, {"method", method}, {"threshold", threshold}};
    util::write_file_atomic(path_for("threshold", dataset, method), j.dump(2));
}

std::optional<double> CalibrationStore::load_threshold(const std::string& dataset,
                                                       const std::string& method) const {
    const std::string path = path_for("threshold", dataset, method);
    if (!std::filesystem::exists(path)) return std::nullopt;
    return json::parse(util::read_file(path)).at("threshold").get<double>();
}

void CalibrationStore::save_isotonic(const std::string& dataset, ConfidenceSource source,
                                     const IsotonicMap& map) {
    util::write_file_atomic(path_for("isotonic", dataset, confidence_source_string(source)),
                            map.to_json());
}

std::optional<IsotonicMap> CalibrationStore::load_isotonic(const std::string& dataset,
                                                           ConfidenceSource source) const {
    const std::string path = path_for("isotonic", dataset, confidence_source_string(source));
    if (!std::filesystem::exists(path)) return std::nullopt;
    return IsotonicMap::from_json(util::read_file(path));
}

void CalibrationStore::save_percentile_reference(const std::string& dataset,
                                                 ConfidenceSource source,
                                                 const std::vector<double>& scores) {
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    ordered_json j = {{"dataset", dataset},
                      {"source", confidence_source_string(source)},
                      {"scores", sorted}};
    util::write_file_atomic(path_for("percentile", dataset, confidence_source_string(source)),
                            j.dump(2));
}

std::optional<std::vector<double>> CalibrationStore::load_percentile_reference(
    const std::string& dataset, ConfidenceSource source) const {
    const std::string path = path_for("percentile", dataset, confidence_source_string(source));
    if (!std::filesystem::exists(path)) return std::nullopt;
    return json::parse(util::read_file(path)).at("scores").get<std::vector<double>>();
}

}  // namespace sitfaith::confidence
