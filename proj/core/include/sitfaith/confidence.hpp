#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sitfaith/backend.hpp"
#include "sitfaith/data.hpp"

namespace sitfaith::confidence {

enum class ConfidenceMethod { SeqProb, SelfConsistency, IsotonicCalibrated, Percentile };
enum class ConfidenceSource { Internal, Context };

std::string confidence_source_string(ConfidenceSource source);

struct ConfidenceScore {
    double value = 0.0;  // in [0, 1]
    ConfidenceMethod method = ConfidenceMethod::SeqProb;
    ConfidenceSource source = ConfidenceSource::Internal;
};

/// Arithmetic mean of exp(logprob) over the extracted answer's tokens.
/// Answer-level: callers pass only the tokens belonging to the answer.
double answer_confidence(const std::vector<double>& logprobs);

/// Fraction of samples whose normalized text contains the normalized
/// reference answer.
double self_consistency(const std::vector<std::string>& samples, const std::string& reference);

/// Midrank percentile of `score` within `calibration_scores` (need not be
/// sorted): (count below + 0.5 * count equal) / n.
double percentile(double score, const std::vector<double>& calibration_scores);

/// Non-decreasing step map fitted by pool-adjacent-violators.
struct IsotonicMap {
    /// (block start score, calibrated value), sorted by score; values
    /// non-decreasing, all in [0, 1].
    std::vector<std::pair<double, double>> breakpoints;
    std::size_t fitted_on = 0;

    std::string to_json() const;
    static IsotonicMap from_json(const std::string& text);
};

/// Least-squares monotone fit of labels against scores (labels in {0,1}).
/// Requires at least 2 pairs.
IsotonicMap isotonic_fit(const std::vector<std::pair<double, int>>& pairs);

/// Step interpolation: value of the last block whose start is <= score,
/// clamped to the first/last block value outside the fitted range.
double isotonic_apply(const IsotonicMap& map, double score);

/// Expected calibration error over `bins` equal-width bins on [0, 1].
double ece(const std::vector<double>& scores, const std::vector<int>& labels, int bins = 10);

/// Mann-Whitney AUC: P(score+ > score-) + 0.5 P(tie). Both classes required.
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

/// One calibration-set observation for threshold tuning: the gate confidence
/// plus the correctness of both candidate answers under the entry's condition.
struct ThresholdRecord {
    double confidence = 0.0;
    bool internal_correct = false;
    bool context_correct = false;
    data::EvalCondition condition = data::EvalCondition::TrueContext;
};

enum class ThresholdRule { InternalGate, ContextGate };

/// Replays `confidence > threshold ? gated-source : other` over the records
/// and evaluates SF = (Acc_t + Acc_f) / 2.
double replay_sf(const std::vector<ThresholdRecord>& records, ThresholdRule rule,
                 double threshold);

/// Grid search over {0.00, 0.01, ..., 1.00} maximizing SF; ties go to the
/// smaller threshold. Requires both conditions to be represented.
double tune_threshold(const std::vector<ThresholdRecord>& records, ThresholdRule rule);

// --- serialized calibration artifacts ---------------------------------------

/// Calibration artifacts on disk, one JSON file per (dataset, method/source)
/// key under a directory.
class CalibrationStore {
public:
    explicit CalibrationStore(std::string dir);

    void save_threshold(const std::string& dataset, const std::string& method, double threshold);
    std::optional<double> load_threshold(const std::string& dataset,
                                         const std::string& method) const;

    void save_isotonic(const std::string& dataset, ConfidenceSource source,
                       const IsotonicMap& map);
    std::optional<IsotonicMap> load_isotonic(const std::string& dataset,
                                             ConfidenceSource source) const;

    void save_percentile_reference(const std::string& dataset, ConfidenceSource source,
                                   const std::vector<double>& scores);
    std::optional<std::vector<double>> load_percentile_reference(const std::string& dataset,
                                                                 ConfidenceSource source) const;

    const std::string& dir() const { return dir_; }

private:
    std::string path_for(const std::string& kind, const std::string& dataset,
                         const std::string& key) const;
    std::string dir_;
};

}  // namespace sitfaith::confidence
