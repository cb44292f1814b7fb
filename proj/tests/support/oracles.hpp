#pragma once

// Independent brute-force oracles for the property suites. These are written
// against the definitions, not the library code paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace sitfaith::oracle {

/// Isotonic regression by exhaustive search: enumerate every partition of the
/// score-sorted sequence into contiguous blocks, keep partitions whose block
/// means are non-decreasing, and take the minimum squared error. O(2^n).
inline std::vector<double> isotonic_brute_force(std::vector<std::pair<double, int>> pairs) {
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    const std::size_t n = pairs.size();
    if (n == 0) return {};

    std::vector<double> best_fit;
    double best_sse = std::numeric_limits<double>::infinity();
    // Bit i of mask set = a block boundary between position i and i+1.
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << (n - 1)); ++mask) {
        std::vector<double> fit(n);
        double prev_mean = -std::numeric_limits<double>::infinity();
        bool monotone = true;
        std::size_t start = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool boundary = i + 1 == n || (mask >> i) & 1;
            if (!boundary) continue;
            double sum = 0.0;
            for (std::size_t k = start; k <= i; ++k) sum += pairs[k].second;
            const double mean = sum / static_cast<double>(i - start + 1);
            if (mean < prev_mean) {
                monotone = false;
                break;
            }
            for (std::size_t k = start; k <= i; ++k) fit[k] = mean;
            prev_mean = mean;
            start = i + 1;
        }
        if (!monotone) continue;
        // Equal scores must share a fitted value for the fit to be a function.
        bool function_like = true;
        for (std::size_t i = 1; i < n; ++i) {
            if (pairs[i].first == pairs[i - 1].first && fit[i] != fit[i - 1]) {
                function_like = false;
                break;
            }
        }
        if (!function_like) continue;
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = fit[i] - pairs[i].second;
            sse += d * d;
        }
        if (sse < best_sse - 1e-12) {
            best_sse = sse;
            best_fit = fit;
        }
    }
    return best_fit;  // indexed by score-sorted position
}

/// Pairwise-enumeration AUC.
inline double auc_brute_force(const std::vector<double>& scores,
                              const std::vector<int>& labels) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    if (pairs == 0) throw std::runtime_error("auc oracle: need both classes");
    return wins / static_cast<double>(pairs);
}

/// Midrank percentile, written directly from the definition.
inline double percentile_brute_force(double score, const std::vector<double>& reference) {
    double below = 0.0;
    double equal = 0.0;
    for (double r : reference) {
        if (r < score) below += 1.0;
        if (r == score) equal += 1.0;
    }
    return (below + 0.5 * equal) / static_cast<double>(reference.size());
}

/// Plain-if re-statement of the six selection rules. `true` means internal.
struct RuleOracleInput {
    double internal_conf = 0.0;
    double context_conf = 0.0;
    bool verdict = false;
    double threshold = 0.0;
    std::vector<double> internal_reference;
    std::vector<double> context_reference;
};

enum class OracleRule {
    EvalInternal,
    EvalContext,
    ThresholdInternal,
    ThresholdContext,
    CompareRaw,
    ComparePercentile,
};

inline bool rule_oracle(OracleRule rule, const RuleOracleInput& in) {
    switch (rule) {
        case OracleRule::EvalInternal: return in.verdict;
        case OracleRule::EvalContext: return !in.verdict;
        case OracleRule::ThresholdInternal: return in.internal_conf > in.threshold;
        case OracleRule::ThresholdContext: return !(in.context_conf > in.threshold);
        case OracleRule::CompareRaw:
            if (in.internal_conf > in.context_conf) return true;
            if (in.internal_conf < in.context_conf) return false;
            return true;  // tie -> internal
        case OracleRule::ComparePercentile: {
            const double ip = percentile_brute_force(in.internal_conf, in.internal_reference);
            const double cp = percentile_brute_force(in.context_conf, in.context_reference);
            if (ip > cp) return true;
            if (ip < cp) return false;
            return true;  // tie -> internal
        }
    }
    throw std::runtime_error("unknown oracle rule");
}

}  // namespace sitfaith::oracle
