#pragma once

#include <string>
#include <vector>

namespace sitfaith::metrics {

/// Per-(method, dataset) accuracy report. Rates are fractions in [0, 1];
/// rendering converts to percentages.
struct MethodReport {
    std::string method;
    std::string dataset;
    double acc_t = 0.0;
    double acc_f = 0.0;
    double sf = 0.0;  // (acc_t + acc_f) / 2
    double closed_book_acc = 0.0;
    std::size_t n_true = 0;
    std::size_t n_false = 0;
    double acc_f_bound = 0.0;  // closed_book_acc
    double sf_bound = 0.0;     // (closed_book_acc + 1) / 2
    std::vector<std::string> flags;
};

/// Aggregates judged decisions grouped by condition. A false-context accuracy
/// above the closed-book bound (beyond two-proportion sampling noise) is
/// flagged, not rejected.
MethodReport compute_report(const std::string& method, const std::string& dataset,
                            const std::vector<bool>& true_labels,
                            const std::vector<bool>& false_labels,
                            const std::vector<bool>& closed_book_labels);

struct FormattedReports {
    std::string table;  // paper-style text table: TR/FA/OV per dataset + Total OV
    std::string csv;    // method,dataset,tr,fa,ov,n_true,n_false,closed_book,flags
};

/// Datasets and methods appear in first-seen order; output is byte-stable
/// under a fixed input order.
FormattedReports format_table(const std::vector<MethodReport>& reports);

}  // namespace sitfaith::metrics
