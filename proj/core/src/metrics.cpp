#include "sitfaith/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "sitfaith/util.hpp"

namespace sitfaith::metrics {

namespace {

double mean(const std::vector<bool>& labels) {
    if (labels.empty()) return 0.0;
    std::size_t hits = 0;
    for (bool b : labels) hits += b ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace

MethodReport compute_report(const std::string& method, const std::string& dataset,
                            const std::vector<bool>& true_labels,
                            const std::vector<bool>& false_labels,
                            const std::vector<bool>& closed_book_labels) {
    if (true_labels.empty() || false_labels.empty()) {
        throw Error("compute_report(" + method + ", " + dataset +
                    "): both condition groups must be non-empty");
    }
    MethodReport report;
    report.method = method;
    report.dataset = dataset;
    report.acc_t = mean(true_labels);
    report.acc_f = mean(false_labels);
    report.sf = (report.acc_t + report.acc_f) / 2.0;
    report.n_true = true_labels.size();
    report.n_false = false_labels.size();
    report.closed_book_acc = mean(closed_book_labels);
    report.acc_f_bound = report.closed_book_acc;
    report.sf_bound = (report.closed_book_acc + 1.0) / 2.0;

    // Acc_f is bounded by internal accuracy; allow finite-sample noise before
    // flagging (two-proportion normal approximation, z = 1.96).
    if (!closed_book_labels.empty()) {
        const double cb = report.closed_book_acc;
        const double af = report.acc_f;
        const double var = af * (1.0 - af) / static_cast<double>(report.n_false) +
                           cb * (1.0 - cb) / static_cast<double>(closed_book_labels.size());
        if (af > cb + 1.96 * std::sqrt(var) + 1e-12) {
            report.flags.push_back("acc_f_exceeds_bound");
        }
    }
    return report;
}

namespace {

std::string pct(double rate) { return util::format_fixed1(rate * 100.0); }

std::string join_flags(const std::vector<std::string>& flags) {
    std::string out;
    for (std::size_t i = 0; i < flags.size(); ++i) {
        if (i > 0) out += ';';
        out += flags[i];
    }
    return out;
}

std::string pad(const std::string& text, std::size_t width) {
    if (text.size() >= width) return text;
    return text + std::string(width - text.size(), ' ');
}

}  // namespace

FormattedReports format_table(const std::vector<MethodReport>& reports) {
    FormattedReports out;

    out.csv = "method,dataset,tr,fa,ov,n_true,n_false,closed_book,flags\n";
    for (const MethodReport& r : reports) {
        out.csv += r.method + "," + r.dataset + "," + pct(r.acc_t) + "," + pct(r.acc_f) + "," +
                   pct(r.sf) + "," + std::to_string(r.n_true) + "," + std::to_string(r.n_false) +
                   "," + pct(r.closed_book_acc) + "," + join_flags(r.flags) + "\n";
    }

    // First-seen orders.
    std::vector<std::string> datasets;
    std::vector<std::string> methods;
    std::map<std::pair<std::string, std::string>, const MethodReport*> by_key;
    for (const MethodReport& r : reports) {
        if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) {
            datasets.push_back(r.dataset);
        }
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
            methods.push_back(r.method);
        }
        by_key[{r.method, r.dataset}] = &r;
    }

    std::size_t method_width = std::string("Method").size();
    for (const std::string& m : methods) method_width = std::max(method_width, m.size());

    const std::size_t cell = 6;  // fits "100.0 "
    std::string header = pad("Method", method_width) + " |";
    std::string subheader = pad("", method_width) + " |";
    for (const std::string& d : datasets) {
        header += " " + pad(d, 3 * cell) + "|";
        subheader += " " + pad("TR", cell) + pad("FA", cell) + pad("OV", cell) + "|";
    }
    header += " Total";
    subheader += " OV";
    out.table = header + "\n" + subheader + "\n";
    out.table += std::string(subheader.size() + 4, '-') + "\n";

    for (const std::string& m : methods) {
        std::string row = pad(m, method_width) + " |";
        double ov_sum = 0.0;
        std::size_t ov_count = 0;
        for (const std::string& d : datasets) {
            auto it = by_key.find({m, d});
            if (it == by_key.end()) {
                row += " " + pad("-", cell) + pad("-", cell) + pad("-", cell) + "|";
                continue;
            }
            const MethodReport& r = *it->second;
            row += " " + pad(pct(r.acc_t), cell) + pad(pct(r.acc_f), cell) +
                   pad(pct(r.sf), cell) + "|";
            ov_sum += r.sf;
            ++ov_count;
        }
        row += " " + (ov_count > 0 ? pct(ov_sum / static_cast<double>(ov_count)) : "-");
        out.table += row + "\n";
    }
    return out;
}

}  // namespace sitfaith::metrics
