#pragma once

// Response parsing (keyword and first-integer rules), self-consistency
// aggregation, and the five evaluation metrics. Parsing is total: anything
// unrecognizable becomes Unparseable and is scored as wrong downstream.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace fcni {

struct InstructionPair;

struct Prediction {
    enum class Kind { label, value, unparseable };
    Kind kind = Kind::unparseable;
    std::string label;
    int value = 0;  // integer in [0, 100]

    static Prediction of_label(std::string l) { return {Kind::label, std::move(l), 0}; }
    static Prediction of_value(int v) { return {Kind::value, {}, v}; }
    static Prediction none() { return {}; }

    bool parseable() const { return kind != Kind::unparseable; }
    // Canonical comparison string used for voting and confusion classes.
    std::string key() const;
};

// Categorical: earliest case-insensitive whole-word match against the label
// set (multi-word labels match as word sequences). Continuous: the first
// standalone integer in [0, 100].
Prediction parse_response(const std::string& text, bool categorical,
                          const std::vector<std::string>& label_set);

// Majority vote for labels (ties broken by earliest-sampled entry), median
// for values (lower of the two middles when the count is even). Unparseable
// entries are ignored unless every entry is unparseable.
Prediction self_consistency(const std::vector<Prediction>& predictions);

struct ClassificationMetrics {
    double acc = 0.0;
    double mcc = 0.0;
    double macro_f1 = 0.0;
};

ClassificationMetrics classification_metrics(const std::vector<Prediction>& predictions,
                                             const std::vector<std::string>& truths,
                                             const std::vector<std::string>& label_set);

struct RegressionMetrics {
    double mae = 0.0;
    double pcc = 0.0;
};

// Both sides on the normalized [0, 1] scale; integer predictions are divided
// by 100. Unparseable entries contribute a worst-case absolute error of 1
// and are excluded from the correlation.
RegressionMetrics regression_metrics(const std::vector<Prediction>& predictions,
                                     const std::vector<double>& truths);

struct MetricReport {
    std::string task;  // "<attribute>/<paradigm>" or "macro/<group>"
    bool classification = true;
    double acc = 0.0, mcc = 0.0, macro_f1 = 0.0;
    double mae = 0.0, pcc = 0.0;
    std::size_t n = 0;
    std::size_t n_unparseable = 0;
};

// Produces k raw response strings for one instruction item.
using ResponseSampler =
    std::function<std::vector<std::string>(const InstructionPair&, std::size_t)>;

// Groups items by (attribute, paradigm), decodes via the sampler, aggregates
// with self-consistency and computes per-task plus macro reports.
std::vector<MetricReport> evaluate_items(const std::vector<InstructionPair>& items,
                                         const std::vector<struct AttributeDef>& attributes,
                                         const ResponseSampler& sampler, std::size_t k);

std::string report_table(const std::vector<MetricReport>& reports);
void write_reports(const std::filesystem::path& path,
                   const std::vector<MetricReport>& reports);

}  // namespace fcni
