#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "muqar/data.hpp"

namespace muqar {

// Metric values keyed by name. A metric that is undefined on the given data
// (zero-variance PCC, zero-denominator WAPE, AUC with no valid class) is
// absent from the map and explained in warnings.
struct MetricReport {
    std::map<std::string, double> values;
    std::int64_t sample_count = 0;
    std::string model_tag;
    std::string ablation_tag;
    std::string dataset_tag;
    std::vector<std::string> warnings;

    bool has(const std::string& name) const { return values.count(name) != 0; }
    double get(const std::string& name) const;
};

// MAE, PCC, BA (agreement of 0.5 threshold crossings), WAPE.
MetricReport regression_metrics(const std::vector<double>& y, const std::vector<double>& y_hat);

// Accuracy (argmax) and macro one-vs-rest AUC with ties counted half.
// scores is row-major [n x classes]; each row must sum to 1 within 1e-6.
MetricReport classification_metrics(const std::vector<int>& labels,
                                    const std::vector<double>& scores, int num_classes);

void save_report_json(const std::string& path, const MetricReport& report);
// One flat row per report: model,ablation,dataset,samples,<metric columns>.
void save_reports_csv(const std::string& path, const std::vector<MetricReport>& reports,
                      const std::vector<std::string>& metric_columns);

// ---- TOPSIS -----------------------------------------------------------------

struct DecisionMatrix {
    std::vector<std::string> row_names;
    std::vector<std::string> criteria;
    std::vector<bool> benefit;      // per criterion: true = larger is better
    std::vector<double> weights;    // empty = uniform
    std::vector<double> values;     // row-major rows x criteria

    double at(std::size_t row, std::size_t col) const { return values[row * criteria.size() + col]; }
    void validate() const;
};

struct TopsisEntry {
    std::size_t row = 0;
    double closeness = 0.0;
};

struct TopsisResult {
    std::vector<TopsisEntry> ranking;  // descending closeness, ties by row order
    std::vector<std::string> warnings;
};

// Vector-normalizes each criterion column, applies weights, measures
// Euclidean distance to the ideal and anti-ideal rows and ranks by relative
// closeness d- / (d+ + d-). Zero-norm columns are dropped with a warning.
TopsisResult topsis(const DecisionMatrix& matrix);

// decision matrix CSV: header "candidate,<name>:cost|benefit,..."
DecisionMatrix load_decision_matrix_csv(const std::string& path);
void save_decision_matrix_csv(const std::string& path, const DecisionMatrix& matrix);
void save_topsis_csv(const std::string& path, const DecisionMatrix& matrix,
                     const TopsisResult& result);

}  // namespace muqar
