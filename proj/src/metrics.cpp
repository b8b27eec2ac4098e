#include "muqar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace muqar {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

double MetricReport::get(const std::string& name) const {
    const auto it = values.find(name);
    if (it == values.end()) throw ValidationError("metric '" + name + "' is undefined here");
    return it->second;
}

MetricReport regression_metrics(const std::vector<double>& y, const std::vector<double>& y_hat) {
    if (y.size() != y_hat.size()) throw ValidationError("regression_metrics: length mismatch");
    if (y.size() < 2) throw ValidationError("regression_metrics: need at least 2 samples");
    const std::size_t n = y.size();

    MetricReport report;
    report.sample_count = static_cast<std::int64_t>(n);

    double abs_err = 0.0, abs_y = 0.0;
    std::int64_t agree = 0;
    for (std::size_t i = 0; i < n; ++i) {
        abs_err += std::abs(y[i] - y_hat[i]);
        abs_y += std::abs(y[i]);
        agree += (y[i] > 0.5) == (y_hat[i] > 0.5);
    }
    report.values["MAE"] = abs_err / static_cast<double>(n);
    report.values["BA"] = static_cast<double>(agree) / static_cast<double>(n);
    if (abs_y > 0.0) {
        report.values["WAPE"] = abs_err / abs_y;
    } else {
        report.warnings.push_back("WAPE undefined: sum |y| is zero");
    }

    const double mean_y = std::accumulate(y.begin(), y.end(), 0.0) / n;
    const double mean_p = std::accumulate(y_hat.begin(), y_hat.end(), 0.0) / n;
    double cov = 0.0, var_y = 0.0, var_p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dy = y[i] - mean_y, dp = y_hat[i] - mean_p;
        cov += dy * dp;
        var_y += dy * dy;
        var_p += dp * dp;
    }
    if (var_y > 0.0 && var_p > 0.0) {
        report.values["PCC"] = cov / std::sqrt(var_y * var_p);
    } else {
        report.warnings.push_back("PCC undefined: zero variance");
    }
    return report;
}

MetricReport classification_metrics(const std::vector<int>& labels,
                                    const std::vector<double>& scores, int num_classes) {
    if (num_classes < 2) throw ValidationError("classification_metrics: need >= 2 classes");
    const std::size_t n = labels.size();
    if (scores.size() != n * static_cast<std::size_t>(num_classes)) {
        throw ValidationError("classification_metrics: scores are not [n x classes]");
    }
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int c = 0; c < num_classes; ++c) sum += scores[i * num_classes + c];
        if (std::abs(sum - 1.0) > 1e-6) {
            throw ValidationError("classification_metrics: score row " + std::to_string(i) +
                                  " sums to " + std::to_string(sum));
        }
        if (labels[i] < 0 || labels[i] >= num_classes) {
            throw ValidationError("classification_metrics: label out of range");
        }
    }

    MetricReport report;
    report.sample_count = static_cast<std::int64_t>(n);

    std::int64_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = scores.data() + i * num_classes;
        const int arg = static_cast<int>(std::max_element(row, row + num_classes) - row);
        correct += arg == labels[i];
    }
    report.values["Accuracy"] = static_cast<double>(correct) / static_cast<double>(n);

    // Macro one-vs-rest AUC via the rank statistic with average ranks on ties.
    double auc_sum = 0.0;
    int auc_classes = 0;
    std::vector<std::size_t> idx(n);
    std::vector<double> ranks(n);
    for (int c = 0; c < num_classes; ++c) {
        std::int64_t pos = 0;
        for (std::size_t i = 0; i < n; ++i) pos += labels[i] == c;
        if (pos == 0) {
            report.warnings.push_back("class " + std::to_string(c) + " absent from labels; skipped");
            continue;
        }
        if (pos == static_cast<std::int64_t>(n)) {
            report.warnings.push_back("class " + std::to_string(c) + " has no negatives; skipped");
            continue;
        }
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return scores[a * num_classes + c] < scores[b * num_classes + c];
        });
        for (std::size_t i = 0; i < n;) {
            std::size_t j = i;
            while (j + 1 < n && scores[idx[j + 1] * num_classes + c] == scores[idx[i] * num_classes + c]) {
                ++j;
            }
            const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = avg_rank;
            i = j + 1;
        }
        double rank_pos = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] == c) rank_pos += ranks[i];
        }
        const double neg = static_cast<double>(n) - static_cast<double>(pos);
        auc_sum += (rank_pos - static_cast<double>(pos) * (pos + 1) / 2.0) / (pos * neg);
        ++auc_classes;
    }
    if (auc_classes > 0) {
        report.values["AUC"] = auc_sum / auc_classes;
    } else {
        report.warnings.push_back("AUC undefined: no class with both positives and negatives");
    }
    return report;
}

void save_report_json(const std::string& path, const MetricReport& report) {
    nlohmann::json j;
    j["model"] = report.model_tag;
    j["ablation"] = report.ablation_tag;
    j["dataset"] = report.dataset_tag;
    j["samples"] = report.sample_count;
    j["metrics"] = report.values;
    j["warnings"] = report.warnings;
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write report " + path);
    out << j.dump(2) << "\n";
}

void save_reports_csv(const std::string& path, const std::vector<MetricReport>& reports,
                      const std::vector<std::string>& metric_columns) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write report table " + path);
    out << "model,ablation,dataset,samples";
    for (const auto& m : metric_columns) out << ',' << m;
    out << "\n";
    for (const MetricReport& r : reports) {
        out << r.model_tag << ',' << r.ablation_tag << ',' << r.dataset_tag << ',' << r.sample_count;
        for (const auto& m : metric_columns) {
            out << ',';
            if (r.has(m)) out << fmt_double(r.get(m));
        }
        out << "\n";
    }
}

// ---- TOPSIS ----------------------------------------------------------------------

void DecisionMatrix::validate() const {
    const std::size_t rows = row_names.size(), cols = criteria.size();
    if (rows < 2) throw ValidationError("topsis: need at least 2 candidate rows");
    if (cols < 1) throw ValidationError("topsis: need at least 1 criterion");
    if (benefit.size() != cols) throw ValidationError("topsis: direction per criterion required");
    if (!weights.empty() && weights.size() != cols) {
        throw ValidationError("topsis: weight count does not match criteria");
    }
    if (values.size() != rows * cols) throw ValidationError("topsis: values are not rows x criteria");
    for (double v : values) {
        if (!std::isfinite(v)) throw ValidationError("topsis: non-finite entry");
    }
}

TopsisResult topsis(const DecisionMatrix& matrix) {
    matrix.validate();
    const std::size_t rows = matrix.row_names.size(), cols = matrix.criteria.size();

    TopsisResult result;
    std::vector<std::size_t> used;
    std::vector<double> norm(cols, 0.0);
    for (std::size_t c = 0; c < cols; ++c) {
        double sq = 0.0;
        for (std::size_t r = 0; r < rows; ++r) sq += matrix.at(r, c) * matrix.at(r, c);
        norm[c] = std::sqrt(sq);
        if (norm[c] > 0.0) {
            used.push_back(c);
        } else {
            result.warnings.push_back("criterion '" + matrix.criteria[c] +
                                      "' is all-zero; dropped");
        }
    }
    if (used.empty()) throw ValidationError("topsis: no usable criterion column");

    double weight_sum = 0.0;
    std::vector<double> weight(used.size());
    for (std::size_t j = 0; j < used.size(); ++j) {
        weight[j] = matrix.weights.empty() ? 1.0 : matrix.weights[used[j]];
        if (weight[j] <= 0.0) throw ValidationError("topsis: weights must be positive");
        weight_sum += weight[j];
    }
    for (double& w : weight) w /= weight_sum;

    // Weighted normalized matrix plus per-column ideal / anti-ideal.
    std::vector<double> v(rows * used.size());
    std::vector<double> ideal(used.size()), anti(used.size());
    for (std::size_t j = 0; j < used.size(); ++j) {
        const std::size_t c = used[j];
        double best = 0.0, worst = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            const double value = weight[j] * matrix.at(r, c) / norm[c];
            v[r * used.size() + j] = value;
            if (r == 0) {
                best = worst = value;
            } else {
                best = std::max(best, value);
                worst = std::min(worst, value);
            }
        }
        if (!matrix.benefit[c]) std::swap(best, worst);
        ideal[j] = best;
        anti[j] = worst;
    }

    std::vector<TopsisEntry> entries(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double d_pos = 0.0, d_neg = 0.0;
        for (std::size_t j = 0; j < used.size(); ++j) {
            const double value = v[r * used.size() + j];
            d_pos += (value - ideal[j]) * (value - ideal[j]);
            d_neg += (value - anti[j]) * (value - anti[j]);
        }
        d_pos = std::sqrt(d_pos);
        d_neg = std::sqrt(d_neg);
        entries[r].row = r;
        entries[r].closeness = (d_pos + d_neg) > 0.0 ? d_neg / (d_pos + d_neg) : 0.5;
    }
    std::stable_sort(entries.begin(), entries.end(),
                     [](const TopsisEntry& a, const TopsisEntry& b) {
                         return a.closeness > b.closeness;
                     });
    result.ranking = std::move(entries);
    return result;
}

DecisionMatrix load_decision_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read decision matrix " + path);
    DecisionMatrix m;
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty decision matrix " + path);
    {
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');  // "candidate"
        while (std::getline(ss, cell, ',')) {
            const std::size_t colon = cell.rfind(':');
            if (colon == std::string::npos) {
                throw ValidationError("decision matrix header needs name:cost|benefit, got '" +
                                      cell + "'");
            }
            const std::string dir = cell.substr(colon + 1);
            if (dir != "cost" && dir != "benefit") {
                throw ValidationError("criterion direction must be cost or benefit, got '" + dir + "'");
            }
            m.criteria.push_back(cell.substr(0, colon));
            m.benefit.push_back(dir == "benefit");
        }
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        m.row_names.push_back(cell);
        for (std::size_t c = 0; c < m.criteria.size(); ++c) {
            if (!std::getline(ss, cell, ',')) {
                throw ValidationError("decision matrix row '" + m.row_names.back() + "' too short");
            }
            m.values.push_back(std::stod(cell));
        }
    }
    return m;
}

void save_decision_matrix_csv(const std::string& path, const DecisionMatrix& matrix) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write decision matrix " + path);
    out << "candidate";
    for (std::size_t c = 0; c < matrix.criteria.size(); ++c) {
        out << ',' << matrix.criteria[c] << ':' << (matrix.benefit[c] ? "benefit" : "cost");
    }
    out << "\n";
    for (std::size_t r = 0; r < matrix.row_names.size(); ++r) {
        out << matrix.row_names[r];
        for (std::size_t c = 0; c < matrix.criteria.size(); ++c) out << ',' << fmt_double(matrix.at(r, c));
        out << "\n";
    }
}

void save_topsis_csv(const std::string& path, const DecisionMatrix& matrix,
                     const TopsisResult& result) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write ranking " + path);
    out << "rank,candidate,closeness\n";
    for (std::size_t i = 0; i < result.ranking.size(); ++i) {
        out << (i + 1) << ',' << matrix.row_names[result.ranking[i].row] << ','
            << fmt_double(result.ranking[i].closeness) << "\n";
    }
}

}  // namespace muqar
