#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muqar/data.hpp"
#include "muqar/dates.hpp"

namespace muqar {

// Weekly popularity per attribute: rows are contiguous ISO weeks (Monday
// start dates), columns attribute ids 0..C-1.
struct AttributePanel {
    std::vector<Date> weeks;          // strictly increasing, 7 days apart
    int num_attributes = 0;
    std::vector<double> values;       // weeks.size() x num_attributes, row-major
    std::vector<std::uint8_t> observed;

    double& at(std::size_t week, int attr) { return values[week * num_attributes + attr]; }
    double at(std::size_t week, int attr) const { return values[week * num_attributes + attr]; }
    bool is_observed(std::size_t week, int attr) const {
        return observed[week * num_attributes + attr] != 0;
    }
    // Index of the row whose week start equals `monday`, or -1.
    std::int64_t week_index(const Date& monday) const;
};

struct PanelSample {
    Date day;
    int attribute = 0;
    double value = 0.0;
};

// Cell (w,c) = mean of samples for attribute c in ISO week w; rows span the
// full sample range, unobserved cells masked.
AttributePanel weekly_aggregate(const std::vector<PanelSample>& samples, int num_attributes);

// Fraction of masked cells.
double sparsity(const AttributePanel& panel);

// Interior gaps filled linearly per column; leading/trailing gaps hold the
// nearest observed value. A fully-masked column raises ValidationError naming
// the attribute. Result mask is all-true; idempotent.
AttributePanel interpolate(const AttributePanel& panel);

// QAR input pair for one product window. A holds the target-attribute
// series (ascending attribute order, zero-padded to t_max channels); X holds
// every attribute with the target columns zeroed to block leakage.
struct QarWindow {
    int n = 0;
    int t_max = 0;
    int num_attributes = 0;
    std::vector<double> a;            // n x t_max
    std::vector<double> x;            // n x num_attributes
    std::vector<int> target_slots;    // ascending attribute ids occupying A's channels
};

// Rows cover the n weeks before end_week (exclusive). Insufficient history
// rejects the window via ValidationError; it is never shortened.
QarWindow build_window(const AttributePanel& panel, const std::vector<int>& target_attrs,
                       const Date& end_week, int n, int t_max);

// One (product, group, forecast week) supervision tuple.
struct TrainingExample {
    std::string product_id;
    int group_id = 0;
    Date end_week;                    // forecast week start; also the temporal-feature date
    std::vector<double> visual;       // pooled + L2-normalized, length V
    std::vector<int> caption_tokens;  // fixed length, PAD = 0
    std::vector<int> attr_slots;      // length t_max, table rows (attr id + 1), PAD = 0
    QarWindow window;
    std::vector<double> target;       // length k
};

struct PopularitySample {
    std::string product_id;
    int group_id = 0;
    Date week_start;
    double value = 0.0;
};

struct ExampleBuildConfig {
    int n = 12;
    int k = 1;
    int t_max = 9;
    int caption_len = 16;
};

struct ExampleBuildResult {
    std::vector<TrainingExample> examples;
    std::int64_t skipped = 0;  // windows or products dropped, counted not silently lost
};

// One example per (product, group, end_week) whose k target weeks are all
// defined. Products absent from the catalog, target sets wider than t_max and
// windows with insufficient history are skipped and counted. The panel must
// be interpolated. Shards across threads when `threads` > 1; output order is
// independent of the thread count.
ExampleBuildResult make_examples(const Catalog& catalog,
                                 const std::vector<PopularitySample>& samples,
                                 const AttributePanel& panel, const DatasetManifest& manifest,
                                 const Vocabulary& vocab, const std::set<std::string>& stop_words,
                                 const ExampleBuildConfig& config, int threads = 1);

// Panel CSV: "week" column plus one column per attribute id; the mask is a
// parallel CSV of 0/1 cells.
void save_panel_csv(const std::string& values_path, const std::string& mask_path,
                    const AttributePanel& panel);
AttributePanel load_panel_csv(const std::string& values_path, const std::string& mask_path);

std::vector<PopularitySample> load_popularity_samples_csv(const std::string& path);
void save_popularity_samples_csv(const std::string& path,
                                 const std::vector<PopularitySample>& samples);

}  // namespace muqar
