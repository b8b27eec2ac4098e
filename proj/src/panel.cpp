#include "muqar/panel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "muqar/fusion.hpp"

namespace muqar {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::int64_t AttributePanel::week_index(const Date& monday) const {
    if (weeks.empty()) return -1;
    const std::int64_t delta = days_from_civil(monday) - days_from_civil(weeks.front());
    if (delta < 0 || delta % 7 != 0) return -1;
    const std::int64_t idx = delta / 7;
    return idx < static_cast<std::int64_t>(weeks.size()) ? idx : -1;
}

AttributePanel weekly_aggregate(const std::vector<PanelSample>& samples, int num_attributes) {
    if (samples.empty()) throw ValidationError("weekly_aggregate: no samples");
    if (num_attributes <= 0) throw ValidationError("weekly_aggregate: no attributes");

    std::int64_t first = 0, last = 0;
    bool any = false;
    for (const PanelSample& s : samples) {
        if (s.attribute < 0 || s.attribute >= num_attributes) {
            throw ValidationError("weekly_aggregate: attribute " + std::to_string(s.attribute) +
                                  " out of range");
        }
        const std::int64_t monday = days_from_civil(iso_week_start(s.day));
        if (!any) {
            first = last = monday;
            any = true;
        } else {
            first = std::min(first, monday);
            last = std::max(last, monday);
        }
    }

    AttributePanel panel;
    panel.num_attributes = num_attributes;
    const std::int64_t n_weeks = (last - first) / 7 + 1;
    panel.weeks.reserve(n_weeks);
    for (std::int64_t w = 0; w < n_weeks; ++w) panel.weeks.push_back(civil_from_days(first + 7 * w));
    panel.values.assign(n_weeks * num_attributes, 0.0);
    panel.observed.assign(n_weeks * num_attributes, 0);

    std::vector<double> sums(n_weeks * num_attributes, 0.0);
    std::vector<std::int64_t> counts(n_weeks * num_attributes, 0);
    for (const PanelSample& s : samples) {
        const std::int64_t w = (days_from_civil(iso_week_start(s.day)) - first) / 7;
        const std::int64_t cell = w * num_attributes + s.attribute;
        sums[cell] += s.value;
        counts[cell] += 1;
    }
    for (std::int64_t cell = 0; cell < n_weeks * num_attributes; ++cell) {
        if (counts[cell] > 0) {
            panel.values[cell] = sums[cell] / static_cast<double>(counts[cell]);
            panel.observed[cell] = 1;
        }
    }
    return panel;
}

double sparsity(const AttributePanel& panel) {
    if (panel.observed.empty()) throw ValidationError("sparsity: empty panel");
    std::int64_t masked = 0;
    for (std::uint8_t o : panel.observed) masked += o == 0;
    return static_cast<double>(masked) / static_cast<double>(panel.observed.size());
}

AttributePanel interpolate(const AttributePanel& panel) {
    AttributePanel out = panel;
    const std::int64_t n_weeks = static_cast<std::int64_t>(panel.weeks.size());
    for (int c = 0; c < panel.num_attributes; ++c) {
        std::vector<std::int64_t> obs;
        for (std::int64_t w = 0; w < n_weeks; ++w) {
            if (panel.is_observed(w, c)) obs.push_back(w);
        }
        if (obs.empty()) {
            throw ValidationError("interpolate: attribute " + std::to_string(c) +
                                  " has no observed weeks");
        }
        // leading and trailing holds
        for (std::int64_t w = 0; w < obs.front(); ++w) out.at(w, c) = panel.at(obs.front(), c);
        for (std::int64_t w = obs.back() + 1; w < n_weeks; ++w) out.at(w, c) = panel.at(obs.back(), c);
        // interior gaps
        for (std::size_t i = 0; i + 1 < obs.size(); ++i) {
            const std::int64_t lo = obs[i], hi = obs[i + 1];
            const double vlo = panel.at(lo, c), vhi = panel.at(hi, c);
            for (std::int64_t w = lo + 1; w < hi; ++w) {
                const double t = static_cast<double>(w - lo) / static_cast<double>(hi - lo);
                out.at(w, c) = vlo + t * (vhi - vlo);
            }
        }
    }
    std::fill(out.observed.begin(), out.observed.end(), 1);
    return out;
}

QarWindow build_window(const AttributePanel& panel, const std::vector<int>& target_attrs,
                       const Date& end_week, int n, int t_max) {
    if (n <= 0) throw ValidationError("build_window: n must be positive");
    std::vector<int> attrs = target_attrs;
    std::sort(attrs.begin(), attrs.end());
    attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());
    if (static_cast<int>(attrs.size()) > t_max) {
        throw ValidationError("build_window: " + std::to_string(attrs.size()) +
                              " target attributes exceed t_max=" + std::to_string(t_max));
    }
    for (int a : attrs) {
        if (a < 0 || a >= panel.num_attributes) {
            throw ValidationError("build_window: attribute " + std::to_string(a) + " out of range");
        }
    }
    // Rows [end-n, end), all inside the panel.
    const std::int64_t end_off =
        (days_from_civil(end_week) - days_from_civil(panel.weeks.front()));
    if (end_off % 7 != 0) throw ValidationError("build_window: end_week is not a panel week start");
    const std::int64_t end_idx = end_off / 7;
    const std::int64_t start_idx = end_idx - n;
    if (start_idx < 0 || end_idx > static_cast<std::int64_t>(panel.weeks.size())) {
        throw ValidationError("build_window: insufficient history before " + format_date(end_week) +
                              " (need " + std::to_string(n) + " weeks)");
    }

    QarWindow win;
    win.n = n;
    win.t_max = t_max;
    win.num_attributes = panel.num_attributes;
    win.target_slots = attrs;
    win.a.assign(static_cast<std::size_t>(n) * t_max, 0.0);
    win.x.assign(static_cast<std::size_t>(n) * panel.num_attributes, 0.0);
    for (int r = 0; r < n; ++r) {
        const std::int64_t w = start_idx + r;
        for (std::size_t j = 0; j < attrs.size(); ++j) {
            win.a[static_cast<std::size_t>(r) * t_max + j] = panel.at(w, attrs[j]);
        }
        for (int c = 0; c < panel.num_attributes; ++c) {
            win.x[static_cast<std::size_t>(r) * panel.num_attributes + c] = panel.at(w, c);
        }
    }
    for (int j : attrs) {
        for (int r = 0; r < n; ++r) win.x[static_cast<std::size_t>(r) * panel.num_attributes + j] = 0.0;
    }
    return win;
}

namespace {

struct SeriesKey {
    std::string product_id;
    int group_id;
    bool operator<(const SeriesKey& o) const {
        if (product_id != o.product_id) return product_id < o.product_id;
        return group_id < o.group_id;
    }
};

}  // namespace

ExampleBuildResult make_examples(const Catalog& catalog,
                                 const std::vector<PopularitySample>& samples,
                                 const AttributePanel& panel, const DatasetManifest& manifest,
                                 const Vocabulary& vocab, const std::set<std::string>& stop_words,
                                 const ExampleBuildConfig& config, int threads) {
    if (config.k < 1) throw ValidationError("make_examples: k must be >= 1");
    for (std::uint8_t o : panel.observed) {
        if (!o) throw ValidationError("make_examples: panel must be interpolated first");
    }

    std::map<std::string, const ProductRecord*> by_id;
    for (const ProductRecord& p : catalog.products) by_id[p.product_id] = &p;

    // Weekly popularity series per (product, group).
    std::map<SeriesKey, std::map<std::int64_t, double>> series;
    std::int64_t skipped = 0;
    for (const PopularitySample& s : samples) {
        series[{s.product_id, s.group_id}][days_from_civil(iso_week_start(s.week_start))] = s.value;
    }

    struct Task {
        const ProductRecord* product;
        int group_id;
        std::vector<std::pair<std::int64_t, double>> weeks;  // (monday, value)
    };
    std::vector<Task> tasks;
    for (const auto& [key, weeks] : series) {
        const auto it = by_id.find(key.product_id);
        if (it == by_id.end()) {
            ++skipped;
            continue;
        }
        Task t;
        t.product = it->second;
        t.group_id = key.group_id;
        t.weeks.assign(weeks.begin(), weeks.end());
        tasks.push_back(std::move(t));
    }

    const auto& stops = stop_words;
    auto run_task = [&](const Task& task, std::vector<TrainingExample>& out,
                        std::int64_t& local_skipped) {
        const ProductRecord& p = *task.product;
        if (static_cast<int>(p.attribute_ids.size()) > config.t_max) {
            ++local_skipped;
            return;
        }
        std::vector<double> visual = encode_visual(catalog.features.at(p.feature_row),
                                                   manifest.spatial_h, manifest.spatial_w);
        std::vector<int> caption = tokenize_caption(p.caption, vocab, stops, config.caption_len);
        std::vector<int> slots(config.t_max, 0);
        for (std::size_t i = 0; i < p.attribute_ids.size(); ++i) slots[i] = p.attribute_ids[i] + 1;

        std::map<std::int64_t, double> week_value(task.weeks.begin(), task.weeks.end());
        for (const auto& [monday, value] : task.weeks) {
            // target weeks monday .. monday + 7*(k-1) must all be defined
            std::vector<double> target;
            target.reserve(config.k);
            bool ok = true;
            for (int j = 0; j < config.k; ++j) {
                const auto it = week_value.find(monday + 7 * j);
                if (it == week_value.end()) {
                    ok = false;
                    break;
                }
                target.push_back(it->second);
            }
            if (!ok) continue;  // not a forecastable window, not an error

            TrainingExample ex;
            ex.product_id = p.product_id;
            ex.group_id = task.group_id;
            ex.end_week = civil_from_days(monday);
            try {
                ex.window = build_window(panel, p.attribute_ids, ex.end_week, config.n, config.t_max);
            } catch (const ValidationError&) {
                ++local_skipped;
                continue;
            }
            ex.visual = visual;
            ex.caption_tokens = caption;
            ex.attr_slots = slots;
            ex.target = std::move(target);
            out.push_back(std::move(ex));
        }
    };

    ExampleBuildResult result;
    result.skipped = skipped;
    if (threads <= 1 || tasks.size() < 2) {
        for (const Task& t : tasks) run_task(t, result.examples, result.skipped);
        return result;
    }

    const int n_threads = std::min<int>(threads, static_cast<int>(tasks.size()));
    std::vector<std::vector<TrainingExample>> outs(tasks.size());
    std::vector<std::int64_t> skips(tasks.size(), 0);
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1)) {
                run_task(tasks[i], outs[i], skips[i]);
            }
        });
    }
    for (auto& th : pool) th.join();
    // Merge in task order so the output is independent of scheduling.
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        result.skipped += skips[i];
        for (auto& ex : outs[i]) result.examples.push_back(std::move(ex));
    }
    return result;
}

void save_panel_csv(const std::string& values_path, const std::string& mask_path,
                    const AttributePanel& panel) {
    std::ofstream values(values_path);
    if (!values) throw ValidationError("cannot write panel " + values_path);
    std::ofstream mask(mask_path);
    if (!mask) throw ValidationError("cannot write panel mask " + mask_path);
    values << "week";
    mask << "week";
    for (int c = 0; c < panel.num_attributes; ++c) {
        values << ",attr_" << c;
        mask << ",attr_" << c;
    }
    values << "\n";
    mask << "\n";
    for (std::size_t w = 0; w < panel.weeks.size(); ++w) {
        values << format_date(panel.weeks[w]);
        mask << format_date(panel.weeks[w]);
        for (int c = 0; c < panel.num_attributes; ++c) {
            values << ',' << fmt_double(panel.at(w, c));
            mask << ',' << (panel.is_observed(w, c) ? '1' : '0');
        }
        values << "\n";
        mask << "\n";
    }
}

AttributePanel load_panel_csv(const std::string& values_path, const std::string& mask_path) {
    std::ifstream values(values_path);
    if (!values) throw ValidationError("cannot read panel " + values_path);
    std::ifstream mask(mask_path);
    if (!mask) throw ValidationError("cannot read panel mask " + mask_path);

    AttributePanel panel;
    std::string header;
    if (!std::getline(values, header)) throw ValidationError("empty panel " + values_path);
    panel.num_attributes = static_cast<int>(std::count(header.begin(), header.end(), ','));
    if (panel.num_attributes <= 0) throw ValidationError("panel has no attribute columns");
    std::string mask_header;
    std::getline(mask, mask_header);

    std::string vline, mline;
    while (std::getline(values, vline)) {
        if (vline.empty()) continue;
        if (!std::getline(mask, mline)) throw ValidationError("panel mask shorter than values");
        std::stringstream vs(vline), ms(mline);
        std::string cell;
        std::getline(vs, cell, ',');
        panel.weeks.push_back(parse_date(cell));
        std::getline(ms, cell, ',');
        for (int c = 0; c < panel.num_attributes; ++c) {
            if (!std::getline(vs, cell, ',')) throw ValidationError("panel row too short");
            panel.values.push_back(std::stod(cell));
            if (!std::getline(ms, cell, ',')) throw ValidationError("panel mask row too short");
            panel.observed.push_back(cell == "1" ? 1 : 0);
        }
    }
    return panel;
}

std::vector<PopularitySample> load_popularity_samples_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read popularity samples " + path);
    std::vector<PopularitySample> out;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string product, group, week, value;
        std::getline(ss, product, ',');
        std::getline(ss, group, ',');
        std::getline(ss, week, ',');
        std::getline(ss, value, ',');
        out.push_back({product, std::stoi(group), parse_date(week), std::stod(value)});
    }
    return out;
}

void save_popularity_samples_csv(const std::string& path,
                                 const std::vector<PopularitySample>& samples) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write popularity samples " + path);
    out << "product_id,group_id,week_start,value\n";
    for (const PopularitySample& s : samples) {
        out << s.product_id << ',' << s.group_id << ',' << format_date(s.week_start) << ','
            << fmt_double(s.value) << "\n";
    }
}

}  // namespace muqar
