#include "muqar/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "muqar/tensor.hpp"

namespace muqar {

namespace {

constexpr double kPi = 3.14159265358979323846;

double squash(double z) { return 1.0 / (1.0 + std::exp(-z)); }

const std::vector<std::string>& attribute_word_bank() {
    static const std::vector<std::string> bank = {
        "floral",  "striped", "denim",   "leather", "pastel", "graphic", "vintage", "sporty",
        "formal",  "casual",  "knit",    "silk",    "velvet", "plaid",   "neon",    "minimal",
        "quilted", "checked", "cropped", "oversize", "linen",  "satin",   "boho",    "metallic"};
    return bank;
}

std::string attribute_word(int a) {
    const auto& bank = attribute_word_bank();
    if (a < static_cast<int>(bank.size())) return bank[a];
    return "style" + std::to_string(a);
}

}  // namespace

void SynthConfig::validate() const {
    if (num_groups < 1 || num_attributes < 1 || num_products < 2 || users_per_group < 1 ||
        weeks < 2 || visual_dim < 1) {
        throw ValidationError("synth: all counts must be positive");
    }
    if (num_drivers < 1 || num_drivers > num_attributes) {
        throw ValidationError("synth: num_drivers must be in [1, num_attributes]");
    }
    if (window_n < 1 || horizon_k < 1) throw ValidationError("synth: window and horizon must be >= 1");
    if (weeks < window_n + horizon_k + 1) {
        throw ValidationError("synth: span of " + std::to_string(weeks) + " weeks is below n+k+1 = " +
                              std::to_string(window_n + horizon_k + 1));
    }
    if (min_attrs < 1 || max_attrs < min_attrs || max_attrs > num_attributes) {
        throw ValidationError("synth: bad attribute count range");
    }
    if (new_product_fraction < 0.0 || new_product_fraction >= 1.0) {
        throw ValidationError("synth: new_product_fraction must be in [0,1)");
    }
    if (coupling < 0.0 || coupling > 1.0) throw ValidationError("synth: coupling must be in [0,1]");
    if (coupling_lag < 0) throw ValidationError("synth: negative coupling lag");
    if (iso_weekday(start_monday) != 1) throw ValidationError("synth: start date must be a Monday");
}

SynthConfig load_synth_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read synth config " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    SynthConfig c;
    c.num_groups = j.value("num_groups", c.num_groups);
    c.num_attributes = j.value("num_attributes", c.num_attributes);
    c.num_drivers = j.value("num_drivers", c.num_drivers);
    c.indicator_products_per_driver =
        j.value("indicator_products_per_driver", c.indicator_products_per_driver);
    c.num_products = j.value("num_products", c.num_products);
    c.new_product_fraction = j.value("new_product_fraction", c.new_product_fraction);
    c.users_per_group = j.value("users_per_group", c.users_per_group);
    c.weeks = j.value("weeks", c.weeks);
    c.window_n = j.value("window_n", c.window_n);
    c.horizon_k = j.value("horizon_k", c.horizon_k);
    if (j.contains("start_monday")) c.start_monday = parse_date(j.at("start_monday"));
    c.seasonal_amplitude = j.value("seasonal_amplitude", c.seasonal_amplitude);
    c.group_offset_scale = j.value("group_offset_scale", c.group_offset_scale);
    c.trend_step = j.value("trend_step", c.trend_step);
    c.trend_rho = j.value("trend_rho", c.trend_rho);
    c.follower_trend_step = j.value("follower_trend_step", c.follower_trend_step);
    c.follower_trend_rho = j.value("follower_trend_rho", c.follower_trend_rho);
    c.coupling = j.value("coupling", c.coupling);
    c.coupling_lag = j.value("coupling_lag", c.coupling_lag);
    c.noise = j.value("noise", c.noise);
    c.interactions_per_user_week = j.value("interactions_per_user_week", c.interactions_per_user_week);
    c.new_product_interactions = j.value("new_product_interactions", c.new_product_interactions);
    c.min_attrs = j.value("min_attrs", c.min_attrs);
    c.max_attrs = j.value("max_attrs", c.max_attrs);
    c.visual_dim = j.value("visual_dim", c.visual_dim);
    c.visual_noise = j.value("visual_noise", c.visual_noise);
    c.seed = j.value("seed", c.seed);
    return c;
}

void save_synth_config(const std::string& path, const SynthConfig& c) {
    nlohmann::json j{{"num_groups", c.num_groups},
                     {"num_attributes", c.num_attributes},
                     {"num_drivers", c.num_drivers},
                     {"indicator_products_per_driver", c.indicator_products_per_driver},
                     {"num_products", c.num_products},
                     {"new_product_fraction", c.new_product_fraction},
                     {"users_per_group", c.users_per_group},
                     {"weeks", c.weeks},
                     {"window_n", c.window_n},
                     {"horizon_k", c.horizon_k},
                     {"start_monday", format_date(c.start_monday)},
                     {"seasonal_amplitude", c.seasonal_amplitude},
                     {"group_offset_scale", c.group_offset_scale},
                     {"trend_step", c.trend_step},
                     {"trend_rho", c.trend_rho},
                     {"follower_trend_step", c.follower_trend_step},
                     {"follower_trend_rho", c.follower_trend_rho},
                     {"coupling", c.coupling},
                     {"coupling_lag", c.coupling_lag},
                     {"noise", c.noise},
                     {"interactions_per_user_week", c.interactions_per_user_week},
                     {"new_product_interactions", c.new_product_interactions},
                     {"min_attrs", c.min_attrs},
                     {"max_attrs", c.max_attrs},
                     {"visual_dim", c.visual_dim},
                     {"visual_noise", c.visual_noise},
                     {"seed", c.seed}};
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write synth config " + path);
    out << j.dump(2) << "\n";
}

SynthDataset simulate(const SynthConfig& cfg) {
    cfg.validate();
    SynthDataset ds;
    const int G = cfg.num_groups, C = cfg.num_attributes, W = cfg.weeks;

    // --- planted affinity ------------------------------------------------
    Rng structure_rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<double> phase(C);
    for (double& p : phase) p = 52.0 * unit(structure_rng);
    std::vector<double> offsets(static_cast<std::size_t>(G) * C);
    for (double& o : offsets) o = cfg.group_offset_scale * (2.0 * unit(structure_rng) - 1.0);

    // Drivers carry sinusoid + mean-reverting trend walk. Followers respond
    // to their driver's core with a group-specific lag (demographics adopt
    // trends at different speeds) on top of their own sinusoid and an
    // independent per-follower walk. The follower walks are
    // calendar-independent, so only the series expose them; the per-group
    // lags mean a follower's pooled panel column only shows a smeared driver
    // signal while the exogenous matrix carries the full driver trajectory.
    std::vector<double> driver_core(static_cast<std::size_t>(cfg.num_drivers) * W, 0.0);
    for (int a = 0; a < cfg.num_drivers; ++a) {
        double walk = 0.0;
        for (int w = 0; w < W; ++w) {
            walk = cfg.trend_rho * walk + cfg.trend_step * gauss(structure_rng);
            driver_core[static_cast<std::size_t>(a) * W + w] =
                cfg.seasonal_amplitude * std::sin(2.0 * kPi * (w + phase[a]) / 52.0) + walk;
        }
    }
    std::vector<double> own_core(static_cast<std::size_t>(C) * W, 0.0);
    for (int a = cfg.num_drivers; a < C; ++a) {
        double own_walk = 0.0;
        for (int w = 0; w < W; ++w) {
            own_walk = cfg.follower_trend_rho * own_walk +
                       cfg.follower_trend_step * gauss(structure_rng);
            own_core[static_cast<std::size_t>(a) * W + w] =
                (1.0 - cfg.coupling) * cfg.seasonal_amplitude *
                    std::sin(2.0 * kPi * (w + phase[a]) / 52.0) +
                own_walk;
        }
    }

    // z(g,a,w) with white noise; truth panel = mean over groups of squash(z).
    std::vector<double> affinity(static_cast<std::size_t>(G) * C * W);
    for (int g = 0; g < G; ++g) {
        for (int a = 0; a < C; ++a) {
            for (int w = 0; w < W; ++w) {
                double z = offsets[static_cast<std::size_t>(g) * C + a] + cfg.noise * gauss(structure_rng);
                if (a < cfg.num_drivers) {
                    z += driver_core[static_cast<std::size_t>(a) * W + w];
                } else {
                    const int driver = a % cfg.num_drivers;
                    const int lag = cfg.coupling_lag + g % 3;
                    z += cfg.coupling *
                             driver_core[static_cast<std::size_t>(driver) * W + std::max(0, w - lag)] +
                         own_core[static_cast<std::size_t>(a) * W + w];
                }
                affinity[(static_cast<std::size_t>(g) * C + a) * W + w] = z;
            }
        }
    }
    ds.truth.num_attributes = C;
    ds.truth.weeks.reserve(W);
    const std::int64_t start_day = days_from_civil(cfg.start_monday);
    for (int w = 0; w < W; ++w) ds.truth.weeks.push_back(civil_from_days(start_day + 7 * w));
    ds.truth.values.assign(static_cast<std::size_t>(W) * C, 0.0);
    ds.truth.observed.assign(static_cast<std::size_t>(W) * C, 1);
    for (int w = 0; w < W; ++w) {
        for (int a = 0; a < C; ++a) {
            double sum = 0.0;
            for (int g = 0; g < G; ++g) {
                sum += squash(affinity[(static_cast<std::size_t>(g) * C + a) * W + w]);
            }
            ds.truth.at(w, a) = sum / G;
        }
    }

    // --- catalog -----------------------------------------------------------
    std::vector<double> projection(static_cast<std::size_t>(cfg.visual_dim) * C);
    for (double& v : projection) v = 2.0 * unit(structure_rng) - 1.0;

    const int n_new = static_cast<int>(std::lround(cfg.num_products * cfg.new_product_fraction));
    const int n_established = cfg.num_products - n_new;
    if (n_established < 1 || n_new < 2) {
        throw ValidationError("synth: product split leaves too few established or new products");
    }

    // The first num_drivers * indicator_products_per_driver established
    // products are single-attribute indicators for the driver trends, so
    // driver columns materialize densely in the panel. Every other product
    // carries follower attributes only; for those the driver trajectories are
    // observable solely through the exogenous matrix.
    const int n_indicators = cfg.num_drivers * cfg.indicator_products_per_driver;
    const int n_followers = C - cfg.num_drivers;
    if (n_established <= n_indicators || n_followers < cfg.max_attrs) {
        throw ValidationError("synth: need more established products than driver indicators and "
                              "enough follower attributes");
    }
    std::uniform_int_distribution<int> attr_count(cfg.min_attrs, cfg.max_attrs);
    std::uniform_int_distribution<int> attr_pick(cfg.num_drivers, C - 1);
    for (int p = 0; p < cfg.num_products; ++p) {
        ProductRecord rec;
        rec.product_id = (p < n_established ? "est" : "new") + std::to_string(p);
        std::set<int> attrs;
        if (p < n_indicators) {
            attrs.insert(p % cfg.num_drivers);  // driver indicator product
        } else {
            const int want = attr_count(structure_rng);
            while (static_cast<int>(attrs.size()) < want) attrs.insert(attr_pick(structure_rng));
        }
        rec.attribute_ids.assign(attrs.begin(), attrs.end());
        rec.feature_row = p;
        std::string caption = "a product with";
        for (std::size_t i = 0; i < rec.attribute_ids.size(); ++i) {
            if (i > 0) caption += " and";
            caption += " " + attribute_word(rec.attribute_ids[i]);
        }
        rec.caption = caption;

        std::vector<double> feat(cfg.visual_dim, 0.0);
        for (int a : rec.attribute_ids) {
            for (int i = 0; i < cfg.visual_dim; ++i) {
                feat[i] += projection[static_cast<std::size_t>(i) * C + a];
            }
        }
        for (double& v : feat) {
            v = v / static_cast<double>(rec.attribute_ids.size()) + cfg.visual_noise * gauss(structure_rng);
        }
        ds.catalog.features.push_back(std::move(feat));
        ds.catalog.products.push_back(std::move(rec));
    }

    // New products appear exactly once: one group, horizon_k consecutive weeks.
    std::uniform_int_distribution<int> group_pick(0, G - 1);
    std::uniform_int_distribution<int> week_pick(cfg.window_n, W - cfg.horizon_k);
    std::vector<int> new_group(n_new), new_week(n_new);
    for (int i = 0; i < n_new; ++i) {
        new_group[i] = group_pick(structure_rng);
        new_week[i] = week_pick(structure_rng);
    }

    // --- interactions -------------------------------------------------------
    auto product_affinity = [&](const ProductRecord& rec, int g, int w) {
        double sum = 0.0;
        for (int a : rec.attribute_ids) {
            sum += affinity[(static_cast<std::size_t>(g) * C + a) * W + w];
        }
        return sum / static_cast<double>(rec.attribute_ids.size());
    };

    for (int g = 0; g < G; ++g) {
        Rng rng(cfg.seed ^ (0x517cc1b727220a95ull + 0x2545f4914f6cdd1dull * (g + 1)));
        std::uniform_int_distribution<int> day_off(0, 6);
        std::uniform_int_distribution<int> est_pick(0, n_established - 1);
        std::uniform_int_distribution<int> user_pick(0, cfg.users_per_group - 1);
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        auto user_id = [g](int u) { return "g" + std::to_string(g) + "u" + std::to_string(u); };

        for (int w = 0; w < W; ++w) {
            for (int u = 0; u < cfg.users_per_group; ++u) {
                for (int j = 0; j < cfg.interactions_per_user_week; ++j) {
                    const int p = est_pick(rng);
                    const ProductRecord& rec = ds.catalog.products[p];
                    InteractionRecord r;
                    r.user_id = user_id(u);
                    r.product_id = rec.product_id;
                    r.group_id = g;
                    r.day = civil_from_days(start_day + 7 * w + day_off(rng));
                    r.positive = coin(rng) < squash(product_affinity(rec, g, w));
                    ds.log.records.push_back(std::move(r));
                }
            }
            for (int i = 0; i < n_new; ++i) {
                if (new_group[i] != g) continue;
                if (w < new_week[i] || w >= new_week[i] + cfg.horizon_k) continue;
                const ProductRecord& rec = ds.catalog.products[n_established + i];
                for (int j = 0; j < cfg.new_product_interactions; ++j) {
                    InteractionRecord r;
                    r.user_id = user_id(user_pick(rng));
                    r.product_id = rec.product_id;
                    r.group_id = g;
                    r.day = civil_from_days(start_day + 7 * w + day_off(rng));
                    r.positive = coin(rng) < squash(product_affinity(rec, g, w));
                    ds.log.records.push_back(std::move(r));
                }
            }
        }
    }

    // --- vocabulary + manifest ------------------------------------------------
    std::vector<std::string> tokens = {"product"};
    for (int a = 0; a < C; ++a) tokens.push_back(attribute_word(a));
    ds.vocab = Vocabulary::from_tokens(tokens);

    ds.manifest.feature_dim = cfg.visual_dim;
    ds.manifest.num_groups = G;
    ds.manifest.num_attributes = C;
    ds.manifest.vocab_size = ds.vocab.size();
    ds.manifest.date_start = cfg.start_monday;
    ds.manifest.date_end = civil_from_days(start_day + 7 * W - 1);
    return ds;
}

void save_synth_dataset(const std::string& dir, const SynthDataset& ds) {
    std::filesystem::create_directories(dir);
    save_interactions_csv(dir + "/interactions.csv", ds.log);
    save_catalog_csv(dir + "/catalog.csv", dir + "/features.bin", ds.catalog, ds.manifest);
    save_manifest(dir + "/manifest.json", ds.manifest);
    ds.vocab.save(dir + "/vocab.txt");
    save_panel_csv(dir + "/truth_panel.csv", dir + "/truth_mask.csv", ds.truth);
}

}  // namespace muqar
