#pragma once

#include <cstdint>
#include <string>

#include "muqar/data.hpp"
#include "muqar/panel.hpp"

namespace muqar {

// Seeded generator of demographic interaction logs with planted structure:
// per-group seasonal affinities, a calendar-independent trend walk on driver
// attributes, and lagged driver->follower coupling that only the exogenous
// series can expose at forecast time.
struct SynthConfig {
    int num_groups = 3;
    int num_attributes = 16;
    int num_drivers = 2;          // attributes [0, num_drivers) carry the shared trend walks
    int indicator_products_per_driver = 3;  // established products dedicated to each driver
    int num_products = 160;
    double new_product_fraction = 0.8;  // single-appearance products (validation/test pool)
    int users_per_group = 50;
    int weeks = 110;              // two seasonal cycles, so week-of-year rows repeat
    int window_n = 12;            // intended downstream input length
    int horizon_k = 1;            // intended downstream forecast horizon
    Date start_monday{2019, 1, 7};

    double seasonal_amplitude = 0.7;
    double group_offset_scale = 0.8;
    double trend_step = 0.55;     // innovation std of the driver walks
    double trend_rho = 0.85;      // mean reversion of the driver walks
    double follower_trend_step = 0.3;  // per-follower independent trend walk
    double follower_trend_rho = 0.9;
    double coupling = 0.8;        // follower weight on its driver's core signal
    int coupling_lag = 1;         // weeks between driver move and follower response
    double noise = 0.1;           // white noise std added to every affinity cell

    int interactions_per_user_week = 12;
    int new_product_interactions = 100;  // draws during a new product's single week
    int min_attrs = 1;
    int max_attrs = 3;
    int visual_dim = 16;
    double visual_noise = 0.05;
    std::uint64_t seed = 7;

    void validate() const;
};

SynthConfig load_synth_config(const std::string& path);
void save_synth_config(const std::string& path, const SynthConfig& config);

struct SynthDataset {
    InteractionLog log;
    Catalog catalog;
    DatasetManifest manifest;
    Vocabulary vocab;
    // Planted affinity after the logistic squash, averaged over groups;
    // weeks x attributes, fully observed.
    AttributePanel truth;
};

SynthDataset simulate(const SynthConfig& config);

// Writes interactions.csv, catalog.csv, features.bin, manifest.json,
// vocab.txt, truth_panel.csv and truth_mask.csv under dir.
void save_synth_dataset(const std::string& dir, const SynthDataset& dataset);

}  // namespace muqar
