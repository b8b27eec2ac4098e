#pragma once

#include <string>
#include <vector>

#include "muqar/metrics.hpp"
#include "muqar/model.hpp"
#include "muqar/panel.hpp"
#include "muqar/synth.hpp"
#include "muqar/train.hpp"

namespace muqar {

// ---- dataset -> panel + weekly popularity ------------------------------------

struct BuildOutput {
    AttributePanel raw;       // pre-interpolation, mask intact
    AttributePanel panel;     // interpolated
    std::vector<PopularitySample> samples;  // weekly popularity per (product, group)
    double sparsity_value = 0.0;
    std::int64_t undefined_samples = 0;
};

BuildOutput build_popularity(const InteractionLog& log, const Catalog& catalog,
                             const DatasetManifest& manifest);

// ---- configuration files ---------------------------------------------------------

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

// Missing path ("") yields defaults sized for the bundled synthetic data.
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& config);

// ---- on-disk pipeline steps ---------------------------------------------------

struct LoadedDataset {
    DatasetManifest manifest;
    Catalog catalog;
    Vocabulary vocab;
    InteractionLog log;
};
LoadedDataset load_dataset(const std::string& data_dir);

struct PipelineData {
    DatasetManifest manifest;
    Catalog catalog;
    Vocabulary vocab;
    AttributePanel panel;  // interpolated
    std::vector<PopularitySample> samples;
};
PipelineData load_built(const std::string& data_dir, const std::string& build_dir);

std::vector<TrainingExample> build_examples(const PipelineData& data,
                                            const ExampleBuildConfig& config, int threads);

ExampleBuildConfig example_config_for(const ModelConfig& model);

void run_simulate(const SynthConfig& config, const std::string& out_dir);
void run_build(const std::string& data_dir, const std::string& out_dir);
// Trains and writes checkpoint + history.csv + run.json into out_dir.
FitResult run_train(const std::string& data_dir, const std::string& build_dir,
                    const RunConfig& config, const std::string& out_dir, int threads);
// split: one of train|validation|test.
MetricReport run_evaluate(const std::string& checkpoint_dir, const std::string& data_dir,
                          const std::string& build_dir, const std::string& split,
                          const std::string& out_prefix, int threads);
void run_predict(const std::string& checkpoint_dir, const std::string& data_dir,
                 const std::string& build_dir, const std::string& split,
                 const std::string& out_csv, int threads);
TopsisResult run_select(const std::string& matrix_csv, const std::string& out_csv);
void run_grid(const std::string& grid_path, const std::string& data_dir,
              const std::string& build_dir, const RunConfig& base, const std::string& out_dir,
              int threads);

// Reads MUQAR_THREADS (>= 1); default 1.
int worker_threads_from_env();

}  // namespace muqar
