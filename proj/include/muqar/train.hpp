#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muqar/model.hpp"
#include "muqar/panel.hpp"

namespace muqar {

// Numeric failure (divergence, NaN gradients); the CLI maps it to exit 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class LossKind { Mse, CategoricalCrossEntropy };
LossKind loss_kind_from_string(const std::string& s);
std::string loss_kind_to_string(LossKind kind);

struct TrainConfig {
    int batch_size = 1024;
    int epochs = 40;
    double base_lr = 1e-4;
    double max_lr = 1e-2;
    int step_size = 2;   // epochs per half-cycle
    double gamma = 0.1;  // per-cycle amplitude decay
    LossKind loss = LossKind::Mse;
    std::uint64_t seed = 1;
    int patience = 10;   // epochs without validation improvement before stopping

    void validate() const;
};

// Established products (multiple records) train; single-record products are
// the new-product pool, shuffled by seed and halved into validation and test.
struct SplitResult {
    std::vector<TrainingExample> train;
    std::vector<TrainingExample> validation;
    std::vector<TrainingExample> test;
};
SplitResult split_established_new(const std::vector<TrainingExample>& examples,
                                  std::uint64_t seed);

// Triangular wave from base_lr up to max_lr with half-period
// step_size * iters_per_epoch; the amplitude decays by gamma each full cycle.
double cyclical_lr(std::int64_t iteration, const TrainConfig& config,
                   std::int64_t iters_per_epoch);

// One Adam update on a flat parameter. t is the 1-based step count (already
// incremented); m/v are carried first/second moment buffers. A non-finite
// gradient raises NumericError mentioning `name`.
void adam_step(std::vector<double>& value, const std::vector<double>& grad,
               std::vector<double>& m, std::vector<double>& v, std::int64_t t, double lr,
               const std::string& name, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

class AdamOptimizer {
public:
    explicit AdamOptimizer(const ParamStore& params);
    void step(ParamStore& params, double lr);
    std::int64_t steps_taken() const { return t_; }

private:
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;          // learning rate at the epoch's last iteration
    double train_loss = 0.0;  // mean batch loss
    double val_metric = 0.0;  // MAE for regression, 1 - accuracy for classification
};

struct FitResult {
    std::vector<EpochStats> history;
    int best_epoch = -1;
    double best_val = 0.0;
    bool diverged = false;
    bool early_stopped = false;
};

// Epoch loop with seeded shuffling, cyclical learning rate, per-epoch
// validation and best-checkpoint retention; the model ends holding the best
// validation parameters (or the last finite ones after divergence).
FitResult fit(MuqarModel& model, const SplitResult& splits, const TrainConfig& config);

// Inference over a full example set in batches; returns flattened
// predictions ([examples x k] or [examples x classes]).
std::vector<double> predict_all(const MuqarModel& model, const std::vector<TrainingExample>& examples,
                                int batch_size = 1024);

void save_history_csv(const std::string& path, const std::vector<EpochStats>& history);

}  // namespace muqar
