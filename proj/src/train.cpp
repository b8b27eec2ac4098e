#include "muqar/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

namespace muqar {

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "mse") return LossKind::Mse;
    if (s == "categorical-cross-entropy") return LossKind::CategoricalCrossEntropy;
    throw ValidationError("unknown loss '" + s + "' (expected mse|categorical-cross-entropy)");
}

std::string loss_kind_to_string(LossKind kind) {
    return kind == LossKind::Mse ? "mse" : "categorical-cross-entropy";
}

void TrainConfig::validate() const {
    if (batch_size <= 0) throw ValidationError("batch_size must be positive");
    if (epochs <= 0) throw ValidationError("epochs must be positive");
    if (!(base_lr < max_lr)) throw ValidationError("base_lr must be below max_lr");
    if (base_lr <= 0.0) throw ValidationError("base_lr must be positive");
    if (step_size < 1) throw ValidationError("step_size must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must be in (0,1]");
    if (patience < 1) throw ValidationError("patience must be >= 1");
}

SplitResult split_established_new(const std::vector<TrainingExample>& examples,
                                  std::uint64_t seed) {
    std::map<std::string, std::vector<std::size_t>> by_product;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        by_product[examples[i].product_id].push_back(i);
    }

    SplitResult split;
    std::vector<std::string> singles;
    for (const auto& [product, rows] : by_product) {
        if (rows.size() >= 2) {
            for (std::size_t i : rows) split.train.push_back(examples[i]);
        } else {
            singles.push_back(product);
        }
    }
    if (singles.size() < 2) {
        throw ValidationError("split: the protocol needs at least 2 single-appearance products, found " +
                              std::to_string(singles.size()));
    }
    Rng rng(seed);
    std::shuffle(singles.begin(), singles.end(), rng);
    const std::size_t half = (singles.size() + 1) / 2;
    for (std::size_t i = 0; i < singles.size(); ++i) {
        const std::size_t row = by_product[singles[i]][0];
        (i < half ? split.validation : split.test).push_back(examples[row]);
    }
    return split;
}

double cyclical_lr(std::int64_t iteration, const TrainConfig& config,
                   std::int64_t iters_per_epoch) {
    if (iteration < 0) throw ValidationError("cyclical_lr: negative iteration");
    if (iters_per_epoch < 1) throw ValidationError("cyclical_lr: iters_per_epoch must be >= 1");
    const double half = static_cast<double>(config.step_size) * iters_per_epoch;
    const std::int64_t cycle =
        static_cast<std::int64_t>(std::floor(iteration / (2.0 * half)));
    // x runs 1 -> 0 -> 1 across one cycle; the peak sits at x == 0.
    const double x = std::abs(iteration / half - 2.0 * cycle - 1.0);
    const double amplitude = (config.max_lr - config.base_lr) * std::pow(config.gamma, cycle);
    return config.base_lr + amplitude * std::max(0.0, 1.0 - x);
}

void adam_step(std::vector<double>& value, const std::vector<double>& grad,
               std::vector<double>& m, std::vector<double>& v, std::int64_t t, double lr,
               const std::string& name, double beta1, double beta2, double eps) {
    if (value.size() != grad.size() || m.size() != value.size() || v.size() != value.size()) {
        throw ValidationError("adam_step: buffer sizes differ for " + name);
    }
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i];
        if (!std::isfinite(g)) {
            throw NumericError("adam_step: non-finite gradient in parameter '" + name + "'");
        }
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

AdamOptimizer::AdamOptimizer(const ParamStore& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Var& p : params.all()) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
    }
}

void AdamOptimizer::step(ParamStore& params, double lr) {
    if (params.size() != m_.size()) throw ValidationError("optimizer bound to a different model");
    ++t_;
    const auto& all = params.all();
    for (std::size_t i = 0; i < all.size(); ++i) {
        Var p = all[i];
        p->ensure_grad();
        adam_step(p->value, p->grad, m_[i], v_[i], t_, lr, p->name);
    }
}

namespace {

double validation_metric(const MuqarModel& model, const std::vector<TrainingExample>& examples,
                         const TrainConfig& config) {
    if (examples.empty()) return 0.0;
    const std::vector<double> preds = predict_all(model, examples, config.batch_size);
    if (model.config().classification) {
        const int classes = model.config().num_classes;
        std::int64_t correct = 0;
        for (std::size_t i = 0; i < examples.size(); ++i) {
            const double* row = preds.data() + i * classes;
            const int arg = static_cast<int>(std::max_element(row, row + classes) - row);
            correct += arg == static_cast<int>(examples[i].target[0]);
        }
        return 1.0 - static_cast<double>(correct) / static_cast<double>(examples.size());
    }
    const int k = model.config().k;
    double abs_sum = 0.0;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        for (int j = 0; j < k; ++j) {
            abs_sum += std::abs(preds[i * k + j] - examples[i].target[j]);
            ++count;
        }
    }
    return abs_sum / static_cast<double>(count);
}

}  // namespace

FitResult fit(MuqarModel& model, const SplitResult& splits, const TrainConfig& config) {
    config.validate();
    if (splits.train.empty()) throw ValidationError("fit: empty training split");
    if (model.config().classification && config.loss != LossKind::CategoricalCrossEntropy) {
        throw ValidationError("classification heads train with categorical-cross-entropy");
    }
    if (!model.config().classification && config.loss != LossKind::Mse) {
        throw ValidationError("regression heads train with mse");
    }

    const std::int64_t n_train = static_cast<std::int64_t>(splits.train.size());
    const std::int64_t iters_per_epoch = (n_train + config.batch_size - 1) / config.batch_size;

    Rng shuffle_rng(config.seed);
    Rng dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    AdamOptimizer opt(model.params());

    std::vector<std::size_t> order(splits.train.size());
    std::iota(order.begin(), order.end(), 0);

    FitResult result;
    result.best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_snapshot = model.params().snapshot_values();
    std::vector<std::vector<double>> last_finite = best_snapshot;
    std::int64_t iteration = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        std::int64_t batches = 0;
        double lr = config.base_lr;
        bool finite = true;

        for (std::int64_t start = 0; start < n_train; start += config.batch_size) {
            const std::int64_t end = std::min<std::int64_t>(start + config.batch_size, n_train);
            std::vector<const TrainingExample*> rows;
            rows.reserve(end - start);
            for (std::int64_t i = start; i < end; ++i) rows.push_back(&splits.train[order[i]]);
            Batch batch = assemble_batch(rows, model.config(), model.dims());

            lr = cyclical_lr(iteration, config, iters_per_epoch);
            RunContext ctx{true, &dropout_rng};
            Var out = model.forward(batch, ctx);
            Var loss;
            if (config.loss == LossKind::Mse) {
                loss = mse_loss(out, constant({batch.size, model.config().k}, batch.target));
            } else {
                loss = softmax_cross_entropy(out, batch.labels);
            }
            if (!std::isfinite(loss->value[0])) {
                finite = false;
                break;
            }
            model.params().zero_grads();
            backward(loss);
            opt.step(model.params(), lr);
            loss_sum += loss->value[0];
            ++batches;
            ++iteration;
        }

        if (!finite) {
            model.params().restore_values(last_finite);
            result.diverged = true;
            break;
        }
        last_finite = model.params().snapshot_values();

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.train_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
        stats.val_metric = validation_metric(model, splits.validation, config);
        result.history.push_back(stats);

        const double tracked = splits.validation.empty() ? stats.train_loss : stats.val_metric;
        if (tracked < result.best_val) {
            result.best_val = tracked;
            result.best_epoch = epoch;
            best_snapshot = model.params().snapshot_values();
        } else if (epoch - result.best_epoch >= config.patience) {
            result.early_stopped = true;
            break;
        }
    }

    if (!result.diverged) model.params().restore_values(best_snapshot);
    return result;
}

std::vector<double> predict_all(const MuqarModel& model, const std::vector<TrainingExample>& examples,
                                int batch_size) {
    std::vector<double> out;
    const int width = model.config().classification ? model.config().num_classes : model.config().k;
    out.reserve(examples.size() * width);
    for (std::size_t start = 0; start < examples.size(); start += batch_size) {
        const std::size_t end = std::min(start + static_cast<std::size_t>(batch_size), examples.size());
        std::vector<const TrainingExample*> rows;
        rows.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) rows.push_back(&examples[i]);
        Batch batch = assemble_batch(rows, model.config(), model.dims());
        const std::vector<double> preds = model.predict(batch);
        out.insert(out.end(), preds.begin(), preds.end());
    }
    return out;
}

void save_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write history " + path);
    out << "epoch,lr,train_loss,val_metric\n";
    char buf[128];
    for (const EpochStats& e : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", e.epoch, e.lr, e.train_loss,
                      e.val_metric);
        out << buf;
    }
}

}  // namespace muqar
