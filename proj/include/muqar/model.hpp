#pragma once

#include <memory>
#include <string>
#include <vector>

#include "muqar/fusion.hpp"
#include "muqar/panel.hpp"
#include "muqar/qar.hpp"
#include "muqar/tensor.hpp"

namespace muqar {

// Feature families: [I] visual, [C] captions, [A] target series, [X]
// exogenous series. Categorical, temporal and demographic embeddings ride
// with the multimodal encoder whenever it is active (I or C).
struct AblationMask {
    bool visual = true;
    bool caption = false;
    bool series = true;
    bool exogenous = false;

    bool fusion_active() const { return visual || caption; }
    bool any() const { return visual || caption || series; }

    // Comma or plus separated subset of {I,C,A,X}, e.g. "I,A,X" or "I+A".
    static AblationMask parse(const std::string& s);
    std::string to_string() const;
};

struct DataDims {
    int visual_dim = 0;
    int num_attributes = 0;
    int vocab_size = 0;
    int num_groups = 0;

    static DataDims from_manifest(const DatasetManifest& m);
};

struct ModelConfig {
    AblationMask mask;
    FusionConfig fusion;
    BackboneConfig backbone;
    int n = 12;
    int k = 1;
    int t_max = 9;
    int joint_units = 256;
    bool classification = false;
    int num_classes = 0;
    std::uint64_t init_seed = 1;

    void validate() const;
};

struct Batch {
    int size = 0;
    FusionBatch fusion;
    std::vector<double> a;       // size x n x t_max
    std::vector<double> x;       // size x n x num_attributes
    std::vector<double> target;  // size x k
    std::vector<int> labels;     // size (classification)
};

Batch assemble_batch(const std::vector<const TrainingExample*>& examples,
                     const ModelConfig& config, const DataDims& dims);

// FusionMLP and the QAR encoder joined by a relu dense layer and a linear
// output head of width k (or class count).
class MuqarModel {
public:
    MuqarModel(const ModelConfig& config, const DataDims& dims);

    const ModelConfig& config() const { return cfg_; }
    const DataDims& dims() const { return dims_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Output layer activations: [batch, k] regression values or class logits.
    Var forward(const Batch& batch, const RunContext& ctx) const;
    // Inference pass; flattened [batch x k] regression outputs (unclamped) or
    // [batch x num_classes] softmax rows.
    std::vector<double> predict(const Batch& batch) const;

    void save_checkpoint(const std::string& dir) const;
    static std::unique_ptr<MuqarModel> load_checkpoint(const std::string& dir);

private:
    ModelConfig cfg_;
    DataDims dims_;
    ParamStore params_;
    std::unique_ptr<FusionMlp> fusion_;
    std::unique_ptr<QarBackbone> qar_;
    Var joint_w_, joint_b_, out_w_, out_b_;
};

// Fresh model with the same hyperparameters under a different feature mask;
// parameter shapes adjust, weights re-initialize from the config seed. The
// backbone kind switches between the single- and dual-tower variants to
// match the exogenous flag.
std::unique_ptr<MuqarModel> ablate(const MuqarModel& model, const AblationMask& mask);

}  // namespace muqar
