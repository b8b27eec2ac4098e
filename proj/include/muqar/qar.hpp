#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muqar/tensor.hpp"

namespace muqar {

enum class BackboneKind { Cnn, Lstm, ConvLstm, ConvLstmX };

BackboneKind backbone_kind_from_string(const std::string& s);
std::string backbone_kind_to_string(BackboneKind kind);

struct BackboneConfig {
    BackboneKind kind = BackboneKind::ConvLstm;
    std::vector<int> cnn_units;   // conv output channels per layer
    std::vector<int> lstm_units;  // hidden sizes per layer
    int mlp_units = 0;            // relu dense head width; 0 = no head
    double dropout = 0.1;
    int kernel_width = 3;

    void validate() const;
};

// Exact learnable scalar count for a backbone over a [n x t_max] target
// matrix (and [n x num_attributes] exogenous matrix for the dual-tower kind).
std::int64_t count_parameters(const BackboneConfig& config, int t_max, int num_attributes = 0);

// Quasi-autoregressive encoder over the target matrix A (and, for the
// dual-tower kind, the exogenous matrix X processed by an identically shaped
// second tower whose output is concatenated).
class QarBackbone {
public:
    QarBackbone(ParamStore& store, const BackboneConfig& config, int t_max, int num_attributes,
                Rng& rng, const std::string& prefix = "qar");

    int output_width() const;  // q
    const BackboneConfig& config() const { return cfg_; }

    // a: [batch, n, t_max]; x: [batch, n, num_attributes], required exactly
    // when the kind is the dual-tower one.
    Var forward(const Var& a, const Var* x, const RunContext& ctx) const;

private:
    struct Tower {
        std::vector<Var> conv_w, conv_b;
        std::vector<Var> lstm_wx, lstm_wh, lstm_b;
        Var head_w, head_b;
        int out_width = 0;
    };
    Tower build_tower(ParamStore& store, int in_channels, Rng& rng, const std::string& prefix);
    Var tower_forward(const Tower& tower, const Var& input, const RunContext& ctx) const;

    BackboneConfig cfg_;
    int t_max_ = 0;
    int num_attributes_ = 0;
    Tower tower_a_;
    Tower tower_x_;  // populated only for the dual-tower kind
};

}  // namespace muqar
