#include "muqar/qar.hpp"

#include <stdexcept>

#include "muqar/data.hpp"

namespace muqar {

BackboneKind backbone_kind_from_string(const std::string& s) {
    if (s == "cnn") return BackboneKind::Cnn;
    if (s == "lstm") return BackboneKind::Lstm;
    if (s == "convlstm") return BackboneKind::ConvLstm;
    if (s == "convlstm_x") return BackboneKind::ConvLstmX;
    throw ValidationError("unknown backbone kind '" + s +
                          "' (expected cnn|lstm|convlstm|convlstm_x)");
}

std::string backbone_kind_to_string(BackboneKind kind) {
    switch (kind) {
        case BackboneKind::Cnn: return "cnn";
        case BackboneKind::Lstm: return "lstm";
        case BackboneKind::ConvLstm: return "convlstm";
        case BackboneKind::ConvLstmX: return "convlstm_x";
    }
    return "?";
}

void BackboneConfig::validate() const {
    const bool needs_cnn = kind == BackboneKind::Cnn || kind == BackboneKind::ConvLstm ||
                           kind == BackboneKind::ConvLstmX;
    const bool needs_lstm = kind == BackboneKind::Lstm || kind == BackboneKind::ConvLstm ||
                            kind == BackboneKind::ConvLstmX;
    if (needs_cnn && cnn_units.empty()) {
        throw ValidationError("backbone " + backbone_kind_to_string(kind) + " requires cnn units");
    }
    if (needs_lstm && lstm_units.empty()) {
        throw ValidationError("backbone " + backbone_kind_to_string(kind) + " requires lstm units");
    }
    // unit lists the kind does not consume are ignored
    for (int u : cnn_units) {
        if (u <= 0) throw ValidationError("non-positive cnn width");
    }
    for (int u : lstm_units) {
        if (u <= 0) throw ValidationError("non-positive lstm width");
    }
    if (mlp_units < 0) throw ValidationError("negative mlp width");
    if (kernel_width <= 0 || kernel_width % 2 == 0) {
        throw ValidationError("kernel width must be odd and positive");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("dropout must be in [0,1)");
}

namespace {

std::int64_t tower_parameters(const BackboneConfig& cfg, int in_channels) {
    std::int64_t count = 0;
    int ch = in_channels;
    if (cfg.kind != BackboneKind::Lstm) {
        for (int out : cfg.cnn_units) {
            count += static_cast<std::int64_t>(cfg.kernel_width) * ch * out + out;
            ch = out;
        }
    }
    if (cfg.kind != BackboneKind::Cnn) {
        for (int h : cfg.lstm_units) {
            count += 4LL * (static_cast<std::int64_t>(h) * (ch + h) + h);
            ch = h;
        }
    }
    if (cfg.mlp_units > 0) count += static_cast<std::int64_t>(ch) * cfg.mlp_units + cfg.mlp_units;
    return count;
}

}  // namespace

std::int64_t count_parameters(const BackboneConfig& config, int t_max, int num_attributes) {
    config.validate();
    std::int64_t count = tower_parameters(config, t_max);
    if (config.kind == BackboneKind::ConvLstmX) {
        if (num_attributes <= 0) {
            throw ValidationError("count_parameters: dual-tower kind needs the attribute count");
        }
        count += tower_parameters(config, num_attributes);
    }
    return count;
}

QarBackbone::QarBackbone(ParamStore& store, const BackboneConfig& config, int t_max,
                         int num_attributes, Rng& rng, const std::string& prefix)
    : cfg_(config), t_max_(t_max), num_attributes_(num_attributes) {
    cfg_.validate();
    tower_a_ = build_tower(store, t_max, rng, prefix + ".a");
    if (cfg_.kind == BackboneKind::ConvLstmX) {
        if (num_attributes <= 0) {
            throw ValidationError("dual-tower backbone needs the exogenous channel count");
        }
        tower_x_ = build_tower(store, num_attributes, rng, prefix + ".x");
    }
}

QarBackbone::Tower QarBackbone::build_tower(ParamStore& store, int in_channels, Rng& rng,
                                            const std::string& prefix) {
    Tower t;
    int ch = in_channels;
    if (cfg_.kind != BackboneKind::Lstm) {
        for (std::size_t i = 0; i < cfg_.cnn_units.size(); ++i) {
            const int out = cfg_.cnn_units[i];
            const std::int64_t n = static_cast<std::int64_t>(cfg_.kernel_width) * ch * out;
            t.conv_w.push_back(store.add(prefix + ".conv." + std::to_string(i) + ".w",
                                         {cfg_.kernel_width, ch, out},
                                         glorot_uniform(cfg_.kernel_width * ch, out, n, rng)));
            t.conv_b.push_back(store.add(prefix + ".conv." + std::to_string(i) + ".b", {out},
                                         std::vector<double>(out, 0.0)));
            ch = out;
        }
    }
    if (cfg_.kind != BackboneKind::Cnn) {
        for (std::size_t i = 0; i < cfg_.lstm_units.size(); ++i) {
            const int h = cfg_.lstm_units[i];
            t.lstm_wx.push_back(store.add(prefix + ".lstm." + std::to_string(i) + ".wx",
                                          {ch, 4 * h},
                                          glorot_uniform(ch, h, static_cast<std::int64_t>(ch) * 4 * h, rng)));
            t.lstm_wh.push_back(store.add(prefix + ".lstm." + std::to_string(i) + ".wh",
                                          {h, 4 * h},
                                          recurrent_uniform(h, static_cast<std::int64_t>(h) * 4 * h, rng)));
            // gates ordered (i, f, g, o); forget bias starts at 1
            std::vector<double> bias(4 * h, 0.0);
            std::fill(bias.begin() + h, bias.begin() + 2 * h, 1.0);
            t.lstm_b.push_back(
                store.add(prefix + ".lstm." + std::to_string(i) + ".b", {4 * h}, std::move(bias)));
            ch = h;
        }
    }
    if (cfg_.mlp_units > 0) {
        t.head_w = store.add(prefix + ".head.w", {ch, cfg_.mlp_units},
                             glorot_uniform(ch, cfg_.mlp_units,
                                            static_cast<std::int64_t>(ch) * cfg_.mlp_units, rng));
        t.head_b = store.add(prefix + ".head.b", {cfg_.mlp_units},
                             std::vector<double>(cfg_.mlp_units, 0.0));
        ch = cfg_.mlp_units;
    }
    t.out_width = ch;
    return t;
}

int QarBackbone::output_width() const {
    return cfg_.kind == BackboneKind::ConvLstmX ? tower_a_.out_width + tower_x_.out_width
                                                : tower_a_.out_width;
}

Var QarBackbone::tower_forward(const Tower& tower, const Var& input, const RunContext& ctx) const {
    Var h = input;  // [b, n, ch]
    const bool train = ctx.training && ctx.rng;
    for (std::size_t i = 0; i < tower.conv_w.size(); ++i) {
        h = relu(conv1d(h, tower.conv_w[i], tower.conv_b[i]));
        if (train) h = dropout(h, cfg_.dropout, true, *ctx.rng);
    }
    if (cfg_.kind == BackboneKind::Cnn) {
        h = global_avg_pool(h);  // [b, ch]
    } else {
        // LSTM stack; the representation is the last layer's final hidden state.
        const int batch = h->shape[0];
        const int steps = h->shape[1];
        std::vector<Var> seq(steps);
        for (int t = 0; t < steps; ++t) seq[t] = time_step(h, t);
        Var last_hidden;
        for (std::size_t layer = 0; layer < tower.lstm_wx.size(); ++layer) {
            const int hidden = cfg_.lstm_units[layer];
            Var ht = zeros({batch, hidden});
            Var ct = zeros({batch, hidden});
            for (int t = 0; t < steps; ++t) {
                Var gates = add(add(matmul(seq[t], tower.lstm_wx[layer]),
                                    matmul(ht, tower.lstm_wh[layer])),
                                tower.lstm_b[layer]);
                Var ig = sigmoid(slice(gates, 1, 0, hidden));
                Var fg = sigmoid(slice(gates, 1, hidden, hidden));
                Var gg = tanh_op(slice(gates, 1, 2 * hidden, hidden));
                Var og = sigmoid(slice(gates, 1, 3 * hidden, hidden));
                ct = add(mul(fg, ct), mul(ig, gg));
                ht = mul(og, tanh_op(ct));
                seq[t] = train ? dropout(ht, cfg_.dropout, true, *ctx.rng) : ht;
            }
            last_hidden = seq[steps - 1];
        }
        h = last_hidden;
    }
    if (tower.head_w) {
        h = relu(add(matmul(h, tower.head_w), tower.head_b));
        if (train) h = dropout(h, cfg_.dropout, true, *ctx.rng);
    }
    return h;
}

Var QarBackbone::forward(const Var& a, const Var* x, const RunContext& ctx) const {
    if (a->rank() != 3 || a->shape[2] != t_max_) {
        throw std::runtime_error("qar: A must be [batch,n," + std::to_string(t_max_) + "], got " +
                                 shape_str(a->shape));
    }
    if (cfg_.kind == BackboneKind::ConvLstmX) {
        if (!x) throw std::runtime_error("qar: dual-tower backbone requires the exogenous matrix X");
        if ((*x)->rank() != 3 || (*x)->shape[2] != num_attributes_ ||
            (*x)->shape[1] != a->shape[1] || (*x)->shape[0] != a->shape[0]) {
            throw std::runtime_error("qar: X must be [batch,n," + std::to_string(num_attributes_) +
                                     "], got " + shape_str((*x)->shape));
        }
        Var fa = tower_forward(tower_a_, a, ctx);
        Var fx = tower_forward(tower_x_, *x, ctx);
        return concat({fa, fx});
    }
    if (x) {
        throw std::runtime_error("qar: backbone " + backbone_kind_to_string(cfg_.kind) +
                                 " does not accept an exogenous matrix");
    }
    return tower_forward(tower_a_, a, ctx);
}

}  // namespace muqar
