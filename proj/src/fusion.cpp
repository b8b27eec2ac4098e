#include "muqar/fusion.hpp"

#include <algorithm>
#include <cmath>

namespace muqar {

std::vector<double> encode_visual(const std::vector<double>& raw, int spatial_h, int spatial_w) {
    std::vector<double> pooled;
    if (spatial_h > 0 && spatial_w > 0) {
        const std::size_t cells = static_cast<std::size_t>(spatial_h) * spatial_w;
        if (raw.empty() || raw.size() % cells != 0) {
            throw ValidationError("encode_visual: feature length " + std::to_string(raw.size()) +
                                  " is not divisible by " + std::to_string(cells) + " cells");
        }
        const std::size_t channels = raw.size() / cells;
        pooled.assign(channels, 0.0);
        for (std::size_t cell = 0; cell < cells; ++cell) {
            for (std::size_t c = 0; c < channels; ++c) pooled[c] += raw[cell * channels + c];
        }
        for (double& v : pooled) v /= static_cast<double>(cells);
    } else {
        if (raw.empty()) throw ValidationError("encode_visual: empty feature vector");
        pooled = raw;
    }
    double norm_sq = 0.0;
    for (double v : pooled) norm_sq += v * v;
    if (norm_sq > 0.0) {
        const double inv = 1.0 / std::sqrt(norm_sq);
        for (double& v : pooled) v *= inv;
    }
    return pooled;
}

TemporalIndices temporal_indices(const Date& d) {
    TemporalIndices t;
    t.day = day_of_year(d) - 1;
    t.week = std::min(iso_week_of(d).week, 52) - 1;
    t.month = d.month - 1;
    t.season = season_of(d);
    return t;
}

FusionMlp::FusionMlp(ParamStore& store, const FusionConfig& config, const Dims& dims, Rng& rng,
                     const std::string& prefix)
    : cfg_(config), dims_(dims) {
    auto table = [&](const std::string& name, int rows, int cols, bool pad_row) {
        std::vector<double> init = glorot_uniform(rows, cols, static_cast<std::int64_t>(rows) * cols, rng);
        if (pad_row) std::fill(init.begin(), init.begin() + cols, 0.0);
        return store.add(prefix + "." + name, {rows, cols}, std::move(init));
    };
    if (cfg_.use_categorical) e_c_ = table("E_c", dims.num_attributes + 1, cfg_.d_c, true);
    if (cfg_.use_caption) e_word_ = table("E_word", dims.vocab_size + 1, cfg_.d_w, true);
    if (cfg_.use_temporal) {
        e_d_ = table("E_d", 366, cfg_.d_t, false);
        e_w_ = table("E_w", 52, cfg_.d_t, false);
        e_m_ = table("E_m", 12, cfg_.d_t, false);
        e_s_ = table("E_s", 4, cfg_.d_t, false);
    }
    if (group_enabled()) e_g_ = table("E_g", dims.num_groups, cfg_.d_g, false);

    if (cfg_.mlp_units.empty()) throw ValidationError("fusion: mlp_units must be non-empty");
    int in = input_width();
    if (in == 0) throw ValidationError("fusion: every feature family is disabled");
    for (std::size_t i = 0; i < cfg_.mlp_units.size(); ++i) {
        const int out = cfg_.mlp_units[i];
        mlp_w_.push_back(store.add(prefix + ".mlp." + std::to_string(i) + ".w", {in, out},
                                   glorot_uniform(in, out, static_cast<std::int64_t>(in) * out, rng)));
        mlp_b_.push_back(store.add(prefix + ".mlp." + std::to_string(i) + ".b", {out},
                                   std::vector<double>(out, 0.0)));
        in = out;
    }
}

int FusionMlp::input_width() const {
    int w = 0;
    if (cfg_.use_visual) w += dims_.visual_dim;
    if (cfg_.use_caption) w += cfg_.caption_len * cfg_.d_w;
    if (cfg_.use_categorical) w += dims_.t_max * cfg_.d_c;
    if (cfg_.use_temporal) w += 4 * cfg_.d_t;
    if (group_enabled()) w += cfg_.d_g;
    return w;
}

int FusionMlp::output_width() const { return cfg_.mlp_units.back(); }

Var FusionMlp::visual_part(const FusionBatch& batch) const {
    return constant({batch.batch, dims_.visual_dim}, batch.visual);
}

Var FusionMlp::caption_part(const FusionBatch& batch) const {
    return embedding(e_word_, batch.caption, batch.batch, cfg_.caption_len, 1);
}

Var FusionMlp::categorical_part(const FusionBatch& batch) const {
    return embedding(e_c_, batch.attr_slots, batch.batch, dims_.t_max, 1);
}

Var FusionMlp::temporal_part(const FusionBatch& batch) const {
    return concat({embedding(e_d_, batch.day_idx, batch.batch, 1),
                   embedding(e_w_, batch.week_idx, batch.batch, 1),
                   embedding(e_m_, batch.month_idx, batch.batch, 1),
                   embedding(e_s_, batch.season_idx, batch.batch, 1)});
}

Var FusionMlp::group_part(const FusionBatch& batch) const {
    return embedding(e_g_, batch.group_idx, batch.batch, 1);
}

Var FusionMlp::forward(const FusionBatch& batch, const RunContext& ctx) const {
    std::vector<Var> parts;
    if (cfg_.use_visual) parts.push_back(visual_part(batch));
    if (cfg_.use_caption) parts.push_back(caption_part(batch));
    if (cfg_.use_categorical) parts.push_back(categorical_part(batch));
    if (cfg_.use_temporal) parts.push_back(temporal_part(batch));
    if (group_enabled()) parts.push_back(group_part(batch));
    Var h = parts.size() == 1 ? parts[0] : concat(parts);
    for (std::size_t i = 0; i < mlp_w_.size(); ++i) {
        h = relu(add(matmul(h, mlp_w_[i]), mlp_b_[i]));
        if (ctx.training && ctx.rng) h = dropout(h, cfg_.dropout, true, *ctx.rng);
    }
    return h;
}

}  // namespace muqar
