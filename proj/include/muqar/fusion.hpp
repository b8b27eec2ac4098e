#pragma once

#include <string>
#include <vector>

#include "muqar/data.hpp"
#include "muqar/tensor.hpp"

namespace muqar {

// Pool a spatial feature map (h x w x channels, row-major) to per-channel
// means, then L2-normalize. Plain vectors (h == w == 0) are normalized only;
// an all-zero vector passes through unchanged.
std::vector<double> encode_visual(const std::vector<double>& raw, int spatial_h, int spatial_w);

// Temporal table rows for one date: day-of-year (366 rows, leap provision),
// ISO week folded 53 -> 52 (52 rows), month (12), meteorological season (4).
struct TemporalIndices {
    int day = 0;
    int week = 0;
    int month = 0;
    int season = 0;
};
TemporalIndices temporal_indices(const Date& d);

struct FusionConfig {
    bool use_visual = true;
    bool use_caption = true;
    bool use_categorical = true;
    bool use_temporal = true;
    bool use_group = true;  // effective only when the dataset declares groups
    int d_c = 32;
    int d_t = 32;
    int d_g = 32;
    int d_w = 32;
    int caption_len = 16;
    std::vector<int> mlp_units = {2048, 1024, 512, 256};
    double dropout = 0.1;
};

// Per-batch fusion inputs; index buffers are row-major [batch x len].
struct FusionBatch {
    int batch = 0;
    std::vector<double> visual;  // batch x visual_dim, already encode_visual'd
    std::vector<int> caption;    // batch x caption_len
    std::vector<int> attr_slots; // batch x t_max; value = attribute id + 1, PAD = 0
    std::vector<int> day_idx, week_idx, month_idx, season_idx;  // batch each
    std::vector<int> group_idx;  // batch
};

// Multimodal encoder: embeds captions, categorical slots, temporal fields and
// the demographic group, concatenates them with the visual vector and runs
// the relu MLP. Disabled parts contribute zero-width slices.
class FusionMlp {
public:
    struct Dims {
        int visual_dim = 0;
        int num_attributes = 0;  // C; the categorical table has C+1 rows (row 0 PAD)
        int vocab_size = 0;      // W; the word table has W+1 rows (row 0 PAD)
        int num_groups = 0;
        int t_max = 0;
    };

    FusionMlp(ParamStore& store, const FusionConfig& config, const Dims& dims, Rng& rng,
              const std::string& prefix = "fusion");

    int input_width() const;
    int output_width() const;
    const FusionConfig& config() const { return cfg_; }
    bool group_enabled() const { return cfg_.use_group && dims_.num_groups > 0; }

    Var forward(const FusionBatch& batch, const RunContext& ctx) const;

    // Individual feature slices, exposed for introspection and tests.
    Var visual_part(const FusionBatch& batch) const;
    Var caption_part(const FusionBatch& batch) const;
    Var categorical_part(const FusionBatch& batch) const;
    Var temporal_part(const FusionBatch& batch) const;
    Var group_part(const FusionBatch& batch) const;

private:
    FusionConfig cfg_;
    Dims dims_;
    Var e_c_, e_word_, e_d_, e_w_, e_m_, e_s_, e_g_;
    std::vector<Var> mlp_w_, mlp_b_;
};

}  // namespace muqar
