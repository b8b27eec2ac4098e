#include "muqar/model.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace muqar {

namespace {
constexpr int kCheckpointVersion = 1;
}

AblationMask AblationMask::parse(const std::string& s) {
    AblationMask mask{false, false, false, false};
    std::string token;
    auto apply = [&](const std::string& t) {
        if (t.empty()) return;
        if (t == "I" || t == "i") {
            mask.visual = true;
        } else if (t == "C" || t == "c") {
            mask.caption = true;
        } else if (t == "A" || t == "a") {
            mask.series = true;
        } else if (t == "X" || t == "x") {
            mask.exogenous = true;
        } else {
            throw ValidationError("unknown feature family '" + t + "' in mask '" + s + "'");
        }
    };
    for (char ch : s) {
        if (ch == ',' || ch == '+' || ch == ' ') {
            apply(token);
            token.clear();
        } else {
            token.push_back(ch);
        }
    }
    apply(token);
    if (!mask.any()) throw ValidationError("mask '" + s + "' enables no feature family");
    return mask;
}

std::string AblationMask::to_string() const {
    std::string out;
    auto append = [&](const char* t) {
        if (!out.empty()) out += "+";
        out += t;
    };
    if (visual) append("I");
    if (caption) append("C");
    if (series) append("A");
    if (exogenous) append("X");
    return out;
}

DataDims DataDims::from_manifest(const DatasetManifest& m) {
    DataDims d;
    d.visual_dim = m.feature_dim;
    if (m.spatial_h > 0 && m.spatial_w > 0) d.visual_dim = m.feature_dim / (m.spatial_h * m.spatial_w);
    d.num_attributes = m.num_attributes;
    d.vocab_size = m.vocab_size;
    d.num_groups = m.num_groups;
    return d;
}

void ModelConfig::validate() const {
    if (!mask.any()) throw ValidationError("model mask enables no feature family");
    if (mask.exogenous && !mask.series) {
        throw ValidationError("exogenous series [X] require the target series [A]");
    }
    if (mask.series) {
        if (mask.exogenous && backbone.kind != BackboneKind::ConvLstmX) {
            throw ValidationError("mask includes [X] but the backbone is " +
                                  backbone_kind_to_string(backbone.kind));
        }
        if (!mask.exogenous && backbone.kind == BackboneKind::ConvLstmX) {
            throw ValidationError("dual-tower backbone needs [X] in the mask");
        }
        backbone.validate();
    }
    if (n <= 0 || k <= 0 || t_max <= 0) throw ValidationError("n, k and t_max must be positive");
    if (joint_units <= 0) throw ValidationError("joint layer width must be positive");
    if (classification && num_classes < 2) {
        throw ValidationError("classification head needs at least 2 classes");
    }
}

Batch assemble_batch(const std::vector<const TrainingExample*>& examples,
                     const ModelConfig& config, const DataDims& dims) {
    Batch batch;
    batch.size = static_cast<int>(examples.size());
    const int b = batch.size;
    const bool fusion = config.mask.fusion_active();
    if (fusion) {
        batch.fusion.batch = b;
        if (config.mask.visual) batch.fusion.visual.reserve(static_cast<std::size_t>(b) * dims.visual_dim);
        batch.fusion.day_idx.reserve(b);
    }
    if (config.mask.series) batch.a.reserve(static_cast<std::size_t>(b) * config.n * config.t_max);
    if (config.mask.exogenous) {
        batch.x.reserve(static_cast<std::size_t>(b) * config.n * dims.num_attributes);
    }

    for (const TrainingExample* ex : examples) {
        if (fusion) {
            if (config.mask.visual) {
                if (static_cast<int>(ex->visual.size()) != dims.visual_dim) {
                    throw ValidationError("example visual width " + std::to_string(ex->visual.size()) +
                                          " does not match dataset dimension " +
                                          std::to_string(dims.visual_dim));
                }
                batch.fusion.visual.insert(batch.fusion.visual.end(), ex->visual.begin(),
                                           ex->visual.end());
            }
            if (config.mask.caption) {
                if (static_cast<int>(ex->caption_tokens.size()) != config.fusion.caption_len) {
                    throw ValidationError("example caption length mismatch");
                }
                batch.fusion.caption.insert(batch.fusion.caption.end(), ex->caption_tokens.begin(),
                                            ex->caption_tokens.end());
            }
            if (static_cast<int>(ex->attr_slots.size()) != config.t_max) {
                throw ValidationError("example slot count does not match t_max");
            }
            batch.fusion.attr_slots.insert(batch.fusion.attr_slots.end(), ex->attr_slots.begin(),
                                           ex->attr_slots.end());
            const TemporalIndices t = temporal_indices(ex->end_week);
            batch.fusion.day_idx.push_back(t.day);
            batch.fusion.week_idx.push_back(t.week);
            batch.fusion.month_idx.push_back(t.month);
            batch.fusion.season_idx.push_back(t.season);
            batch.fusion.group_idx.push_back(ex->group_id);
        }
        if (config.mask.series) {
            if (ex->window.n != config.n || ex->window.t_max != config.t_max) {
                throw ValidationError("example window is " + std::to_string(ex->window.n) + "x" +
                                      std::to_string(ex->window.t_max) + ", model expects " +
                                      std::to_string(config.n) + "x" + std::to_string(config.t_max));
            }
            batch.a.insert(batch.a.end(), ex->window.a.begin(), ex->window.a.end());
            if (config.mask.exogenous) {
                batch.x.insert(batch.x.end(), ex->window.x.begin(), ex->window.x.end());
            }
        }
        if (config.classification) {
            if (ex->target.size() != 1) throw ValidationError("classification expects scalar labels");
            batch.labels.push_back(static_cast<int>(ex->target[0]));
        } else {
            if (static_cast<int>(ex->target.size()) != config.k) {
                throw ValidationError("example target length " + std::to_string(ex->target.size()) +
                                      " does not match k=" + std::to_string(config.k));
            }
            batch.target.insert(batch.target.end(), ex->target.begin(), ex->target.end());
        }
    }
    return batch;
}

MuqarModel::MuqarModel(const ModelConfig& config, const DataDims& dims)
    : cfg_(config), dims_(dims) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);

    int joint_in = 0;
    if (cfg_.mask.fusion_active()) {
        FusionConfig fc = cfg_.fusion;
        fc.use_visual = cfg_.mask.visual;
        fc.use_caption = cfg_.mask.caption;
        // categorical/temporal/group features always accompany the encoder
        fc.use_categorical = true;
        fc.use_temporal = true;
        FusionMlp::Dims fd;
        fd.visual_dim = dims.visual_dim;
        fd.num_attributes = dims.num_attributes;
        fd.vocab_size = dims.vocab_size;
        fd.num_groups = dims.num_groups;
        fd.t_max = cfg_.t_max;
        fusion_ = std::make_unique<FusionMlp>(params_, fc, fd, rng);
        joint_in += fusion_->output_width();
    }
    if (cfg_.mask.series) {
        qar_ = std::make_unique<QarBackbone>(params_, cfg_.backbone, cfg_.t_max,
                                             dims.num_attributes, rng);
        joint_in += qar_->output_width();
    }

    joint_w_ = params_.add("head.joint.w", {joint_in, cfg_.joint_units},
                           glorot_uniform(joint_in, cfg_.joint_units,
                                          static_cast<std::int64_t>(joint_in) * cfg_.joint_units, rng));
    joint_b_ = params_.add("head.joint.b", {cfg_.joint_units},
                           std::vector<double>(cfg_.joint_units, 0.0));
    const int out_w = cfg_.classification ? cfg_.num_classes : cfg_.k;
    out_w_ = params_.add("head.out.w", {cfg_.joint_units, out_w},
                         glorot_uniform(cfg_.joint_units, out_w,
                                        static_cast<std::int64_t>(cfg_.joint_units) * out_w, rng));
    out_b_ = params_.add("head.out.b", {out_w}, std::vector<double>(out_w, 0.0));
}

Var MuqarModel::forward(const Batch& batch, const RunContext& ctx) const {
    const int b = batch.size;
    if (b <= 0) throw ValidationError("empty batch");
    std::vector<Var> parts;
    if (fusion_) {
        if (cfg_.mask.visual && static_cast<int>(batch.fusion.visual.size()) !=
                                    b * dims_.visual_dim) {
            throw ValidationError("batch does not carry the visual features this mask needs");
        }
        if (cfg_.mask.caption &&
            static_cast<int>(batch.fusion.caption.size()) != b * cfg_.fusion.caption_len) {
            throw ValidationError("batch does not carry the captions this mask needs");
        }
        parts.push_back(fusion_->forward(batch.fusion, ctx));
    }
    if (qar_) {
        if (static_cast<int>(batch.a.size()) != b * cfg_.n * cfg_.t_max) {
            throw ValidationError("batch does not carry the target series this mask needs");
        }
        Var a = constant({b, cfg_.n, cfg_.t_max}, batch.a);
        if (cfg_.mask.exogenous) {
            if (static_cast<int>(batch.x.size()) != b * cfg_.n * dims_.num_attributes) {
                throw ValidationError("batch does not carry the exogenous series this mask needs");
            }
            Var x = constant({b, cfg_.n, dims_.num_attributes}, batch.x);
            parts.push_back(qar_->forward(a, &x, ctx));
        } else {
            parts.push_back(qar_->forward(a, nullptr, ctx));
        }
    }
    Var joint = parts.size() == 1 ? parts[0] : concat(parts);
    Var hidden = relu(add(matmul(joint, joint_w_), joint_b_));
    return add(matmul(hidden, out_w_), out_b_);
}

std::vector<double> MuqarModel::predict(const Batch& batch) const {
    RunContext ctx;  // inference
    Var out = forward(batch, ctx);
    if (cfg_.classification) out = softmax(out);
    out->check_finite("predict");
    return out->value;
}

void MuqarModel::save_checkpoint(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    params_.save(dir + "/params.bin", dir + "/params.json");
    nlohmann::json j;
    j["format_version"] = kCheckpointVersion;
    j["mask"] = cfg_.mask.to_string();
    j["n"] = cfg_.n;
    j["k"] = cfg_.k;
    j["t_max"] = cfg_.t_max;
    j["joint_units"] = cfg_.joint_units;
    j["classification"] = cfg_.classification;
    j["num_classes"] = cfg_.num_classes;
    j["init_seed"] = cfg_.init_seed;
    j["fusion"] = {{"d_c", cfg_.fusion.d_c},
                   {"d_t", cfg_.fusion.d_t},
                   {"d_g", cfg_.fusion.d_g},
                   {"d_w", cfg_.fusion.d_w},
                   {"caption_len", cfg_.fusion.caption_len},
                   {"mlp_units", cfg_.fusion.mlp_units},
                   {"dropout", cfg_.fusion.dropout}};
    j["backbone"] = {{"kind", backbone_kind_to_string(cfg_.backbone.kind)},
                     {"cnn_units", cfg_.backbone.cnn_units},
                     {"lstm_units", cfg_.backbone.lstm_units},
                     {"mlp_units", cfg_.backbone.mlp_units},
                     {"dropout", cfg_.backbone.dropout},
                     {"kernel_width", cfg_.backbone.kernel_width}};
    j["data_dims"] = {{"visual_dim", dims_.visual_dim},
                      {"num_attributes", dims_.num_attributes},
                      {"vocab_size", dims_.vocab_size},
                      {"num_groups", dims_.num_groups}};
    std::ofstream out(dir + "/checkpoint.json");
    if (!out) throw ValidationError("cannot write checkpoint manifest in " + dir);
    out << j.dump(2) << "\n";
}

std::unique_ptr<MuqarModel> MuqarModel::load_checkpoint(const std::string& dir) {
    std::ifstream in(dir + "/checkpoint.json");
    if (!in) throw ValidationError("cannot read checkpoint manifest in " + dir);
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.value("format_version", -1) != kCheckpointVersion) {
        throw ValidationError("checkpoint format version mismatch in " + dir + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    ModelConfig cfg;
    cfg.mask = AblationMask::parse(j.at("mask"));
    cfg.n = j.at("n");
    cfg.k = j.at("k");
    cfg.t_max = j.at("t_max");
    cfg.joint_units = j.at("joint_units");
    cfg.classification = j.at("classification");
    cfg.num_classes = j.at("num_classes");
    cfg.init_seed = j.at("init_seed");
    const auto& jf = j.at("fusion");
    cfg.fusion.d_c = jf.at("d_c");
    cfg.fusion.d_t = jf.at("d_t");
    cfg.fusion.d_g = jf.at("d_g");
    cfg.fusion.d_w = jf.at("d_w");
    cfg.fusion.caption_len = jf.at("caption_len");
    cfg.fusion.mlp_units = jf.at("mlp_units").get<std::vector<int>>();
    cfg.fusion.dropout = jf.at("dropout");
    const auto& jb = j.at("backbone");
    cfg.backbone.kind = backbone_kind_from_string(jb.at("kind"));
    cfg.backbone.cnn_units = jb.at("cnn_units").get<std::vector<int>>();
    cfg.backbone.lstm_units = jb.at("lstm_units").get<std::vector<int>>();
    cfg.backbone.mlp_units = jb.at("mlp_units");
    cfg.backbone.dropout = jb.at("dropout");
    cfg.backbone.kernel_width = jb.at("kernel_width");
    const auto& jd = j.at("data_dims");
    DataDims dims;
    dims.visual_dim = jd.at("visual_dim");
    dims.num_attributes = jd.at("num_attributes");
    dims.vocab_size = jd.at("vocab_size");
    dims.num_groups = jd.at("num_groups");

    auto model = std::make_unique<MuqarModel>(cfg, dims);
    model->params_.load(dir + "/params.bin", dir + "/params.json");
    return model;
}

std::unique_ptr<MuqarModel> ablate(const MuqarModel& model, const AblationMask& mask) {
    if (!mask.any()) throw ValidationError("ablation mask enables no feature family");
    ModelConfig cfg = model.config();
    cfg.mask = mask;
    if (mask.series) {
        if (mask.exogenous && cfg.backbone.kind == BackboneKind::ConvLstm) {
            cfg.backbone.kind = BackboneKind::ConvLstmX;
        } else if (!mask.exogenous && cfg.backbone.kind == BackboneKind::ConvLstmX) {
            cfg.backbone.kind = BackboneKind::ConvLstm;
        }
    }
    return std::make_unique<MuqarModel>(cfg, model.dims());
}

}  // namespace muqar
