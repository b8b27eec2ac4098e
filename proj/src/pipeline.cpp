#include "muqar/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

namespace muqar {

namespace {

nlohmann::json read_json(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw ValidationError(std::string("cannot read ") + what + " " + path);
    return nlohmann::json::parse(in);
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

BuildOutput build_popularity(const InteractionLog& log, const Catalog& catalog,
                             const DatasetManifest& manifest) {
    PopularityIndex index(log, catalog);

    BuildOutput out;
    std::vector<PanelSample> panel_samples;
    std::map<std::string, const ProductRecord*> by_id;
    for (const ProductRecord& p : catalog.products) by_id[p.product_id] = &p;

    // (product, group, week monday) -> running mean of daily popularity
    std::map<std::tuple<std::string, int, std::int64_t>, std::pair<double, std::int64_t>> weekly;
    for (const auto& key : index.observed_keys()) {
        const auto value = index.popularity(key.product_id, key.group_id, key.day);
        if (!value) {
            ++out.undefined_samples;
            continue;
        }
        const auto prod = by_id.find(key.product_id);
        if (prod == by_id.end()) {
            ++out.undefined_samples;
            continue;
        }
        for (int attr : prod->second->attribute_ids) {
            panel_samples.push_back({key.day, attr, *value});
        }
        auto& acc = weekly[{key.product_id, key.group_id,
                            days_from_civil(iso_week_start(key.day))}];
        acc.first += *value;
        acc.second += 1;
    }
    if (panel_samples.empty()) throw ValidationError("build: no defined popularity samples");

    out.raw = weekly_aggregate(panel_samples, manifest.num_attributes);
    out.sparsity_value = sparsity(out.raw);
    out.panel = interpolate(out.raw);
    out.samples.reserve(weekly.size());
    for (const auto& [key, acc] : weekly) {
        out.samples.push_back({std::get<0>(key), std::get<1>(key),
                               civil_from_days(std::get<2>(key)),
                               acc.first / static_cast<double>(acc.second)});
    }
    return out;
}

// ---- configuration --------------------------------------------------------------

namespace {

RunConfig default_run_config() {
    RunConfig c;
    c.model.mask = AblationMask::parse("I,A");
    c.model.n = 12;
    c.model.k = 1;
    c.model.t_max = 9;
    c.model.joint_units = 48;
    c.model.init_seed = 1;
    c.model.fusion.d_c = 8;
    c.model.fusion.d_t = 8;
    c.model.fusion.d_g = 8;
    c.model.fusion.d_w = 8;
    c.model.fusion.caption_len = 16;
    c.model.fusion.mlp_units = {48, 24};
    c.model.fusion.dropout = 0.1;
    c.model.backbone.kind = BackboneKind::ConvLstm;
    c.model.backbone.cnn_units = {24};
    c.model.backbone.lstm_units = {24};
    c.model.backbone.mlp_units = 24;
    c.model.backbone.dropout = 0.1;
    c.train.batch_size = 512;
    c.train.epochs = 24;
    c.train.seed = 1;
    c.train.patience = 8;
    return c;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
    RunConfig c = default_run_config();
    if (path.empty()) return c;
    nlohmann::json j = read_json(path, "run config");
    if (j.contains("mask")) c.model.mask = AblationMask::parse(j.at("mask"));
    c.model.n = j.value("n", c.model.n);
    c.model.k = j.value("k", c.model.k);
    c.model.t_max = j.value("t_max", c.model.t_max);
    c.model.joint_units = j.value("joint_units", c.model.joint_units);
    c.model.classification = j.value("classification", c.model.classification);
    c.model.num_classes = j.value("num_classes", c.model.num_classes);
    c.model.init_seed = j.value("init_seed", c.model.init_seed);
    if (j.contains("fusion")) {
        const auto& f = j.at("fusion");
        c.model.fusion.d_c = f.value("d_c", c.model.fusion.d_c);
        c.model.fusion.d_t = f.value("d_t", c.model.fusion.d_t);
        c.model.fusion.d_g = f.value("d_g", c.model.fusion.d_g);
        c.model.fusion.d_w = f.value("d_w", c.model.fusion.d_w);
        c.model.fusion.caption_len = f.value("caption_len", c.model.fusion.caption_len);
        if (f.contains("mlp_units")) c.model.fusion.mlp_units = f.at("mlp_units").get<std::vector<int>>();
        c.model.fusion.dropout = f.value("dropout", c.model.fusion.dropout);
    }
    if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        if (b.contains("kind")) c.model.backbone.kind = backbone_kind_from_string(b.at("kind"));
        if (b.contains("cnn_units")) c.model.backbone.cnn_units = b.at("cnn_units").get<std::vector<int>>();
        if (b.contains("lstm_units")) {
            c.model.backbone.lstm_units = b.at("lstm_units").get<std::vector<int>>();
        }
        c.model.backbone.mlp_units = b.value("mlp_units", c.model.backbone.mlp_units);
        c.model.backbone.dropout = b.value("dropout", c.model.backbone.dropout);
        c.model.backbone.kernel_width = b.value("kernel_width", c.model.backbone.kernel_width);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.base_lr = t.value("base_lr", c.train.base_lr);
        c.train.max_lr = t.value("max_lr", c.train.max_lr);
        c.train.step_size = t.value("step_size", c.train.step_size);
        c.train.gamma = t.value("gamma", c.train.gamma);
        if (t.contains("loss")) c.train.loss = loss_kind_from_string(t.at("loss"));
        c.train.seed = t.value("seed", c.train.seed);
        c.train.patience = t.value("patience", c.train.patience);
    }
    if (c.model.classification && c.train.loss == LossKind::Mse) {
        c.train.loss = LossKind::CategoricalCrossEntropy;
    }
    return c;
}

void save_run_config(const std::string& path, const RunConfig& c) {
    nlohmann::json j;
    j["mask"] = c.model.mask.to_string();
    j["n"] = c.model.n;
    j["k"] = c.model.k;
    j["t_max"] = c.model.t_max;
    j["joint_units"] = c.model.joint_units;
    j["classification"] = c.model.classification;
    j["num_classes"] = c.model.num_classes;
    j["init_seed"] = c.model.init_seed;
    j["fusion"] = {{"d_c", c.model.fusion.d_c},       {"d_t", c.model.fusion.d_t},
                   {"d_g", c.model.fusion.d_g},       {"d_w", c.model.fusion.d_w},
                   {"caption_len", c.model.fusion.caption_len},
                   {"mlp_units", c.model.fusion.mlp_units},
                   {"dropout", c.model.fusion.dropout}};
    j["backbone"] = {{"kind", backbone_kind_to_string(c.model.backbone.kind)},
                     {"cnn_units", c.model.backbone.cnn_units},
                     {"lstm_units", c.model.backbone.lstm_units},
                     {"mlp_units", c.model.backbone.mlp_units},
                     {"dropout", c.model.backbone.dropout},
                     {"kernel_width", c.model.backbone.kernel_width}};
    j["train"] = {{"batch_size", c.train.batch_size},
                  {"epochs", c.train.epochs},
                  {"base_lr", c.train.base_lr},
                  {"max_lr", c.train.max_lr},
                  {"step_size", c.train.step_size},
                  {"gamma", c.train.gamma},
                  {"loss", loss_kind_to_string(c.train.loss)},
                  {"seed", c.train.seed},
                  {"patience", c.train.patience}};
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write run config " + path);
    out << j.dump(2) << "\n";
}

// ---- pipeline steps ------------------------------------------------------------------

LoadedDataset load_dataset(const std::string& data_dir) {
    LoadedDataset d;
    d.manifest = load_manifest(data_dir + "/manifest.json");
    d.catalog = load_catalog_csv(data_dir + "/catalog.csv", data_dir + "/features.bin", d.manifest);
    d.vocab = Vocabulary::load(data_dir + "/vocab.txt");
    d.log = load_interactions_csv(data_dir + "/interactions.csv", d.manifest);
    return d;
}

PipelineData load_built(const std::string& data_dir, const std::string& build_dir) {
    PipelineData p;
    p.manifest = load_manifest(data_dir + "/manifest.json");
    p.catalog = load_catalog_csv(data_dir + "/catalog.csv", data_dir + "/features.bin", p.manifest);
    p.vocab = Vocabulary::load(data_dir + "/vocab.txt");
    p.panel = load_panel_csv(build_dir + "/panel.csv", build_dir + "/panel_mask.csv");
    p.samples = load_popularity_samples_csv(build_dir + "/popularity.csv");
    return p;
}

std::vector<TrainingExample> build_examples(const PipelineData& data,
                                            const ExampleBuildConfig& config, int threads) {
    const std::string stop_path = std::filesystem::exists("data/stopwords.txt")
                                      ? "data/stopwords.txt"
                                      : std::string();
    const std::set<std::string> stops =
        stop_path.empty() ? default_stop_words() : load_stop_words(stop_path);
    ExampleBuildResult result =
        make_examples(data.catalog, data.samples, data.panel, data.manifest, data.vocab, stops,
                      config, threads);
    return std::move(result.examples);
}

ExampleBuildConfig example_config_for(const ModelConfig& model) {
    ExampleBuildConfig c;
    c.n = model.n;
    c.k = model.k;
    c.t_max = model.t_max;
    c.caption_len = model.fusion.caption_len;
    return c;
}

void run_simulate(const SynthConfig& config, const std::string& out_dir) {
    SynthDataset ds = simulate(config);
    save_synth_dataset(out_dir, ds);
    save_synth_config(out_dir + "/synth_config.json", config);
}

void run_build(const std::string& data_dir, const std::string& out_dir) {
    LoadedDataset d = load_dataset(data_dir);
    BuildOutput built = build_popularity(d.log, d.catalog, d.manifest);
    std::filesystem::create_directories(out_dir);
    save_panel_csv(out_dir + "/panel.csv", out_dir + "/panel_mask.csv", built.panel);
    save_panel_csv(out_dir + "/panel_raw.csv", out_dir + "/panel_raw_mask.csv", built.raw);
    save_popularity_samples_csv(out_dir + "/popularity.csv", built.samples);
    nlohmann::json j{{"sparsity", built.sparsity_value},
                     {"weeks", built.panel.weeks.size()},
                     {"attributes", built.panel.num_attributes},
                     {"popularity_rows", built.samples.size()},
                     {"undefined_samples", built.undefined_samples}};
    std::ofstream out(out_dir + "/build.json");
    if (!out) throw ValidationError("cannot write build manifest in " + out_dir);
    out << j.dump(2) << "\n";
}

FitResult run_train(const std::string& data_dir, const std::string& build_dir,
                    const RunConfig& config, const std::string& out_dir, int threads) {
    PipelineData data = load_built(data_dir, build_dir);
    std::vector<TrainingExample> examples =
        build_examples(data, example_config_for(config.model), threads);
    SplitResult splits = split_established_new(examples, config.train.seed);

    MuqarModel model(config.model, DataDims::from_manifest(data.manifest));
    FitResult result = fit(model, splits, config.train);

    std::filesystem::create_directories(out_dir);
    model.save_checkpoint(out_dir);
    save_history_csv(out_dir + "/history.csv", result.history);
    save_run_config(out_dir + "/run.json", config);
    if (result.diverged) {
        throw NumericError("training diverged; last finite checkpoint written to " + out_dir);
    }
    return result;
}

namespace {

struct EvalData {
    std::unique_ptr<MuqarModel> model;
    RunConfig config;
    SplitResult splits;
};

EvalData prepare_eval(const std::string& checkpoint_dir, const std::string& data_dir,
                      const std::string& build_dir, int threads) {
    EvalData e;
    e.model = MuqarModel::load_checkpoint(checkpoint_dir);
    e.config = load_run_config(checkpoint_dir + "/run.json");
    PipelineData data = load_built(data_dir, build_dir);
    std::vector<TrainingExample> examples =
        build_examples(data, example_config_for(e.model->config()), threads);
    e.splits = split_established_new(examples, e.config.train.seed);
    return e;
}

const std::vector<TrainingExample>& pick_split(const SplitResult& splits,
                                               const std::string& split) {
    if (split == "train") return splits.train;
    if (split == "validation") return splits.validation;
    if (split == "test") return splits.test;
    throw ValidationError("unknown split '" + split + "' (expected train|validation|test)");
}

}  // namespace

MetricReport run_evaluate(const std::string& checkpoint_dir, const std::string& data_dir,
                          const std::string& build_dir, const std::string& split,
                          const std::string& out_prefix, int threads) {
    EvalData e = prepare_eval(checkpoint_dir, data_dir, build_dir, threads);
    const auto& examples = pick_split(e.splits, split);
    if (examples.empty()) throw ValidationError("split '" + split + "' is empty");
    const std::vector<double> preds = predict_all(*e.model, examples);

    MetricReport report;
    if (e.model->config().classification) {
        std::vector<int> labels;
        labels.reserve(examples.size());
        for (const auto& ex : examples) labels.push_back(static_cast<int>(ex.target[0]));
        report = classification_metrics(labels, preds, e.model->config().num_classes);
    } else {
        const int k = e.model->config().k;
        std::vector<double> y, y_hat;
        y.reserve(examples.size() * k);
        y_hat.reserve(examples.size() * k);
        for (std::size_t i = 0; i < examples.size(); ++i) {
            for (int j = 0; j < k; ++j) {
                y.push_back(examples[i].target[j]);
                // report-time clamp to the popularity scale
                y_hat.push_back(std::clamp(preds[i * k + j], 0.0, 1.0));
            }
        }
        report = regression_metrics(y, y_hat);
    }
    report.model_tag = backbone_kind_to_string(e.model->config().backbone.kind);
    if (!e.model->config().mask.series) report.model_tag = "fusion";
    report.ablation_tag = e.model->config().mask.to_string();
    report.dataset_tag = split;
    if (!out_prefix.empty()) {
        save_report_json(out_prefix + ".json", report);
        std::vector<std::string> columns;
        if (e.model->config().classification) {
            columns = {"Accuracy", "AUC"};
        } else {
            columns = {"MAE", "PCC", "BA", "WAPE"};
        }
        save_reports_csv(out_prefix + ".csv", {report}, columns);
    }
    return report;
}

void run_predict(const std::string& checkpoint_dir, const std::string& data_dir,
                 const std::string& build_dir, const std::string& split,
                 const std::string& out_csv, int threads) {
    EvalData e = prepare_eval(checkpoint_dir, data_dir, build_dir, threads);
    const auto& examples = pick_split(e.splits, split);
    if (examples.empty()) throw ValidationError("split '" + split + "' is empty");
    const std::vector<double> preds = predict_all(*e.model, examples);
    const int width = e.model->config().classification ? e.model->config().num_classes
                                                       : e.model->config().k;
    std::ofstream out(out_csv);
    if (!out) throw ValidationError("cannot write forecasts " + out_csv);
    out << "product_id,group_id,target_week";
    for (int j = 0; j < width; ++j) out << ",f" << (j + 1);
    out << "\n";
    for (std::size_t i = 0; i < examples.size(); ++i) {
        out << examples[i].product_id << ',' << examples[i].group_id << ','
            << format_date(examples[i].end_week);
        for (int j = 0; j < width; ++j) {
            const double v = preds[i * width + j];
            out << ',' << fmt_double(e.model->config().classification ? v : std::clamp(v, 0.0, 1.0));
        }
        out << "\n";
    }
}

TopsisResult run_select(const std::string& matrix_csv, const std::string& out_csv) {
    DecisionMatrix matrix = load_decision_matrix_csv(matrix_csv);
    TopsisResult result = topsis(matrix);
    save_topsis_csv(out_csv, matrix, result);
    return result;
}

// ---- grid search ---------------------------------------------------------------------

namespace {

std::vector<int> prefix_units(const std::vector<int>& units, int layers, const char* what) {
    if (layers < 1 || layers > static_cast<int>(units.size())) {
        throw ValidationError(std::string("grid: ") + what + " layer count " +
                              std::to_string(layers) + " exceeds the unit list");
    }
    return std::vector<int>(units.begin(), units.begin() + layers);
}

struct GridCandidate {
    std::string name;
    BackboneConfig backbone;
};

std::vector<GridCandidate> expand_grid(const nlohmann::json& spec) {
    std::vector<GridCandidate> out;
    if (!spec.contains("blocks")) throw ValidationError("grid spec needs a 'blocks' array");
    for (const auto& block : spec.at("blocks")) {
        const BackboneKind kind = backbone_kind_from_string(block.at("kind"));
        BackboneConfig base;
        base.kind = kind;
        base.mlp_units = block.value("mlp_units", 0);
        base.dropout = block.value("dropout", 0.1);
        base.kernel_width = block.value("kernel_width", 3);
        const auto cnn_units = block.value("cnn_units", std::vector<int>{});
        const auto lstm_units = block.value("lstm_units", std::vector<int>{});
        switch (kind) {
            case BackboneKind::Cnn: {
                for (int layers : block.at("layers").get<std::vector<int>>()) {
                    GridCandidate c{"cnn_" + std::to_string(layers), base};
                    c.backbone.cnn_units = prefix_units(cnn_units, layers, "cnn");
                    out.push_back(std::move(c));
                }
                break;
            }
            case BackboneKind::Lstm: {
                for (int layers : block.at("layers").get<std::vector<int>>()) {
                    GridCandidate c{"lstm_" + std::to_string(layers), base};
                    c.backbone.lstm_units = prefix_units(lstm_units, layers, "lstm");
                    out.push_back(std::move(c));
                }
                break;
            }
            case BackboneKind::ConvLstm:
            case BackboneKind::ConvLstmX: {
                for (int cl : block.at("cnn_layers").get<std::vector<int>>()) {
                    for (int ll : block.at("lstm_layers").get<std::vector<int>>()) {
                        GridCandidate c{backbone_kind_to_string(kind) + "_c" + std::to_string(cl) +
                                            "_l" + std::to_string(ll),
                                        base};
                        c.backbone.cnn_units = prefix_units(cnn_units, cl, "cnn");
                        c.backbone.lstm_units = prefix_units(lstm_units, ll, "lstm");
                        out.push_back(std::move(c));
                    }
                }
                break;
            }
        }
    }
    if (out.empty()) throw ValidationError("grid spec expands to no candidates");
    return out;
}

}  // namespace

void run_grid(const std::string& grid_path, const std::string& data_dir,
              const std::string& build_dir, const RunConfig& base, const std::string& out_dir,
              int threads) {
    const std::vector<GridCandidate> candidates = expand_grid(read_json(grid_path, "grid spec"));
    std::filesystem::create_directories(out_dir);

    PipelineData data = load_built(data_dir, build_dir);
    std::vector<TrainingExample> examples =
        build_examples(data, example_config_for(base.model), threads);
    SplitResult splits = split_established_new(examples, base.train.seed);
    const DataDims dims = DataDims::from_manifest(data.manifest);

    DecisionMatrix matrix;
    const bool classification = base.model.classification;
    if (classification) {
        matrix.criteria = {"Accuracy", "AUC"};
        matrix.benefit = {true, true};
    } else {
        matrix.criteria = {"MAE", "PCC", "BA"};
        matrix.benefit = {false, true, true};
    }

    std::ofstream log(out_dir + "/grid_log.csv");
    if (!log) throw ValidationError("cannot write grid log in " + out_dir);
    log << "candidate,status,detail\n";

    std::vector<MetricReport> reports;
    for (const GridCandidate& candidate : candidates) {
        RunConfig rc = base;
        rc.model.backbone = candidate.backbone;
        rc.model.mask.exogenous = candidate.backbone.kind == BackboneKind::ConvLstmX;
        try {
            MuqarModel model(rc.model, dims);
            fit(model, splits, rc.train);
            const std::vector<double> preds = predict_all(model, splits.validation);
            MetricReport report;
            if (classification) {
                std::vector<int> labels;
                for (const auto& ex : splits.validation) labels.push_back(static_cast<int>(ex.target[0]));
                report = classification_metrics(labels, preds, rc.model.num_classes);
            } else {
                const int k = rc.model.k;
                std::vector<double> y, y_hat;
                for (std::size_t i = 0; i < splits.validation.size(); ++i) {
                    for (int j = 0; j < k; ++j) {
                        y.push_back(splits.validation[i].target[j]);
                        y_hat.push_back(std::clamp(preds[i * k + j], 0.0, 1.0));
                    }
                }
                report = regression_metrics(y, y_hat);
            }
            report.model_tag = candidate.name;
            report.ablation_tag = rc.model.mask.to_string();
            report.dataset_tag = "validation";
            bool complete = true;
            for (const std::string& c : matrix.criteria) complete = complete && report.has(c);
            if (!complete) {
                log << candidate.name << ",skipped,undefined metric on validation\n";
                continue;
            }
            reports.push_back(report);
            matrix.row_names.push_back(candidate.name);
            for (const std::string& c : matrix.criteria) matrix.values.push_back(report.get(c));
            log << candidate.name << ",ok,\n";
        } catch (const std::exception& err) {
            log << candidate.name << ",failed," << err.what() << "\n";
        }
    }
    if (matrix.row_names.empty()) {
        throw NumericError("grid: every candidate failed; see " + out_dir + "/grid_log.csv");
    }
    save_reports_csv(out_dir + "/grid_reports.csv", reports, matrix.criteria);
    save_decision_matrix_csv(out_dir + "/decision_matrix.csv", matrix);
}

int worker_threads_from_env() {
    const char* env = std::getenv("MUQAR_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n >= 1 ? n : 1;
}

}  // namespace muqar
