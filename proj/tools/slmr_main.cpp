// slmr command-line tool: synth / train / score / eval / sweep.
//
// Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 numeric failure, 1 anything else.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "slmr/slmr.hpp"

namespace fs = std::filesystem;
using namespace slmr;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

struct CommonArgs {
    std::string config_path;
    Overrides overrides;
};

void add_override_option(CLI::App* cmd, CommonArgs& args, const std::string& flag, const std::string& key,
                         const std::string& desc) {
    cmd->add_option_function<std::string>(
        flag, [&args, key](const std::string& v) { args.overrides.emplace_back(key, v); }, desc);
}

void add_override_toggle(CLI::App* cmd, CommonArgs& args, const std::string& flag, const std::string& key, bool value,
                         const std::string& desc) {
    cmd->add_flag_callback(
        flag, [&args, key, value] { args.overrides.emplace_back(key, value ? "true" : "false"); }, desc);
}

// flags shared by train/eval/score/sweep; every flag maps onto a config key,
// so CLI > config file > defaults falls out of the override ordering
void add_common_options(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_path, "config file (INI-style sections, see README)");
    add_override_option(cmd, args, "--train", "data.train", "training CSV path");
    add_override_option(cmd, args, "--test", "data.test", "test CSV path");
    add_override_option(cmd, args, "--label-column", "data.label_column", "name of the label column");
    add_override_option(cmd, args, "--label-map", "data.label_map", "label mapping, e.g. Normal=0,Attack=1");
    add_override_option(cmd, args, "--name", "data.name", "dataset name recorded in artifacts");
    add_override_toggle(cmd, args, "--swat-trim", "data.swat_trim", true, "drop the first 4h (14400 rows) of train data");
    add_override_option(cmd, args, "--out-dir", "run.out_dir", "artifact output directory");
    add_override_option(cmd, args, "--window", "model.window", "sliding window length");
    add_override_option(cmd, args, "--channels", "model.channels", "multi-scale cascade width");
    add_override_option(cmd, args, "--groups", "model.groups", "channel groups in the cascade");
    add_override_option(cmd, args, "--hidden", "model.hidden", "GRU hidden size");
    add_override_toggle(cmd, args, "--no-mask", "mask.enabled", false, "disable training-time masking");
    add_override_toggle(cmd, args, "--no-odd-even", "model.odd_even", false, "disable the odd/even split block");
    add_override_toggle(cmd, args, "--no-multi-cnn", "model.multi_cnn", false, "replace the cascade with a plain conv");
    add_override_toggle(cmd, args, "--no-senet", "model.senet", false, "disable channel attention");
    add_override_toggle(cmd, args, "--no-forecast", "model.forecast", false, "disable the forecasting head");
    add_override_toggle(cmd, args, "--no-reconstruct", "model.reconstruct", false, "disable the reconstruction head");
    add_override_option(cmd, args, "--mask-ratio", "mask.ratio", "masked fraction r");
    add_override_option(cmd, args, "--mask-mean-len", "mask.mean_len", "mean masked-segment length");
    add_override_option(cmd, args, "--lr", "train.lr", "Adam learning rate");
    add_override_option(cmd, args, "--batch", "train.batch", "batch size");
    add_override_option(cmd, args, "--epochs", "train.epochs", "training epochs");
    add_override_option(cmd, args, "--val-fraction", "train.val_fraction", "validation fraction of training windows");
    add_override_option(cmd, args, "--seed", "train.seed", "master RNG seed");
    add_override_option(cmd, args, "--stride", "train.stride", "training window stride");
    add_override_option(cmd, args, "--gamma", "detect.gamma", "reconstruction weight in the inference score");
    add_override_toggle(cmd, args, "--recon-full-window", "detect.recon_full_window", true,
                        "score with the whole-window reconstruction error");
}

nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["data"] = {{"train", c.train_csv}, {"test", c.test_csv},       {"label_column", c.label_column},
                 {"label_map", c.label_map_spec}, {"name", c.dataset_name}, {"swat_trim", c.swat_trim}};
    j["run"] = {{"out_dir", c.out_dir}};
    j["model"] = config_to_json(c.model);
    j["mask"] = {{"ratio", c.mask.ratio}, {"mean_len", c.mask.mean_len}, {"per_feature", c.mask.per_feature}};
    j["train"] = {{"lr", c.lr},       {"batch", c.batch},  {"epochs", c.epochs}, {"val_fraction", c.val_fraction},
                  {"seed", c.seed},   {"stride", c.stride}};
    j["detect"] = {{"gamma", c.model.gamma_score}, {"recon_full_window", c.recon_full_window}};
    return j;
}

Matrix load_train_matrix(const RunConfig& cfg) {
    if (cfg.train_csv.empty()) throw ConfigError("data.train is required (set --train or the config file)");
    CsvOptions opt;
    opt.label_column = cfg.label_column;
    opt.label_map = cfg.label_map();
    opt.label_optional = true; // train splits are typically unlabeled
    LoadedCsv csv = load_csv(cfg.train_csv, opt);
    if (!csv.rejected_rows.empty())
        std::fprintf(stderr, "note: %zu unparseable rows skipped in %s (first at row %zu)\n", csv.rejected_rows.size(),
                     cfg.train_csv.c_str(), csv.rejected_rows.front());
    Matrix m = std::move(csv.values);
    if (cfg.swat_trim) m.drop_head(14400);
    return m;
}

struct TestData {
    Matrix values;
    std::vector<std::uint8_t> labels;
};

TestData load_test_matrix(const RunConfig& cfg, bool labels_required) {
    if (cfg.test_csv.empty()) throw ConfigError("data.test is required (set --test or the config file)");
    CsvOptions opt;
    opt.label_column = cfg.label_column;
    opt.label_map = cfg.label_map();
    opt.label_optional = !labels_required;
    LoadedCsv csv = load_csv(cfg.test_csv, opt);
    if (!csv.rejected_rows.empty())
        std::fprintf(stderr, "note: %zu unparseable rows skipped in %s (first at row %zu)\n", csv.rejected_rows.size(),
                     cfg.test_csv.c_str(), csv.rejected_rows.front());
    if (labels_required && csv.labels.empty())
        throw DataError(cfg.test_csv + ": evaluation needs the '" + cfg.label_column + "' label column");
    return {std::move(csv.values), std::move(csv.labels)};
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out << j.dump(2) << "\n";
}

NormStats norm_from_json(const nlohmann::json& j) {
    NormStats s;
    s.mn = j.at("min").get<std::vector<double>>();
    s.mx = j.at("max").get<std::vector<double>>();
    return s;
}

nlohmann::json norm_to_json(const NormStats& s) { return {{"min", s.mn}, {"max", s.mx}}; }

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out_dir, std::size_t features, std::size_t rows, double test_fraction,
              double anomaly_fraction, std::uint64_t seed) {
    SynthSpec spec;
    spec.features = features;
    spec.rows = rows;
    spec.test_fraction = test_fraction;
    spec.anomaly_fraction = anomaly_fraction;
    spec.seed = seed;
    SeriesDataset ds = synth_generate(spec);

    fs::create_directories(out_dir);
    const std::string train_path = out_dir + "/train.csv";
    const std::string test_path = out_dir + "/test.csv";
    save_csv(train_path, ds.train, ds.feature_names);
    save_csv(test_path, ds.test, ds.feature_names, &ds.test_labels);

    nlohmann::json meta;
    meta["generator"] = "slmr synth";
    meta["features"] = features;
    meta["rows"] = rows;
    meta["test_fraction"] = test_fraction;
    meta["anomaly_fraction"] = anomaly_fraction;
    meta["seed"] = seed;
    meta["train_rows"] = ds.train.rows;
    meta["test_rows"] = ds.test.rows;
    meta["train_hash"] = hash_file(train_path);
    meta["test_hash"] = hash_file(test_path);
    write_json(out_dir + "/synth_meta.json", meta);
    std::printf("wrote %s (%zu rows) and %s (%zu rows)\n", train_path.c_str(), ds.train.rows, test_path.c_str(),
                ds.test.rows);
    return 0;
}

int cmd_train(RunConfig cfg, bool quiet) {
    Matrix train_data = load_train_matrix(cfg);
    cfg.model.features = train_data.cols;
    cfg.validate();

    const NormStats stats = NormStats::fit(train_data);
    stats.apply(train_data);

    SlmrModel model = SlmrModel::init(cfg.model, cfg.seed);
    TrainOptions opt = cfg.train_options();
    opt.verbose = !quiet;
    const TrainResult result = train(model, train_data, opt);

    fs::create_directories(cfg.out_dir);
    nlohmann::json extra;
    extra["norm"] = norm_to_json(stats);
    extra["dataset"] = cfg.dataset_name;
    const std::string ckpt_path = cfg.out_dir + "/checkpoint.json";
    save_checkpoint(ckpt_path, model, extra);

    const std::string losses_path = cfg.out_dir + "/losses.csv";
    {
        std::ofstream out(losses_path);
        out << "epoch,train_loss,val_loss\n";
        char buf[80];
        for (std::size_t e = 0; e < result.epochs.size(); ++e) {
            std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", e + 1, result.epochs[e].train_loss,
                          result.epochs[e].val_loss);
            out << buf;
        }
    }

    nlohmann::json manifest;
    manifest["command"] = "train";
    manifest["config"] = run_config_to_json(cfg);
    manifest["seed"] = cfg.seed;
    manifest["data"] = {{"train", cfg.train_csv},
                        {"train_hash", hash_file(cfg.train_csv)},
                        {"rows", train_data.rows},
                        {"features", train_data.cols}};
    manifest["best_epoch"] = result.best_epoch + 1;
    manifest["best_val_loss"] = result.best_val;
    manifest["artifacts"] = {{"checkpoint", ckpt_path}, {"losses", losses_path}};
    write_json(cfg.out_dir + "/manifest.json", manifest);

    std::printf("trained %zu epochs; best val loss %.6f at epoch %zu\n", result.epochs.size(), result.best_val,
                result.best_epoch + 1);
    std::printf("checkpoint: %s\n", ckpt_path.c_str());
    return 0;
}

ScoreSeries scored_series(const RunConfig& cfg, const std::string& checkpoint, const Matrix& test_values) {
    LoadedCheckpoint ckpt = load_checkpoint_raw(checkpoint);
    if (!ckpt.raw.contains("norm")) throw DataError(checkpoint + ": checkpoint lacks normalization statistics");
    if (test_values.cols != ckpt.model.config.features)
        throw DataError("test data has " + std::to_string(test_values.cols) + " features, checkpoint expects " +
                        std::to_string(ckpt.model.config.features));
    Matrix normalized = test_values;
    norm_from_json(ckpt.raw.at("norm")).apply(normalized);

    ScoreOptions sopt;
    sopt.batch = cfg.batch;
    sopt.gamma = cfg.model.gamma_score;
    sopt.recon_full_window = cfg.recon_full_window;
    return score(ckpt.model, normalized, sopt);
}

int cmd_score(const RunConfig& cfg, const std::string& checkpoint) {
    TestData test = load_test_matrix(cfg, false);
    ScoreSeries s = scored_series(cfg, checkpoint, test.values);
    fs::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/scores.csv";
    write_scores_csv(path, s);
    std::printf("wrote %zu scores to %s\n", s.size(), path.c_str());
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint) {
    TestData test = load_test_matrix(cfg, true);
    ScoreSeries s = scored_series(cfg, checkpoint, test.values);

    const std::size_t w = s.first_timestamp;
    std::vector<std::uint8_t> truth(test.labels.begin() + static_cast<std::ptrdiff_t>(w), test.labels.end());
    EvalReport report = best_f1_threshold(s.values(), truth);
    LocalizationReport loc = localize(report.adjusted_pred, truth);

    fs::create_directories(cfg.out_dir);
    write_scores_csv(cfg.out_dir + "/scores.csv", s, &report.adjusted_pred, &truth);
    nlohmann::json j = report_to_json(report, loc);
    j["gamma"] = s.gamma;
    j["dataset"] = cfg.dataset_name;
    write_json(cfg.out_dir + "/metrics.json", j);

    std::printf("threshold %.6g  precision %.4f  recall %.4f  F1 %.4f\n", report.threshold, report.precision,
                report.recall, report.f1);
    std::printf("segments: %zu hit, %zu missed, %zu false alarms\n", loc.hits(), loc.misses(), loc.false_alarms());
    return 0;
}

// Multi-entity datasets train one model per entity; their point-adjusted
// predictions are pooled before computing global precision/recall/F1. Inputs
// are the per-entity scores.csv files written by `eval` (pred,truth columns).
int cmd_pool(const std::vector<std::string>& score_files, const std::string& out_dir) {
    if (score_files.empty()) throw ConfigError("pool needs at least one scores.csv");
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (const std::string& path : score_files) {
        LoadedCsv csv = load_csv(path);
        std::ptrdiff_t pred_col = -1, truth_col = -1;
        for (std::size_t i = 0; i < csv.feature_names.size(); ++i) {
            if (csv.feature_names[i] == "pred") pred_col = static_cast<std::ptrdiff_t>(i);
            if (csv.feature_names[i] == "truth") truth_col = static_cast<std::ptrdiff_t>(i);
        }
        if (pred_col < 0 || truth_col < 0)
            throw DataError(path + ": needs pred and truth columns (write them with `slmr eval`)");
        for (std::size_t r = 0; r < csv.values.rows; ++r) {
            const bool p = csv.values.at(r, static_cast<std::size_t>(pred_col)) != 0.0;
            const bool t = csv.values.at(r, static_cast<std::size_t>(truth_col)) != 0.0;
            if (p && t)
                ++tp;
            else if (p && !t)
                ++fp;
            else if (!p && t)
                ++fn;
            else
                ++tn;
        }
    }
    const double precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double f1 = (precision + recall) > 0 ? 2 * precision * recall / (precision + recall) : 0.0;

    fs::create_directories(out_dir);
    nlohmann::json j;
    j["entities"] = score_files.size();
    j["tp"] = tp;
    j["fp"] = fp;
    j["fn"] = fn;
    j["tn"] = tn;
    j["precision"] = precision;
    j["recall"] = recall;
    j["f1"] = f1;
    write_json(out_dir + "/pooled_metrics.json", j);
    std::printf("pooled over %zu entities: precision %.4f  recall %.4f  F1 %.4f\n", score_files.size(), precision, recall,
                f1);
    return 0;
}

int cmd_sweep(RunConfig cfg, const std::string& axis, const std::vector<double>& values, const std::string& checkpoint,
              bool quiet) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    if (axis != "mask_ratio" && axis != "window" && axis != "gamma")
        throw ConfigError("sweep axis must be one of mask_ratio, window, gamma");

    fs::create_directories(cfg.out_dir);
    std::vector<std::array<double, 4>> rows;

    if (axis == "gamma") {
        // gamma only reweights the score terms: reuse one model, re-threshold
        std::string ckpt = checkpoint;
        if (ckpt.empty()) {
            RunConfig tcfg = cfg;
            tcfg.out_dir = cfg.out_dir + "/gamma_base";
            const int rc = cmd_train(tcfg, quiet);
            if (rc != 0) return rc;
            ckpt = tcfg.out_dir + "/checkpoint.json";
        }
        TestData test = load_test_matrix(cfg, true);
        ScoreSeries s = scored_series(cfg, ckpt, test.values);
        std::vector<std::uint8_t> truth(test.labels.begin() + static_cast<std::ptrdiff_t>(s.first_timestamp),
                                        test.labels.end());
        for (double v : values) {
            s.gamma = v;
            EvalReport r = best_f1_threshold(s.values(), truth);
            rows.push_back({v, r.precision, r.recall, r.f1});
        }
    } else {
        for (double v : values) {
            RunConfig point = cfg;
            if (axis == "mask_ratio") {
                point.mask.ratio = v;
            } else {
                if (v < 2 || v != std::floor(v)) throw ConfigError("window sweep values must be integers >= 2");
                point.model.window = static_cast<std::size_t>(v);
            }
            char sub[64];
            std::snprintf(sub, sizeof(sub), "%s_%g", axis.c_str(), v);
            point.out_dir = cfg.out_dir + "/" + sub;
            const int rc = cmd_train(point, quiet);
            if (rc != 0) return rc;

            TestData test = load_test_matrix(point, true);
            ScoreSeries s = scored_series(point, point.out_dir + "/checkpoint.json", test.values);
            std::vector<std::uint8_t> truth(test.labels.begin() + static_cast<std::ptrdiff_t>(s.first_timestamp),
                                            test.labels.end());
            EvalReport r = best_f1_threshold(s.values(), truth);
            rows.push_back({v, r.precision, r.recall, r.f1});
        }
    }

    const std::string path = cfg.out_dir + "/sweep.csv";
    std::ofstream out(path);
    out << "value,precision,recall,f1\n";
    char buf[120];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", r[0], r[1], r[2], r[3]);
        out << buf;
    }
    std::printf("wrote %zu sweep rows to %s\n", rows.size(), path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SLMR multivariate time-series anomaly detector"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    std::string synth_out = "data/synth";
    std::size_t synth_features = 8, synth_rows = 20000;
    double synth_test_fraction = 0.4, synth_anomaly_fraction = 0.10;
    std::uint64_t synth_seed = 1;
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--features", synth_features, "number of features");
    synth->add_option("--rows", synth_rows, "total rows (train + test)");
    synth->add_option("--test-fraction", synth_test_fraction, "fraction of rows in the test split");
    synth->add_option("--anomaly-fraction", synth_anomaly_fraction, "anomalous fraction of test rows");
    synth->add_option("--seed", synth_seed, "generator seed");

    // train
    CommonArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
    add_common_options(train_cmd, train_args);
    bool quiet = false;
    train_cmd->add_flag("-q,--quiet", quiet, "suppress per-epoch progress");

    // score
    CommonArgs score_args;
    std::string score_ckpt;
    auto* score_cmd = app.add_subcommand("score", "write per-timestamp anomaly scores for a test CSV");
    add_common_options(score_cmd, score_args);
    score_cmd->add_option("--checkpoint", score_ckpt, "trained checkpoint path")->required();

    // eval
    CommonArgs eval_args;
    std::string eval_ckpt;
    auto* eval_cmd = app.add_subcommand("eval", "score a labeled test CSV and report point-adjusted P/R/F1");
    add_common_options(eval_cmd, eval_args);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "trained checkpoint path")->required();

    // sweep
    CommonArgs sweep_args;
    std::string sweep_axis, sweep_ckpt;
    std::vector<double> sweep_values;
    bool sweep_quiet = false;
    auto* sweep_cmd = app.add_subcommand("sweep", "parameter sensitivity: train/eval across an axis");
    add_common_options(sweep_cmd, sweep_args);
    sweep_cmd->add_option("--axis", sweep_axis, "mask_ratio | window | gamma")->required();
    sweep_cmd->add_option("--values", sweep_values, "axis values")->required()->delimiter(',');
    sweep_cmd->add_option("--checkpoint", sweep_ckpt, "existing checkpoint (gamma axis only)");
    sweep_cmd->add_flag("-q,--quiet", sweep_quiet, "suppress per-epoch progress");

    // pool
    std::vector<std::string> pool_files;
    std::string pool_out = "runs/pooled";
    auto* pool_cmd = app.add_subcommand("pool", "pool per-entity eval results into global metrics");
    pool_cmd->add_option("scores", pool_files, "scores.csv files from per-entity eval runs")->required();
    pool_cmd->add_option("--out-dir", pool_out, "artifact output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*synth) return cmd_synth(synth_out, synth_features, synth_rows, synth_test_fraction, synth_anomaly_fraction,
                                     synth_seed);
        if (*train_cmd) {
            RunConfig cfg = resolve_config(train_args.config_path, train_args.overrides);
            return cmd_train(std::move(cfg), quiet);
        }
        if (*score_cmd) {
            RunConfig cfg = resolve_config(score_args.config_path, score_args.overrides);
            return cmd_score(cfg, score_ckpt);
        }
        if (*eval_cmd) {
            RunConfig cfg = resolve_config(eval_args.config_path, eval_args.overrides);
            return cmd_eval(cfg, eval_ckpt);
        }
        if (*sweep_cmd) {
            RunConfig cfg = resolve_config(sweep_args.config_path, sweep_args.overrides);
            return cmd_sweep(std::move(cfg), sweep_axis, sweep_values, sweep_ckpt, sweep_quiet);
        }
        if (*pool_cmd) return cmd_pool(pool_files, pool_out);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
