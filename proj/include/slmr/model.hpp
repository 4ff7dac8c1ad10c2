#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "slmr/layers.hpp"
#include "slmr/masking.hpp"
#include "slmr/pipeline.hpp"

namespace slmr {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct SlmrConfig {
    std::size_t window = 100;
    std::size_t features = 0;  // set from data
    std::size_t channels = 32; // width of the multi-scale cascade
    std::size_t groups = 4;    // number of channel groups (s)
    std::size_t hidden = 64;   // GRU state size
    double gamma_score = 1.0;  // reconstruction weight in the inference score

    // ablation switches; disabled blocks are bypassed
    bool use_mask = true;
    bool use_odd_even = true;
    bool use_multi_cnn = true;
    bool use_senet = true;
    bool use_forecast = true;
    bool use_reconstruct = true;

    bool recon_loss_masked_only = false; // variant: reconstruction loss on masked cells only

    std::vector<std::string> problems() const {
        std::vector<std::string> out;
        if (features < 1) out.push_back("features must be >= 1");
        if (window < 2) out.push_back("window must be >= 2");
        if (use_odd_even && window % 2 != 0) out.push_back("window must be even when the odd/even split is enabled");
        if (groups < 2) out.push_back("groups must be >= 2");
        if (channels < groups || channels % groups != 0) out.push_back("channels must be a positive multiple of groups");
        if (hidden < 1) out.push_back("hidden size must be >= 1");
        if (!use_forecast && !use_reconstruct) out.push_back("at least one of the forecast/reconstruct heads must be enabled");
        if (gamma_score < 0.0) out.push_back("gamma must be >= 0");
        return out;
    }

    void validate() const {
        const auto p = problems();
        if (!p.empty()) {
            std::string msg = "invalid model configuration:";
            for (const auto& e : p) msg += "\n  - " + e;
            throw ConfigError(msg);
        }
    }
};

inline nlohmann::json config_to_json(const SlmrConfig& c) {
    return {{"window", c.window},       {"features", c.features},       {"channels", c.channels},
            {"groups", c.groups},       {"hidden", c.hidden},           {"gamma_score", c.gamma_score},
            {"use_mask", c.use_mask},   {"use_odd_even", c.use_odd_even}, {"use_multi_cnn", c.use_multi_cnn},
            {"use_senet", c.use_senet}, {"use_forecast", c.use_forecast}, {"use_reconstruct", c.use_reconstruct},
            {"recon_loss_masked_only", c.recon_loss_masked_only}};
}

inline SlmrConfig config_from_json(const nlohmann::json& j) {
    SlmrConfig c;
    c.window = j.at("window").get<std::size_t>();
    c.features = j.at("features").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.groups = j.at("groups").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.gamma_score = j.at("gamma_score").get<double>();
    c.use_mask = j.at("use_mask").get<bool>();
    c.use_odd_even = j.at("use_odd_even").get<bool>();
    c.use_multi_cnn = j.at("use_multi_cnn").get<bool>();
    c.use_senet = j.at("use_senet").get<bool>();
    c.use_forecast = j.at("use_forecast").get<bool>();
    c.use_reconstruct = j.at("use_reconstruct").get<bool>();
    c.recon_loss_masked_only = j.value("recon_loss_masked_only", false);
    return c;
}

// ---------------------------------------------------------------------------
// multi-scale residual convolution
// ---------------------------------------------------------------------------

// Channel cascade: a 1x1 gamma conv widens C to `channels`, the widened map
// is split into `groups` equal slices C_1..C_s with
//   O_1 = C_1,  O_2 = alpha(C_2),  O_i = alpha(C_i + O_{i-1})  (i > 2),
// where the alpha conv at cascade position i has kernel 2i+1 and dilation 2,
// and a final 1x1 gamma conv restores the input channel count.
struct MultiscaleParams {
    Conv1dParams entry;                // gamma: C -> channels
    std::vector<Conv1dParams> alphas;  // groups-1 convs over channels/groups
    Conv1dParams exit;                 // gamma: channels -> C

    static MultiscaleParams init(std::size_t in_channels, std::size_t channels, std::size_t groups, Rng& rng) {
        if (groups < 2 || channels % groups != 0)
            throw ConfigError("multiscale conv needs channels divisible by groups and groups >= 2");
        MultiscaleParams p;
        p.entry = Conv1dParams::init(ConvSpec::gamma(in_channels, channels), rng);
        const std::size_t gc = channels / groups;
        for (std::size_t i = 1; i < groups; ++i) p.alphas.push_back(Conv1dParams::init(ConvSpec::alpha(i, gc, gc), rng));
        p.exit = Conv1dParams::init(ConvSpec::gamma(channels, in_channels), rng);
        return p;
    }
};

inline Tensor multiscale_conv(const Tensor& x, const MultiscaleParams& p) {
    const std::size_t groups = p.alphas.size() + 1;
    const std::size_t channels = p.entry.spec.out_channels;
    if (channels % groups != 0) throw ConfigError("multiscale conv channel count not divisible by group count");
    const std::size_t gc = channels / groups;

    Tensor widened = conv1d(x, p.entry);
    std::vector<Tensor> outputs;
    outputs.reserve(groups);
    Tensor prev;
    for (std::size_t i = 1; i <= groups; ++i) {
        Tensor ci = channel_slice(widened, (i - 1) * gc, i * gc);
        Tensor oi;
        if (i == 1)
            oi = ci;
        else if (i == 2)
            oi = conv1d(ci, p.alphas[i - 2]);
        else
            oi = conv1d(add(ci, prev), p.alphas[i - 2]);
        outputs.push_back(oi);
        prev = oi;
    }
    return conv1d(channel_concat(outputs), p.exit);
}

// ---------------------------------------------------------------------------
// odd/even split with interactive residuals
// ---------------------------------------------------------------------------

// Feature extractor used inside the split: the multi-scale cascade, or a
// plain kernel-3 conv when the cascade is ablated.
struct PathConv {
    bool multiscale = true;
    MultiscaleParams cascade;
    Conv1dParams basic;

    static PathConv init(bool use_multiscale, std::size_t in_channels, std::size_t channels, std::size_t groups, Rng& rng) {
        PathConv p;
        p.multiscale = use_multiscale;
        if (use_multiscale)
            p.cascade = MultiscaleParams::init(in_channels, channels, groups, rng);
        else
            p.basic = Conv1dParams::init(ConvSpec::beta(in_channels, in_channels), rng);
        return p;
    }

    Tensor apply(const Tensor& x) const { return multiscale ? multiscale_conv(x, cascade) : conv1d(x, basic); }
};

// x[B,C,w] is split into even-index and odd-index subsequences of length w/2,
// each runs through its own extractor, the results cross over as residuals
//   X'_even = X_odd + Conv(X_even),  X'_odd = X_even + Conv(X_odd),
// and the two halves are re-interleaved to the original length.
inline Tensor split_interact(const Tensor& x, const PathConv& even_path, const PathConv& odd_path) {
    if (x.rank() != 3) throw ShapeError("split_interact expects [B,C,w], got " + shape_str(x.shape()));
    if (x.extent(2) % 2 != 0) throw ConfigError("split_interact requires an even window length");
    Tensor even = time_stride(x, 0, 2);
    Tensor odd = time_stride(x, 1, 2);
    Tensor new_even = add(odd, even_path.apply(even));
    Tensor new_odd = add(even, odd_path.apply(odd));
    return interleave_time(new_even, new_odd);
}

// ---------------------------------------------------------------------------
// full model
// ---------------------------------------------------------------------------

struct SlmrModel {
    SlmrConfig config;
    PathConv even_path, odd_path; // when use_odd_even
    PathConv full_path;           // when !use_odd_even but use_multi_cnn
    SenetParams senet;
    GruParams gru;
    DenseParams forecast_head; // hidden -> features
    DenseParams recon_head;    // hidden -> features, applied per timestep

    static SlmrModel init(const SlmrConfig& config, std::uint64_t seed) {
        config.validate();
        SlmrModel m;
        m.config = config;
        Rng rng(Rng::mix(seed, 0x51));
        const std::size_t k = config.features;
        if (config.use_odd_even) {
            m.even_path = PathConv::init(config.use_multi_cnn, k, config.channels, config.groups, rng);
            m.odd_path = PathConv::init(config.use_multi_cnn, k, config.channels, config.groups, rng);
        } else if (config.use_multi_cnn) {
            m.full_path = PathConv::init(true, k, config.channels, config.groups, rng);
        }
        if (config.use_senet) m.senet = SenetParams::init(rng);
        m.gru = GruParams::init(k, config.hidden, rng);
        if (config.use_forecast) m.forecast_head = DenseParams::init(config.hidden, k, rng);
        if (config.use_reconstruct) m.recon_head = DenseParams::init(config.hidden, k, rng);
        return m;
    }

    std::vector<std::pair<std::string, Tensor>> named_params() {
        std::vector<std::pair<std::string, Tensor>> out;
        auto add_conv = [&](const std::string& prefix, Conv1dParams& c) {
            out.emplace_back(prefix + ".w", c.weight);
            out.emplace_back(prefix + ".b", c.bias);
        };
        auto add_path = [&](const std::string& prefix, PathConv& p) {
            if (p.multiscale) {
                add_conv(prefix + ".entry", p.cascade.entry);
                for (std::size_t i = 0; i < p.cascade.alphas.size(); ++i)
                    add_conv(prefix + ".alpha" + std::to_string(i + 1), p.cascade.alphas[i]);
                add_conv(prefix + ".exit", p.cascade.exit);
            } else {
                add_conv(prefix + ".conv", p.basic);
            }
        };
        if (config.use_odd_even) {
            add_path("even", even_path);
            add_path("odd", odd_path);
        } else if (config.use_multi_cnn) {
            add_path("full", full_path);
        }
        if (config.use_senet) {
            add_conv("senet.conv1", senet.conv1);
            add_conv("senet.conv2", senet.conv2);
        }
        out.emplace_back("gru.wz", gru.wz);
        out.emplace_back("gru.uz", gru.uz);
        out.emplace_back("gru.bz", gru.bz);
        out.emplace_back("gru.wr", gru.wr);
        out.emplace_back("gru.ur", gru.ur);
        out.emplace_back("gru.br", gru.br);
        out.emplace_back("gru.wn", gru.wn);
        out.emplace_back("gru.un", gru.un);
        out.emplace_back("gru.bn", gru.bn);
        if (config.use_forecast) {
            out.emplace_back("forecast.w", forecast_head.weight);
            out.emplace_back("forecast.b", forecast_head.bias);
        }
        if (config.use_reconstruct) {
            out.emplace_back("recon.w", recon_head.weight);
            out.emplace_back("recon.b", recon_head.bias);
        }
        return out;
    }

    std::vector<Tensor> params() {
        std::vector<Tensor> out;
        for (auto& [name, t] : named_params()) out.push_back(t);
        return out;
    }

    bool params_finite() {
        for (auto& [name, t] : named_params())
            if (!t.all_finite()) return false;
        return true;
    }
};

struct ModelOutputs {
    Tensor forecast; // [B,k]; undefined when the head is disabled
    Tensor recon;    // [B,w,k]; undefined when the head is disabled
};

inline ModelOutputs forward(const SlmrModel& m, const Tensor& x) {
    const auto& c = m.config;
    if (x.rank() != 3 || x.extent(1) != c.features || x.extent(2) != c.window)
        throw ShapeError("model input must be [B," + std::to_string(c.features) + "," + std::to_string(c.window) + "], got " +
                         shape_str(x.shape()));
    Tensor h = x;
    if (c.use_odd_even)
        h = split_interact(h, m.even_path, m.odd_path);
    else if (c.use_multi_cnn)
        h = multiscale_conv(h, m.full_path.cascade);
    if (c.use_senet) h = senet1d(h, m.senet);

    Tensor seq = transpose_12(h); // [B,w,k]
    auto [outputs, h_last] = gru_forward(seq, m.gru);

    ModelOutputs out;
    if (c.use_forecast) out.forecast = dense(h_last, m.forecast_head);
    if (c.use_reconstruct) {
        const std::size_t B = x.extent(0);
        Tensor flat = reshape(outputs, {B * c.window, c.hidden});
        out.recon = reshape(dense(flat, m.recon_head), {B, c.window, c.features});
    }
    return out;
}

// ---------------------------------------------------------------------------
// joint loss
// ---------------------------------------------------------------------------

struct LossValues {
    Tensor total;    // scalar, tape-connected
    double forecast = 0.0;
    double recon = 0.0;
};

// Per-window root-of-summed-squares for both heads, averaged over the batch;
// the total is their plain sum. When `mask` is given and the masked-only
// variant is on, reconstruction residuals are restricted to masked cells.
inline LossValues loss(const SlmrModel& m, const ModelOutputs& out, const WindowBatch& batch, const Tensor* mask = nullptr) {
    const auto& c = m.config;
    LossValues lv;
    Tensor lf, lr;
    if (c.use_forecast) {
        Tensor diff = sub(out.forecast, batch.forecast_target);
        Tensor per_window = sqrt(reduce_sum(mul(diff, diff), 1)); // [B]
        lf = mean_all(per_window);
        lv.forecast = lf.item();
    }
    if (c.use_reconstruct) {
        Tensor diff = sub(out.recon, batch.recon_target);
        if (c.recon_loss_masked_only) {
            if (!mask) throw ConfigError("masked-only reconstruction loss requires the mask");
            Tensor inverted = add(mul(*mask, -1.0), 1.0); // 1 on masked cells
            diff = mul(diff, inverted);
        }
        Tensor per_window = sqrt(reduce_sum(reduce_sum(mul(diff, diff), 2), 1)); // [B]
        lr = mean_all(per_window);
        lv.recon = lr.item();
    }
    if (c.use_forecast && c.use_reconstruct)
        lv.total = add(lf, lr);
    else
        lv.total = c.use_forecast ? lf : lr;
    if (!std::isfinite(lv.total.item())) throw NumericError("loss is not finite; training aborted");
    return lv;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct TrainOptions {
    double lr = 1e-3;
    std::size_t batch = 256;
    std::size_t epochs = 30;
    double val_fraction = 0.1;
    std::uint64_t seed = 1;
    std::size_t stride = 1; // training-window stride; evaluation always uses stride 1
    MaskSpec mask;
    bool verbose = false;
};

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    double best_val = 0.0;
};

namespace detail {

inline double eval_loss(SlmrModel& m, const Matrix& data, const std::vector<std::size_t>& starts, std::size_t batch_size) {
    NoGradGuard ng;
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t off = 0; off < starts.size(); off += batch_size) {
        const std::size_t hi = std::min(starts.size(), off + batch_size);
        std::vector<std::size_t> chunk(starts.begin() + static_cast<std::ptrdiff_t>(off),
                                       starts.begin() + static_cast<std::ptrdiff_t>(hi));
        WindowBatch wb = make_window_batch(data, chunk, m.config.window);
        ModelOutputs out = forward(m, wb.inputs);
        LossValues lv = loss(m, out, wb);
        acc += lv.total.item() * static_cast<double>(chunk.size());
        count += chunk.size();
    }
    return count ? acc / static_cast<double>(count) : 0.0;
}

} // namespace detail

// Adam training with per-epoch validation; the parameters of the best
// validation epoch are restored before returning.
inline TrainResult train(SlmrModel& m, const Matrix& train_data, const TrainOptions& opt) {
    m.config.validate();
    if (train_data.cols != m.config.features) throw DataError("training data feature count does not match the model");
    if (opt.batch < 1) throw ConfigError("batch size must be >= 1");
    if (opt.val_fraction < 0.0 || opt.val_fraction > 0.5) throw ConfigError("validation fraction must be in [0, 0.5]");
    if (m.config.use_mask) opt.mask.validate();

    std::vector<std::size_t> starts = window_starts(train_data.rows, m.config.window, opt.stride);
    const std::size_t n_val = static_cast<std::size_t>(std::llround(opt.val_fraction * static_cast<double>(starts.size())));
    std::vector<std::size_t> val_starts(starts.end() - static_cast<std::ptrdiff_t>(n_val), starts.end());
    starts.resize(starts.size() - n_val);
    if (starts.empty()) throw DataError("no training windows left after the validation split");

    std::vector<Tensor> params = m.params();
    AdamState adam = AdamState::init(params, opt.lr);

    TrainResult result;
    result.best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_params;

    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        Rng shuffle_rng(Rng::mix(opt.seed, 1000 + epoch));
        std::vector<std::size_t> order = starts;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);

        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t off = 0; off < order.size(); off += opt.batch) {
            const std::size_t hi = std::min(order.size(), off + opt.batch);
            std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(off),
                                           order.begin() + static_cast<std::ptrdiff_t>(hi));
            WindowBatch wb = make_window_batch(train_data, chunk, m.config.window);

            Tensor input = wb.inputs;
            Tensor mask;
            if (m.config.use_mask) {
                std::vector<std::uint64_t> seeds;
                seeds.reserve(chunk.size());
                for (std::size_t s : chunk) seeds.push_back(Rng::mix(Rng::mix(opt.seed, epoch), s));
                MaskedBatch mb = mask_batch(wb.inputs, opt.mask, seeds);
                input = mb.input;
                mask = mb.mask;
            }

            ModelOutputs out = forward(m, input);
            LossValues lv = loss(m, out, wb, mask.defined() ? &mask : nullptr);
            for (auto& p : params) p.zero_grad();
            backward(lv.total);
            adam_step(params, adam);

            epoch_loss += lv.total.item() * static_cast<double>(chunk.size());
            seen += chunk.size();
        }

        EpochStats stats;
        stats.train_loss = epoch_loss / static_cast<double>(seen);
        stats.val_loss = val_starts.empty() ? stats.train_loss
                                            : detail::eval_loss(m, train_data, val_starts, opt.batch);
        result.epochs.push_back(stats);
        if (opt.verbose)
            std::fprintf(stderr, "epoch %zu/%zu train %.6f val %.6f\n", epoch + 1, opt.epochs, stats.train_loss, stats.val_loss);

        if (stats.val_loss < result.best_val) {
            result.best_val = stats.val_loss;
            result.best_epoch = epoch;
            best_params.clear();
            for (const auto& p : params) best_params.push_back(p.data());
        }
    }

    if (!best_params.empty())
        for (std::size_t i = 0; i < params.size(); ++i) params[i].data() = best_params[i];
    return result;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

// Versioned JSON manifest: config plus a name -> {shape, row-major data} map
// for every parameter. `extra` top-level fields (normalization statistics,
// dataset name, ...) ride along untouched.
inline void save_checkpoint(const std::string& path, SlmrModel& m, const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json j = extra;
    j["format"] = "slmr-checkpoint";
    j["version"] = 1;
    j["config"] = config_to_json(m.config);
    nlohmann::json params = nlohmann::json::object();
    for (auto& [name, t] : m.named_params()) {
        params[name] = {{"shape", t.shape()}, {"data", t.data()}};
    }
    j["params"] = std::move(params);
    std::ofstream out(path);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out << j.dump();
    if (!out) throw DataError("checkpoint write failed: " + path);
}

struct LoadedCheckpoint {
    SlmrModel model;
    nlohmann::json raw;
};

inline LoadedCheckpoint load_checkpoint_raw(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("checkpoint parse error in " + path + ": " + e.what());
    }
    if (j.value("format", "") != "slmr-checkpoint") throw DataError(path + " is not a checkpoint file");
    if (j.value("version", 0) != 1) throw DataError(path + ": unsupported checkpoint version");
    SlmrModel m = SlmrModel::init(config_from_json(j.at("config")), 0);
    for (auto& [name, t] : m.named_params()) {
        if (!j.at("params").contains(name)) throw DataError(path + ": missing parameter '" + name + "'");
        const auto& pj = j.at("params").at(name);
        const auto shape = pj.at("shape").get<Shape>();
        if (shape != t.shape())
            throw DataError(path + ": parameter '" + name + "' has shape " + shape_str(shape) + ", expected " +
                            shape_str(t.shape()));
        t.data() = pj.at("data").get<std::vector<double>>();
    }
    return {std::move(m), std::move(j)};
}

inline SlmrModel load_checkpoint(const std::string& path) { return load_checkpoint_raw(path).model; }

} // namespace slmr
