#pragma once

#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "slmr/model.hpp"

namespace slmr {

// Everything a run needs, resolved from three layers in increasing
// precedence: built-in defaults, a config file, then command-line flags.
struct RunConfig {
    // data
    std::string train_csv;
    std::string test_csv;
    std::string label_column = "label";
    std::string label_map_spec; // e.g. "Normal=0,Attack=1"
    std::string dataset_name = "dataset";
    bool swat_trim = false; // drop the first 4 hours (14400 rows) of train data
    std::string out_dir = "runs/out";

    SlmrConfig model;
    MaskSpec mask;

    // training
    double lr = 1e-3;
    std::size_t batch = 256;
    std::size_t epochs = 30;
    double val_fraction = 0.1;
    std::uint64_t seed = 1;
    std::size_t stride = 1;

    // detection
    bool recon_full_window = false;

    std::map<std::string, int> label_map() const {
        std::map<std::string, int> out;
        if (label_map_spec.empty()) return out;
        std::size_t pos = 0;
        while (pos < label_map_spec.size()) {
            std::size_t comma = label_map_spec.find(',', pos);
            if (comma == std::string::npos) comma = label_map_spec.size();
            const std::string entry = label_map_spec.substr(pos, comma - pos);
            const std::size_t eq = entry.find('=');
            if (eq == std::string::npos) throw ConfigError("label map entry '" + entry + "' is not NAME=0|1");
            const std::string name = detail::trim(entry.substr(0, eq));
            const std::string val = detail::trim(entry.substr(eq + 1));
            if (name.empty() || (val != "0" && val != "1"))
                throw ConfigError("label map entry '" + entry + "' is not NAME=0|1");
            out[name] = val == "1" ? 1 : 0;
            pos = comma + 1;
        }
        return out;
    }

    TrainOptions train_options() const {
        TrainOptions t;
        t.lr = lr;
        t.batch = batch;
        t.epochs = epochs;
        t.val_fraction = val_fraction;
        t.seed = seed;
        t.stride = stride;
        t.mask = mask;
        return t;
    }

    std::vector<std::string> problems() const {
        std::vector<std::string> out = model.problems();
        if (!(lr >= 0.0)) out.push_back("train.lr must be >= 0");
        if (batch < 1) out.push_back("train.batch must be >= 1");
        if (epochs < 1) out.push_back("train.epochs must be >= 1");
        if (val_fraction < 0.0 || val_fraction > 0.5) out.push_back("train.val_fraction must be in [0, 0.5]");
        if (stride < 1) out.push_back("train.stride must be >= 1");
        if (!(mask.ratio > 0.0 && mask.ratio < 1.0)) out.push_back("mask.ratio must be in (0,1)");
        if (!(mask.mean_len >= 1.0)) out.push_back("mask.mean_len must be >= 1");
        if (!label_map_problems().empty()) out.push_back(label_map_problems());
        return out;
    }

    void validate() const {
        const auto p = problems();
        if (!p.empty()) {
            std::string msg = "invalid configuration:";
            for (const auto& e : p) msg += "\n  - " + e;
            throw ConfigError(msg);
        }
    }

  private:
    std::string label_map_problems() const {
        try {
            (void)label_map();
        } catch (const ConfigError& e) {
            return e.what();
        }
        return "";
    }
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

inline double parse_num(const std::string& v, const std::string& key) {
    double out;
    if (!parse_double(v, out)) throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    return out;
}

inline std::uint64_t parse_uint(const std::string& v, const std::string& key) {
    const double d = parse_num(v, key);
    if (d < 0 || d != std::floor(d)) throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
    return static_cast<std::uint64_t>(d);
}

} // namespace detail

// Applies one dotted key (section.name) to the config. The key set below is
// the whole config-file schema; unknown keys are configuration errors.
inline void apply_config_kv(RunConfig& c, const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_num;
    using detail::parse_uint;
    if (key == "data.train") c.train_csv = value;
    else if (key == "data.test") c.test_csv = value;
    else if (key == "data.label_column") c.label_column = value;
    else if (key == "data.label_map") c.label_map_spec = value;
    else if (key == "data.name") c.dataset_name = value;
    else if (key == "data.swat_trim") c.swat_trim = parse_bool(value, key);
    else if (key == "run.out_dir") c.out_dir = value;
    else if (key == "model.window") c.model.window = parse_uint(value, key);
    else if (key == "model.channels") c.model.channels = parse_uint(value, key);
    else if (key == "model.groups") c.model.groups = parse_uint(value, key);
    else if (key == "model.hidden") c.model.hidden = parse_uint(value, key);
    else if (key == "model.odd_even") c.model.use_odd_even = parse_bool(value, key);
    else if (key == "model.multi_cnn") c.model.use_multi_cnn = parse_bool(value, key);
    else if (key == "model.senet") c.model.use_senet = parse_bool(value, key);
    else if (key == "model.forecast") c.model.use_forecast = parse_bool(value, key);
    else if (key == "model.reconstruct") c.model.use_reconstruct = parse_bool(value, key);
    else if (key == "mask.enabled") c.model.use_mask = parse_bool(value, key);
    else if (key == "mask.ratio") c.mask.ratio = parse_num(value, key);
    else if (key == "mask.mean_len") c.mask.mean_len = parse_num(value, key);
    else if (key == "mask.per_feature") c.mask.per_feature = parse_bool(value, key);
    else if (key == "mask.loss_masked_only") c.model.recon_loss_masked_only = parse_bool(value, key);
    else if (key == "train.lr") c.lr = parse_num(value, key);
    else if (key == "train.batch") c.batch = parse_uint(value, key);
    else if (key == "train.epochs") c.epochs = parse_uint(value, key);
    else if (key == "train.val_fraction") c.val_fraction = parse_num(value, key);
    else if (key == "train.seed") c.seed = parse_uint(value, key);
    else if (key == "train.stride") c.stride = parse_uint(value, key);
    else if (key == "detect.gamma") c.model.gamma_score = parse_num(value, key);
    else if (key == "detect.recon_full_window") c.recon_full_window = parse_bool(value, key);
    else throw ConfigError("unknown configuration key '" + key + "'");
}

// INI-style config files: [section] headers, key = value lines, full-line
// comments starting with # or ;.
inline std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed section header");
            section = detail::trim(t.substr(1, t.size() - 2));
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(t.substr(0, eq));
        const std::string value = detail::trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        out.emplace_back(section.empty() ? key : section + "." + key, value);
    }
    return out;
}

// defaults -> config file -> overrides (normally CLI flags); every layer's
// errors are collected so a bad config reports all offending fields at once.
inline RunConfig resolve_config(const std::string& config_path,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig c;
    std::vector<std::string> errors;
    if (!config_path.empty()) {
        for (const auto& [key, value] : parse_config_file(config_path)) {
            try {
                apply_config_kv(c, key, value);
            } catch (const ConfigError& e) {
                errors.push_back(e.what());
            }
        }
    }
    for (const auto& [key, value] : overrides) {
        try {
            apply_config_kv(c, key, value);
        } catch (const ConfigError& e) {
            errors.push_back(e.what());
        }
    }
    if (!errors.empty()) {
        std::string msg = "configuration errors:";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
    return c;
}

} // namespace slmr
