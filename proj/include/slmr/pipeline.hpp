#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "slmr/rng.hpp"
#include "slmr/tensor.hpp"

namespace slmr {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
    const double* row(std::size_t r) const { return v.data() + r * cols; }

    void drop_head(std::size_t n) {
        if (n >= rows) throw DataError("cannot drop " + std::to_string(n) + " rows from a matrix with " + std::to_string(rows));
        v.erase(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n * cols));
        rows -= n;
    }
};

// A named train/test pair with binary test labels. Labels may be empty when
// the test split is unlabeled (scoring only).
struct SeriesDataset {
    std::string name;
    Matrix train;
    Matrix test;
    std::vector<std::uint8_t> test_labels;
    std::vector<std::string> feature_names;

    std::size_t features() const { return train.cols; }

    void validate() const {
        if (train.cols == 0 || train.cols != test.cols)
            throw DataError("dataset '" + name + "': train/test feature counts differ (" + std::to_string(train.cols) + " vs " +
                            std::to_string(test.cols) + ")");
        if (!test_labels.empty() && test_labels.size() != test.rows)
            throw DataError("dataset '" + name + "': label count " + std::to_string(test_labels.size()) +
                            " does not match test rows " + std::to_string(test.rows));
        for (double x : train.v)
            if (!std::isfinite(x)) throw DataError("dataset '" + name + "': non-finite value in train split");
        for (double x : test.v)
            if (!std::isfinite(x)) throw DataError("dataset '" + name + "': non-finite value in test split");
    }
};

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

struct CsvOptions {
    std::string label_column;                // empty: no labels expected
    std::map<std::string, int> label_map;    // e.g. {"Normal":0, "Attack":1} for string labels
    bool label_optional = false;             // tolerate a header without the label column
};

struct LoadedCsv {
    Matrix values;
    std::vector<std::uint8_t> labels;
    std::vector<std::string> feature_names;
    std::vector<std::size_t> rejected_rows; // 1-based data row numbers skipped for unparseable cells
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline bool parse_double(const std::string& cell, double& out) {
    const std::string t = trim(cell);
    if (t.empty()) return false;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && std::isfinite(out);
}

} // namespace detail

inline LoadedCsv load_csv(const std::string& path, const CsvOptions& options = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("CSV file is empty: " + path);

    LoadedCsv out;
    const std::vector<std::string> header = detail::split_csv_line(line);
    std::ptrdiff_t label_idx = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const std::string name = detail::trim(header[i]);
        if (!options.label_column.empty() && name == options.label_column) {
            label_idx = static_cast<std::ptrdiff_t>(i);
        } else {
            out.feature_names.push_back(name);
        }
    }
    if (!options.label_column.empty() && label_idx < 0 && !options.label_optional)
        throw DataError(path + ": label column '" + options.label_column + "' not found in header");
    const std::size_t k = out.feature_names.size();
    if (k == 0) throw DataError(path + ": no feature columns");

    std::vector<double> row(k);
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const std::vector<std::string> cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError(path + ": row " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size()));
        bool ok = true;
        std::size_t fi = 0;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (static_cast<std::ptrdiff_t>(i) == label_idx) continue;
            if (!detail::parse_double(cells[i], row[fi])) {
                ok = false;
                break;
            }
            ++fi;
        }
        if (!ok) {
            out.rejected_rows.push_back(lineno);
            continue;
        }
        if (label_idx >= 0) {
            const std::string cell = detail::trim(cells[static_cast<std::size_t>(label_idx)]);
            int label;
            if (!options.label_map.empty()) {
                auto it = options.label_map.find(cell);
                if (it == options.label_map.end())
                    throw DataError(path + ": row " + std::to_string(lineno) + " label '" + cell + "' not in label map");
                label = it->second;
            } else {
                double num;
                if (!detail::parse_double(cell, num) || (num != 0.0 && num != 1.0))
                    throw DataError(path + ": row " + std::to_string(lineno) + " label '" + cell +
                                    "' is not binary (use --label-map for string labels)");
                label = static_cast<int>(num);
            }
            if (label != 0 && label != 1)
                throw DataError(path + ": row " + std::to_string(lineno) + " label maps to " + std::to_string(label) +
                                ", expected 0 or 1");
            out.labels.push_back(static_cast<std::uint8_t>(label));
        }
        out.values.v.insert(out.values.v.end(), row.begin(), row.end());
        ++out.values.rows;
    }
    out.values.cols = k;
    return out;
}

inline void save_csv(const std::string& path, const Matrix& m, const std::vector<std::string>& feature_names,
                     const std::vector<std::uint8_t>* labels = nullptr, const std::string& label_column = "label") {
    if (feature_names.size() != m.cols) throw DataError("save_csv: feature name count does not match columns");
    if (labels && labels->size() != m.rows) throw DataError("save_csv: label count does not match rows");
    std::ofstream out(path);
    if (!out) throw DataError("cannot open file for writing: " + path);
    for (std::size_t c = 0; c < m.cols; ++c) out << (c ? "," : "") << feature_names[c];
    if (labels) out << "," << label_column;
    out << "\n";
    char buf[64];
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", m.at(r, c)); // round-trips doubles exactly
            out << (c ? "," : "") << buf;
        }
        if (labels) out << "," << static_cast<int>((*labels)[r]);
        out << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

// FNV-1a over the file bytes; recorded in run manifests.
inline std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file for hashing: " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 14];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) h = (h ^ static_cast<unsigned char>(buf[i])) * 1099511628211ULL;
        if (!in) break;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

// Per-feature min/max fitted on the train split only; test rows never feed
// the statistics, and out-of-range test values are left unclipped so large
// excursions stay visible to the detector.
struct NormStats {
    std::vector<double> mn, mx;

    static NormStats fit(const Matrix& train) {
        NormStats s;
        s.mn.assign(train.cols, std::numeric_limits<double>::infinity());
        s.mx.assign(train.cols, -std::numeric_limits<double>::infinity());
        for (std::size_t r = 0; r < train.rows; ++r)
            for (std::size_t c = 0; c < train.cols; ++c) {
                s.mn[c] = std::min(s.mn[c], train.at(r, c));
                s.mx[c] = std::max(s.mx[c], train.at(r, c));
            }
        return s;
    }

    void apply(Matrix& m) const {
        if (m.cols != mn.size()) throw DataError("normalize: stats fitted for a different feature count");
        for (std::size_t c = 0; c < m.cols; ++c) {
            const double range = mx[c] - mn[c];
            for (std::size_t r = 0; r < m.rows; ++r) {
                double& x = m.at(r, c);
                x = range > 0.0 ? (x - mn[c]) / range : 0.0; // constant features map to 0
            }
        }
    }
};

inline void normalize(SeriesDataset& ds) {
    const NormStats stats = NormStats::fit(ds.train);
    stats.apply(ds.train);
    stats.apply(ds.test);
}

// ---------------------------------------------------------------------------
// sliding windows
// ---------------------------------------------------------------------------

// Forecast-target-bearing windows: window starting at s covers rows [s, s+w)
// and its target is row s+w, so stride-1 windowing of n rows yields exactly
// n-w windows.
inline std::vector<std::size_t> window_starts(std::size_t n, std::size_t w, std::size_t stride = 1) {
    if (n <= w) throw DataError("need more rows (" + std::to_string(n) + ") than the window size " + std::to_string(w));
    if (stride == 0) throw ConfigError("window stride must be positive");
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + w < n; s += stride) starts.push_back(s);
    return starts;
}

struct WindowBatch {
    Tensor inputs;          // [B,k,w]
    Tensor forecast_target; // [B,k], row s+w
    Tensor recon_target;    // [B,w,k], the window itself
    std::vector<std::uint8_t> labels;     // label of the target row, when available
    std::vector<std::size_t> starts;
};

inline WindowBatch make_window_batch(const Matrix& m, const std::vector<std::size_t>& starts, std::size_t w,
                                     const std::vector<std::uint8_t>* labels = nullptr) {
    const std::size_t B = starts.size(), k = m.cols;
    WindowBatch batch;
    batch.starts = starts;
    std::vector<double> inputs(B * k * w), target(B * k), recon(B * w * k);
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t s = starts[b];
        if (s + w >= m.rows) throw DataError("window start " + std::to_string(s) + " has no forecast target");
        for (std::size_t t = 0; t < w; ++t) {
            const double* row = m.row(s + t);
            for (std::size_t c = 0; c < k; ++c) {
                inputs[(b * k + c) * w + t] = row[c];
                recon[(b * w + t) * k + c] = row[c];
            }
        }
        const double* trow = m.row(s + w);
        for (std::size_t c = 0; c < k; ++c) target[b * k + c] = trow[c];
        if (labels) batch.labels.push_back((*labels)[s + w]);
    }
    batch.inputs = Tensor::from({B, k, w}, std::move(inputs));
    batch.forecast_target = Tensor::from({B, k}, std::move(target));
    batch.recon_target = Tensor::from({B, w, k}, std::move(recon));
    return batch;
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

enum class AnomalyType { LevelShift, Amplitude, Frequency, CorrelationBreak };

inline const char* anomaly_type_name(AnomalyType t) {
    switch (t) {
        case AnomalyType::LevelShift: return "level-shift";
        case AnomalyType::Amplitude: return "amplitude";
        case AnomalyType::Frequency: return "frequency";
        case AnomalyType::CorrelationBreak: return "correlation-break";
    }
    return "?";
}

struct AnomalySegment {
    std::size_t start = 0; // test-relative, [start, end)
    std::size_t end = 0;
    AnomalyType type = AnomalyType::LevelShift;
};

struct SynthSpec {
    std::size_t features = 8;
    std::size_t rows = 20000;
    double test_fraction = 0.4;
    double anomaly_fraction = 0.10;          // of test rows
    std::vector<AnomalySegment> segments;    // empty: placed automatically
    std::uint64_t seed = 1;
};

namespace detail {

inline std::vector<AnomalySegment> auto_segments(const SynthSpec& spec, std::size_t n_test, Rng& rng) {
    std::vector<AnomalySegment> segs;
    const std::size_t budget = static_cast<std::size_t>(std::llround(spec.anomaly_fraction * static_cast<double>(n_test)));
    std::size_t used = 0;
    std::size_t cursor = 60 + rng.index(40); // leave a clean margin at the start
    int type_cycle = 0;
    while (used < budget) {
        std::size_t len = 30 + rng.index(61); // 30..90
        if (used + len > budget) len = budget - used;
        if (len == 0) break;
        if (cursor + len + 40 > n_test) break; // keep a clean tail
        AnomalySegment s;
        s.start = cursor;
        s.end = cursor + len;
        s.type = static_cast<AnomalyType>(type_cycle % 4);
        ++type_cycle;
        segs.push_back(s);
        used += len;
        cursor = s.end + 60 + rng.index(80); // enforce gaps between segments
    }
    return segs;
}

} // namespace detail

// k correlated noisy sinusoids; anomalies are injected into the test portion
// only and labels mark exactly the injected rows.
inline SeriesDataset synth_generate(const SynthSpec& spec) {
    if (spec.features < 1 || spec.rows < 100) throw ConfigError("synthetic dataset needs features >= 1 and rows >= 100");
    if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) throw ConfigError("test fraction must be in (0,1)");
    if (!(spec.anomaly_fraction >= 0.0 && spec.anomaly_fraction < 0.5)) throw ConfigError("anomaly fraction must be in [0,0.5)");

    const std::size_t n = spec.rows;
    const std::size_t n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(n)));
    const std::size_t n_train = n - n_test;
    const std::size_t k = spec.features;

    Rng rng(spec.seed);
    // per-feature mixing of two shared latent oscillators
    std::vector<double> amp1(k), amp2(k), phase1(k), phase2(k), offset(k), noise_sd(k);
    for (std::size_t j = 0; j < k; ++j) {
        amp1[j] = rng.uniform(0.4, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        amp2[j] = rng.uniform(0.2, 0.7) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        phase1[j] = rng.uniform(0.0, 2.0 * M_PI);
        phase2[j] = rng.uniform(0.0, 2.0 * M_PI);
        offset[j] = rng.uniform(-0.5, 0.5);
        noise_sd[j] = 0.05 * (std::abs(amp1[j]) + std::abs(amp2[j]));
    }
    const double period1 = 90.0, period2 = 217.0;

    std::vector<AnomalySegment> segments = spec.segments;
    if (segments.empty() && spec.anomaly_fraction > 0.0) {
        Rng seg_rng(Rng::mix(spec.seed, 0xA5));
        segments = detail::auto_segments(spec, n_test, seg_rng);
    }
    std::sort(segments.begin(), segments.end(), [](const AnomalySegment& a, const AnomalySegment& b) { return a.start < b.start; });
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& s = segments[i];
        if (s.start >= s.end || s.end > n_test)
            throw ConfigError("anomaly segment [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                              ") out of range for test length " + std::to_string(n_test));
        if (i > 0 && s.start < segments[i - 1].end)
            throw ConfigError("anomaly segments overlap at row " + std::to_string(s.start));
    }

    // per-segment affected features and extra parameters
    Rng inj_rng(Rng::mix(spec.seed, 0xB7));
    std::vector<std::vector<std::uint8_t>> affected(segments.size(), std::vector<std::uint8_t>(k, 0));
    std::vector<double> break_period(segments.size()), break_phase(segments.size());
    for (std::size_t si = 0; si < segments.size(); ++si) {
        std::size_t n_affected = std::max<std::size_t>(1, k / 2);
        std::vector<std::size_t> order(k);
        for (std::size_t j = 0; j < k; ++j) order[j] = j;
        for (std::size_t j = k; j > 1; --j) std::swap(order[j - 1], order[inj_rng.index(j)]);
        for (std::size_t j = 0; j < n_affected; ++j) affected[si][order[j]] = 1;
        break_period[si] = inj_rng.uniform(15.0, 40.0);
        break_phase[si] = inj_rng.uniform(0.0, 2.0 * M_PI);
    }

    SeriesDataset ds;
    ds.name = "synthetic";
    ds.train = Matrix(n_train, k);
    ds.test = Matrix(n_test, k);
    ds.test_labels.assign(n_test, 0);
    for (std::size_t j = 0; j < k; ++j) ds.feature_names.push_back("feature_" + std::to_string(j));

    Rng noise_rng(Rng::mix(spec.seed, 0xC9));
    double theta1 = 0.0, theta2 = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const bool in_test = t >= n_train;
        const std::size_t tt = in_test ? t - n_train : 0;
        const AnomalySegment* seg = nullptr;
        std::size_t seg_idx = 0;
        if (in_test)
            for (std::size_t si = 0; si < segments.size(); ++si)
                if (tt >= segments[si].start && tt < segments[si].end) {
                    seg = &segments[si];
                    seg_idx = si;
                    break;
                }

        const double speed = (seg && seg->type == AnomalyType::Frequency) ? 3.0 : 1.0;
        theta1 += 2.0 * M_PI / period1 * speed;
        theta2 += 2.0 * M_PI / period2 * speed;

        for (std::size_t j = 0; j < k; ++j) {
            const bool hit = seg && (seg->type == AnomalyType::Frequency || affected[seg_idx][j]);
            double osc1 = amp1[j] * std::sin(theta1 + phase1[j]);
            double osc2 = amp2[j] * std::sin(theta2 + phase2[j]);
            double value;
            if (hit && seg->type == AnomalyType::CorrelationBreak) {
                value = offset[j] + (std::abs(amp1[j]) + std::abs(amp2[j])) *
                                        std::sin(2.0 * M_PI * static_cast<double>(tt) / break_period[seg_idx] + break_phase[seg_idx]);
            } else if (hit && seg->type == AnomalyType::Amplitude) {
                value = offset[j] + 2.5 * (osc1 + osc2);
            } else if (hit && seg->type == AnomalyType::LevelShift) {
                value = offset[j] + osc1 + osc2 + 0.7 * (std::abs(amp1[j]) + std::abs(amp2[j]));
            } else {
                value = offset[j] + osc1 + osc2;
            }
            value += noise_sd[j] * noise_rng.normal();
            if (in_test)
                ds.test.at(tt, j) = value;
            else
                ds.train.at(t, j) = value;
        }
        if (seg) ds.test_labels[tt] = 1;
    }
    ds.validate();
    return ds;
}

} // namespace slmr
