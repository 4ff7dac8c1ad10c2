#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "slmr/model.hpp"

namespace slmr {

// ---------------------------------------------------------------------------
// inference score
// ---------------------------------------------------------------------------

// Per-timestamp anomaly scores for test timestamps t in [w, n). The forecast
// term comes from the window [t-w, t) predicting row t; the reconstruction
// term from the window [t-w+1, t+1) restricted to its final row. Both are
// root-of-summed-squares over features; the combined score is
//   (forecast + gamma * reconstruction) / k.
// The raw terms are kept so gamma can be re-weighted without re-running the
// model.
struct ScoreSeries {
    std::size_t first_timestamp = 0; // == window size
    std::size_t features = 0;
    double gamma = 1.0;
    std::vector<double> forecast_term;
    std::vector<double> recon_term;

    std::size_t size() const { return forecast_term.size(); }

    std::vector<double> values() const {
        std::vector<double> out(size());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = (forecast_term[i] + gamma * recon_term[i]) / static_cast<double>(features);
        return out;
    }
};

struct ScoreOptions {
    std::size_t batch = 256;
    double gamma = 1.0;
    bool recon_full_window = false; // ablation: reconstruction term over the whole window
};

inline ScoreSeries score(SlmrModel& m, const Matrix& test, const ScoreOptions& opt = {}) {
    if (test.cols != m.config.features) throw DataError("test data feature count does not match the model");
    if (!m.params_finite()) throw NumericError("model parameters are not finite; cannot score");
    const std::size_t w = m.config.window, k = m.config.features, n = test.rows;
    if (n <= w) throw DataError("test split needs more rows than the window size");

    ScoreSeries s;
    s.first_timestamp = w;
    s.features = k;
    s.gamma = opt.gamma;
    s.forecast_term.assign(n - w, 0.0);
    s.recon_term.assign(n - w, 0.0);

    NoGradGuard ng;
    std::vector<std::size_t> starts(n - w + 1);
    std::iota(starts.begin(), starts.end(), 0);
    for (std::size_t off = 0; off < starts.size(); off += opt.batch) {
        const std::size_t hi = std::min(starts.size(), off + opt.batch);
        const std::size_t B = hi - off;
        std::vector<double> inputs(B * k * w);
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t p = starts[off + b];
            for (std::size_t t = 0; t < w; ++t) {
                const double* row = test.row(p + t);
                for (std::size_t c = 0; c < k; ++c) inputs[(b * k + c) * w + t] = row[c];
            }
        }
        ModelOutputs out = forward(m, Tensor::from({B, k, w}, std::move(inputs)));
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t p = starts[off + b];
            if (m.config.use_forecast && p + w < n) {
                const double* truth = test.row(p + w);
                double acc = 0.0;
                for (std::size_t c = 0; c < k; ++c) {
                    const double d = out.forecast.at(b, c) - truth[c];
                    acc += d * d;
                }
                s.forecast_term[p] = std::sqrt(acc);
            }
            if (m.config.use_reconstruct && p >= 1) {
                double acc = 0.0;
                if (opt.recon_full_window) {
                    for (std::size_t t = 0; t < w; ++t) {
                        const double* truth = test.row(p + t);
                        for (std::size_t c = 0; c < k; ++c) {
                            const double d = out.recon.at(b, t, c) - truth[c];
                            acc += d * d;
                        }
                    }
                } else {
                    const double* truth = test.row(p + w - 1);
                    for (std::size_t c = 0; c < k; ++c) {
                        const double d = out.recon.at(b, w - 1, c) - truth[c];
                        acc += d * d;
                    }
                }
                s.recon_term[p - 1] = std::sqrt(acc);
            }
        }
    }
    for (double v : s.forecast_term)
        if (!std::isfinite(v)) throw NumericError("non-finite forecast score");
    for (double v : s.recon_term)
        if (!std::isfinite(v)) throw NumericError("non-finite reconstruction score");
    return s;
}

// ---------------------------------------------------------------------------
// point adjustment
// ---------------------------------------------------------------------------

struct Segment {
    std::size_t begin = 0; // [begin, end)
    std::size_t end = 0;
    std::size_t length() const { return end - begin; }
    bool overlaps(const Segment& o) const { return begin < o.end && o.begin < end; }
};

inline std::vector<Segment> find_segments(const std::vector<std::uint8_t>& flags) {
    std::vector<Segment> out;
    std::size_t i = 0;
    while (i < flags.size()) {
        if (flags[i]) {
            Segment s{i, i};
            while (i < flags.size() && flags[i]) ++i;
            s.end = i;
            out.push_back(s);
        } else {
            ++i;
        }
    }
    return out;
}

// If any predicted point falls inside a true anomaly segment, the whole
// segment counts as predicted. Predictions outside true segments are left
// untouched.
inline std::vector<std::uint8_t> point_adjust(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth) {
    if (pred.size() != truth.size())
        throw DataError("point_adjust: prediction length " + std::to_string(pred.size()) + " != truth length " +
                        std::to_string(truth.size()));
    std::vector<std::uint8_t> adjusted = pred;
    for (const Segment& s : find_segments(truth)) {
        bool hit = false;
        for (std::size_t i = s.begin; i < s.end && !hit; ++i) hit = pred[i] != 0;
        if (hit)
            for (std::size_t i = s.begin; i < s.end; ++i) adjusted[i] = 1;
    }
    return adjusted;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::vector<Segment> true_segments;
    std::vector<Segment> detected_segments; // segments of the adjusted prediction
    std::vector<std::uint8_t> adjusted_pred;
};

// Point-adjusted confusion counts and P/R/F1 for `pred = score >= threshold`;
// the threshold is the smallest score classified anomalous.
inline EvalReport evaluate_threshold(const std::vector<double>& scores, const std::vector<std::uint8_t>& truth,
                                     double threshold) {
    if (scores.size() != truth.size()) throw DataError("evaluate_threshold: score/label length mismatch");
    std::vector<std::uint8_t> pred(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= threshold ? 1 : 0;
    EvalReport r;
    r.threshold = threshold;
    r.adjusted_pred = point_adjust(pred, truth);
    r.true_segments = find_segments(truth);
    r.detected_segments = find_segments(r.adjusted_pred);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool p = r.adjusted_pred[i] != 0, t = truth[i] != 0;
        if (p && t)
            ++r.tp;
        else if (p && !t)
            ++r.fp;
        else if (!p && t)
            ++r.fn;
        else
            ++r.tn;
    }
    r.precision = (r.tp + r.fp) ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
    r.recall = (r.tp + r.fn) ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
    r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

// Exhaustive best-F1 search over all unique score values plus +infinity,
// with ties broken toward higher precision. Implemented as a descending
// sweep: a true segment flips to fully-detected once the threshold reaches
// its max score, and outside points contribute false positives one unique
// value at a time. This is exactly the brute-force result because
// point-adjusted counts only depend on those two quantities.
inline EvalReport best_f1_threshold(const std::vector<double>& scores, const std::vector<std::uint8_t>& truth) {
    if (scores.size() != truth.size()) throw DataError("best_f1_threshold: score/label length mismatch");
    const std::vector<Segment> segments = find_segments(truth);
    if (segments.empty()) throw DataError("best_f1_threshold: truth contains no anomaly segments; best-F1 is undefined");

    std::size_t anomaly_total = 0;
    for (const Segment& s : segments) anomaly_total += s.length();

    // per-segment max score, and outside scores
    std::vector<std::pair<double, std::size_t>> seg_max; // (max score, segment length)
    for (const Segment& s : segments) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = s.begin; i < s.end; ++i) mx = std::max(mx, scores[i]);
        seg_max.emplace_back(mx, s.length());
    }
    std::sort(seg_max.begin(), seg_max.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    std::vector<double> outside;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (!truth[i]) outside.push_back(scores[i]);
    std::sort(outside.begin(), outside.end(), std::greater<>());

    std::vector<double> uniques = scores;
    std::sort(uniques.begin(), uniques.end(), std::greater<>());
    uniques.erase(std::unique(uniques.begin(), uniques.end()), uniques.end());

    double best_threshold = std::numeric_limits<double>::infinity();
    double best_f1 = 0.0, best_precision = 0.0;

    std::size_t seg_idx = 0, out_idx = 0, tp = 0, fp = 0;
    auto consider = [&](double threshold) {
        // advance: everything at or above `threshold` is predicted
        while (seg_idx < seg_max.size() && seg_max[seg_idx].first >= threshold) tp += seg_max[seg_idx++].second;
        while (out_idx < outside.size() && outside[out_idx] >= threshold) ++fp, ++out_idx;
        const double precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double recall = static_cast<double>(tp) / static_cast<double>(anomaly_total);
        const double f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        if (f1 > best_f1 || (f1 == best_f1 && precision > best_precision)) {
            best_f1 = f1;
            best_precision = precision;
            best_threshold = threshold;
        }
    };
    consider(std::numeric_limits<double>::infinity());
    for (double u : uniques) consider(u);

    return evaluate_threshold(scores, truth, best_threshold);
}

// ---------------------------------------------------------------------------
// localization
// ---------------------------------------------------------------------------

struct SegmentRecord {
    Segment segment;
    bool matched = false;
};

struct LocalizationReport {
    std::vector<SegmentRecord> truth;    // matched: overlapped by some detection
    std::vector<SegmentRecord> detected; // matched: overlaps some true segment

    std::size_t hits() const {
        std::size_t n = 0;
        for (const auto& r : truth) n += r.matched;
        return n;
    }
    std::size_t misses() const { return truth.size() - hits(); }
    std::size_t false_alarms() const {
        std::size_t n = 0;
        for (const auto& r : detected) n += !r.matched;
        return n;
    }
};

inline LocalizationReport localize(const std::vector<std::uint8_t>& adjusted_pred, const std::vector<std::uint8_t>& truth) {
    LocalizationReport rep;
    const auto t_segs = find_segments(truth);
    const auto p_segs = find_segments(adjusted_pred);
    for (const Segment& s : t_segs) rep.truth.push_back({s, false});
    for (const Segment& s : p_segs) rep.detected.push_back({s, false});
    for (auto& tr : rep.truth)
        for (auto& pr : rep.detected)
            if (tr.segment.overlaps(pr.segment)) {
                tr.matched = true;
                pr.matched = true;
            }
    return rep;
}

// ---------------------------------------------------------------------------
// artifact export
// ---------------------------------------------------------------------------

inline void write_scores_csv(const std::string& path, const ScoreSeries& s, const std::vector<std::uint8_t>* pred = nullptr,
                             const std::vector<std::uint8_t>* truth = nullptr) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out << "timestamp,score,forecast_term,recon_term";
    if (pred) out << ",pred";
    if (truth) out << ",truth";
    out << "\n";
    const std::vector<double> vals = s.values();
    char buf[64];
    for (std::size_t i = 0; i < vals.size(); ++i) {
        out << (s.first_timestamp + i);
        std::snprintf(buf, sizeof(buf), ",%.17g", vals[i]);
        out << buf;
        std::snprintf(buf, sizeof(buf), ",%.17g", s.forecast_term[i]);
        out << buf;
        std::snprintf(buf, sizeof(buf), ",%.17g", s.recon_term[i]);
        out << buf;
        if (pred) out << "," << static_cast<int>((*pred)[i]);
        if (truth) out << "," << static_cast<int>((*truth)[i]);
        out << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

inline nlohmann::json report_to_json(const EvalReport& r, const LocalizationReport& loc) {
    nlohmann::json j;
    j["threshold"] = r.threshold;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    j["tp"] = r.tp;
    j["fp"] = r.fp;
    j["fn"] = r.fn;
    j["tn"] = r.tn;
    auto seg_array = [](const std::vector<SegmentRecord>& recs) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& rec : recs)
            a.push_back({{"begin", rec.segment.begin}, {"end", rec.segment.end}, {"matched", rec.matched}});
        return a;
    };
    j["true_segments"] = seg_array(loc.truth);
    j["detected_segments"] = seg_array(loc.detected);
    j["segment_hits"] = loc.hits();
    j["segment_misses"] = loc.misses();
    j["segment_false_alarms"] = loc.false_alarms();
    return j;
}

} // namespace slmr
