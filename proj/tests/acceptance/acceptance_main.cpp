// Acceptance suite: runs every release criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "slmr/slmr.hpp"

using namespace slmr;
using Clock = std::chrono::steady_clock;

namespace {

struct Criterion {
    std::string name;
    bool pass = false;
    std::string details;
};

std::vector<Criterion>& results() {
    static std::vector<Criterion> r;
    return r;
}

void report(const std::string& name, bool pass, const std::string& details) {
    results().push_back({name, pass, details});
    std::printf("%s  %-24s %s\n", pass ? "PASS" : "FAIL", name.c_str(), details.c_str());
    std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration_cast<std::chrono::duration<double>>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

// ---------------------------------------------------------------------------
// criterion 1: gradient suite
// ---------------------------------------------------------------------------

void criterion_gradients() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string worst_site = "none";
    auto track = [&](const std::string& site, double err) {
        if (err > worst) {
            worst = err;
            worst_site = site;
        }
    };

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(2000 + seed);

        // conv1d, all three variants
        for (auto spec : {ConvSpec::gamma(2, 3), ConvSpec::beta(2, 2), ConvSpec::alpha(2, 2, 2)}) {
            Conv1dParams p = Conv1dParams::init(spec, rng);
            Tensor x = Tensor::from({2, 2, 6}, oracle::random_vec(24, rng), true);
            auto f = [&](Tensor& t) { return mean_all(mul(conv1d(t, p), conv1d(t, p))); };
            track("conv1d/input", grad_check(f, x, 1e-5));
            Tensor fixed = Tensor::from({2, 2, 6}, oracle::random_vec(24, rng));
            auto g = [&](Tensor&) { return mean_all(mul(conv1d(fixed, p), conv1d(fixed, p))); };
            track("conv1d/weight", grad_check(g, p.weight, 1e-5));
            track("conv1d/bias", grad_check(g, p.bias, 1e-5));
        }

        // GRU
        {
            GruParams p = GruParams::init(2, 3, rng);
            Tensor fixed = Tensor::from({2, 4, 2}, oracle::random_vec(16, rng));
            auto f = [&](Tensor&) {
                auto [outputs, hT] = gru_forward(fixed, p);
                return mean_all(mul(outputs, outputs));
            };
            for (Tensor* t : {&p.wz, &p.uz, &p.bz, &p.wr, &p.ur, &p.br, &p.wn, &p.un, &p.bn})
                track("gru/param", grad_check(f, *t, 1e-5));
            Tensor x = Tensor::from({2, 4, 2}, oracle::random_vec(16, rng), true);
            auto g = [&](Tensor& t) {
                auto [outputs, hT] = gru_forward(t, p);
                return mean_all(mul(outputs, outputs));
            };
            track("gru/input", grad_check(g, x, 1e-5));
        }

        // SENet1D
        {
            SenetParams p = SenetParams::init(rng);
            Tensor x = Tensor::from({2, 3, 5}, oracle::random_vec(30, rng), true);
            auto f = [&](Tensor& t) { return mean_all(mul(senet1d(t, p), senet1d(t, p))); };
            track("senet/input", grad_check(f, x, 1e-5));
            Tensor fixed = Tensor::from({2, 3, 5}, oracle::random_vec(30, rng));
            auto g = [&](Tensor&) { return mean_all(mul(senet1d(fixed, p), senet1d(fixed, p))); };
            track("senet/conv1.w", grad_check(g, p.conv1.weight, 1e-5));
            track("senet/conv2.w", grad_check(g, p.conv2.weight, 1e-5));
        }

        // dense
        {
            DenseParams p = DenseParams::init(3, 2, rng);
            Tensor x = Tensor::from({2, 3}, oracle::random_vec(6, rng), true);
            auto f = [&](Tensor& t) { return mean_all(mul(dense(t, p), dense(t, p))); };
            track("dense/input", grad_check(f, x, 1e-5));
            Tensor fixed = Tensor::from({2, 3}, oracle::random_vec(6, rng));
            auto g = [&](Tensor&) { return mean_all(mul(dense(fixed, p), dense(fixed, p))); };
            track("dense/weight", grad_check(g, p.weight, 1e-5));
            track("dense/bias", grad_check(g, p.bias, 1e-5));
        }

        // full SLMR loss, every parameter
        {
            SlmrConfig cfg;
            cfg.window = 8;
            cfg.features = 2;
            cfg.channels = 4;
            cfg.groups = 2;
            cfg.hidden = 3;
            SlmrModel m = SlmrModel::init(cfg, 3000 + seed);
            Tensor x = Tensor::from({2, 2, 8}, oracle::random_vec(32, rng));
            WindowBatch batch;
            batch.forecast_target = Tensor::from({2, 2}, oracle::random_vec(4, rng));
            batch.recon_target = Tensor::from({2, 8, 2}, oracle::random_vec(32, rng));
            auto f = [&](Tensor&) { return loss(m, forward(m, x), batch).total; };
            for (auto& [name, t] : m.named_params()) track("slmr/" + name, grad_check(f, t, 1e-5));
        }
    }

    const double elapsed = seconds_since(t0);
    const bool pass = worst < 1e-4 && elapsed < 60.0;
    report("gradient-suite", pass,
           fmt("max rel err %.3g (worst at %s), 20 seeds, %.1fs (budget 60s)", worst, worst_site.c_str(), elapsed));
}

// ---------------------------------------------------------------------------
// criterion 2: oracle equivalence, 100 cases each at 1e-6 absolute
// ---------------------------------------------------------------------------

void criterion_oracles() {
    double worst = 0.0;
    std::string worst_op = "none";
    auto track = [&](const std::string& op, double diff) {
        if (diff > worst) {
            worst = diff;
            worst_op = op;
        }
    };
    auto max_abs_diff = [](const std::vector<double>& a, const std::vector<double>& b) {
        double d = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
        return d;
    };

    for (std::uint64_t c = 0; c < 100; ++c) {
        Rng rng(4000 + c);

        // conv1d with randomized small shapes, every variant
        {
            const std::size_t B = 1 + rng.index(3), Cin = 1 + rng.index(3), Cout = 1 + rng.index(3), T = 3 + rng.index(14);
            ConvSpec spec;
            const int pick = static_cast<int>(rng.index(3));
            if (pick == 0)
                spec = ConvSpec::gamma(Cin, Cout);
            else if (pick == 1)
                spec = ConvSpec::beta(Cin, Cout);
            else
                spec = ConvSpec::alpha(1 + rng.index(3), Cin, Cout);
            Conv1dParams p = Conv1dParams::init(spec, rng);
            std::vector<double> xv = oracle::random_vec(B * Cin * T, rng);
            Tensor out = conv1d(Tensor::from({B, Cin, T}, xv), p);
            track("conv1d", max_abs_diff(out.data(), oracle::conv1d(xv, p, B, T)));
        }

        // GRU over a short sequence
        {
            const std::size_t B = 1 + rng.index(3), T = 1 + rng.index(6), D = 1 + rng.index(4), H = 1 + rng.index(5);
            GruParams p = GruParams::init(D, H, rng);
            std::vector<double> xv = oracle::random_vec(B * T * D, rng);
            auto [outputs, hT] = gru_forward(Tensor::from({B, T, D}, xv), p);
            std::vector<double> h(B * H, 0.0);
            std::vector<double> expect;
            for (std::size_t t = 0; t < T; ++t) {
                std::vector<double> xt(B * D);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t d = 0; d < D; ++d) xt[b * D + d] = xv[(b * T + t) * D + d];
                h = oracle::gru_step(xt, h, p, B);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t j = 0; j < H; ++j) expect.push_back(h[b * H + j]);
            }
            // reorder [t][b][j] -> [b][t][j]
            std::vector<double> got;
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t j = 0; j < H; ++j) got.push_back(outputs.at(b, t, j));
            track("gru", max_abs_diff(got, expect));
        }

        // multi-scale cascade
        {
            const std::size_t B = 1 + rng.index(2), C = 1 + rng.index(4), T = 4 + rng.index(13);
            const std::size_t groups = 2 + rng.index(3);
            const std::size_t mid = groups * (1 + rng.index(3));
            MultiscaleParams p = MultiscaleParams::init(C, mid, groups, rng);
            std::vector<double> xv = oracle::random_vec(B * C * T, rng);
            Tensor out = multiscale_conv(Tensor::from({B, C, T}, xv), p);
            track("multiscale", max_abs_diff(out.data(), oracle::multiscale(xv, p, B, T)));
        }

        // SENet1D
        {
            const std::size_t B = 1 + rng.index(3), C = 1 + rng.index(6), T = 2 + rng.index(9);
            SenetParams p = SenetParams::init(rng);
            std::vector<double> xv = oracle::random_vec(B * C * T, rng);
            Tensor out = senet1d(Tensor::from({B, C, T}, xv), p);
            track("senet", max_abs_diff(out.data(), oracle::senet(xv, p, B, C, T)));
        }

        // split-interact, both path kinds
        {
            const std::size_t B = 1 + rng.index(2), C = 1 + rng.index(3), w = 2 * (3 + rng.index(6));
            const bool cascade = rng.uniform() < 0.5;
            PathConv even_path = PathConv::init(cascade, C, 4, 2, rng);
            PathConv odd_path = PathConv::init(cascade, C, 4, 2, rng);
            std::vector<double> xv = oracle::random_vec(B * C * w, rng);
            Tensor out = split_interact(Tensor::from({B, C, w}, xv), even_path, odd_path);
            track("split_interact", max_abs_diff(out.data(), oracle::split_interact(xv, even_path, odd_path, B, C, w)));
        }
    }

    report("oracle-equivalence", worst < 1e-6, fmt("max abs diff %.3g (worst at %s), 100 cases per op", worst, worst_op.c_str()));
}

// ---------------------------------------------------------------------------
// criterion 3: mask statistics at the stated defaults
// ---------------------------------------------------------------------------

void criterion_mask_stats() {
    MaskSpec spec; // mean_len 3, ratio 0.1
    const MaskMatrix m = generate_mask(spec, 125000, 8, 77);

    std::size_t zeros = 0, masked_runs = 0;
    double masked_total = 0.0;
    for (std::size_t f = 0; f < m.cols; ++f) {
        std::size_t t = 0;
        while (t < m.rows) {
            const std::uint8_t v = m.at(t, f);
            std::size_t len = 0;
            while (t < m.rows && m.at(t, f) == v) ++len, ++t;
            if (v == 0) {
                zeros += len;
                masked_total += static_cast<double>(len);
                ++masked_runs;
            }
        }
    }
    const double fraction = static_cast<double>(zeros) / static_cast<double>(m.values.size());
    const double mean_run = masked_total / static_cast<double>(masked_runs);
    const bool pass = std::abs(fraction - 0.10) <= 0.01 && std::abs(mean_run - 3.0) <= 0.1;
    report("mask-statistics", pass, fmt("1e6 cells: masked fraction %.4f (0.10 +/- 0.01), mean run %.3f (3.0 +/- 0.1)", fraction, mean_run));
}

// ---------------------------------------------------------------------------
// criterion 4: threshold search vs brute force + point-adjust fixtures
// ---------------------------------------------------------------------------

void criterion_threshold() {
    // hand-built fixtures for the adjustment rule
    bool fixtures_ok = true;
    {
        const std::vector<std::uint8_t> truth{0, 1, 1, 1, 0};
        const std::vector<std::uint8_t> pred{0, 0, 1, 0, 0};
        fixtures_ok &= point_adjust(pred, truth) == std::vector<std::uint8_t>{0, 1, 1, 1, 0};
        fixtures_ok &= point_adjust({0, 0, 0, 0, 0}, truth) == std::vector<std::uint8_t>{0, 0, 0, 0, 0};
        fixtures_ok &= point_adjust({1, 0, 0, 0, 1}, truth) == std::vector<std::uint8_t>{1, 1, 1, 1, 1};
        const std::vector<std::uint8_t> truth2{0, 1, 1, 0, 1};
        fixtures_ok &= point_adjust({1, 0, 0, 0, 0}, truth2) == std::vector<std::uint8_t>{1, 0, 0, 0, 0};
    }

    std::size_t mismatches = 0;
    Rng rng(6000);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 20 + rng.index(481); // lengths up to 500
        std::vector<double> scores(n);
        for (double& s : scores) s = rng.uniform(0.0, 3.0);
        if (trial % 4 == 0)
            for (double& s : scores) s = std::floor(s * 5.0) / 5.0; // ties
        std::vector<std::uint8_t> truth(n, 0);
        for (auto& v : truth) v = rng.uniform() < 0.2 ? 1 : 0;
        bool any = false;
        for (auto v : truth) any |= v;
        if (!any) truth[rng.index(n)] = 1;

        const EvalReport fast = best_f1_threshold(scores, truth);
        const oracle::F1Result slow = oracle::best_f1(scores, truth);
        if (std::abs(fast.f1 - slow.f1) > 1e-12 || fast.threshold != slow.threshold) ++mismatches;
    }
    report("threshold-correctness", fixtures_ok && mismatches == 0,
           fmt("%zu/1000 brute-force mismatches; adjustment fixtures %s", mismatches, fixtures_ok ? "ok" : "FAILED"));
}

// ---------------------------------------------------------------------------
// criterion 5: inference score arithmetic
// ---------------------------------------------------------------------------

void criterion_score_arithmetic() {
    bool ok = true;
    std::string detail;

    // zero residuals -> score exactly 0 (zero-weight model on zero data)
    {
        SlmrConfig cfg;
        cfg.window = 8;
        cfg.features = 2;
        cfg.channels = 4;
        cfg.groups = 2;
        cfg.hidden = 3;
        SlmrModel m = SlmrModel::init(cfg, 1);
        for (auto& [name, t] : m.named_params()) std::fill(t.data().begin(), t.data().end(), 0.0);
        Matrix zerodata(30, 2);
        ScoreSeries s = score(m, zerodata);
        for (double v : s.values()) ok &= v == 0.0;
        if (!ok) detail = "zero-residual case returned nonzero scores";
    }

    // gamma = 0 leaves only the forecast term
    if (ok) {
        SlmrConfig cfg;
        cfg.window = 8;
        cfg.features = 2;
        cfg.channels = 4;
        cfg.groups = 2;
        cfg.hidden = 3;
        SlmrModel m = SlmrModel::init(cfg, 2);
        Rng rng(3);
        Matrix data(40, 2);
        for (double& v : data.v) v = rng.uniform();
        ScoreOptions opt;
        opt.gamma = 0.0;
        ScoreSeries s = score(m, data, opt);
        const auto vals = s.values();
        for (std::size_t i = 0; i < vals.size(); ++i) ok &= vals[i] == s.forecast_term[i] / 2.0;
        if (!ok) detail = "gamma=0 case included a reconstruction contribution";
    }

    // 3-4-5: forecast residuals (3,4) and last-step reconstruction norm 5 on
    // k=2 with gamma 1 combine to (5 + 5)/2 = 5
    if (ok) {
        ScoreSeries s;
        s.first_timestamp = 8;
        s.features = 2;
        s.gamma = 1.0;
        s.forecast_term = {std::sqrt(3.0 * 3.0 + 4.0 * 4.0)};
        s.recon_term = {5.0};
        ok &= s.values()[0] == 5.0;
        if (!ok) detail = "3-4-5 case did not combine to 5";
    }

    report("score-arithmetic", ok, ok ? "zero-residual, gamma=0, and 3-4-5 cases hold exactly" : detail);
}

// ---------------------------------------------------------------------------
// criterion 6: desk-scale end-to-end with ablations
// ---------------------------------------------------------------------------

struct VariantResult {
    std::string name;
    double mean_f1 = 0.0;
    bool trained = true;
    std::string error;
};

double run_once(const SeriesDataset& base, SlmrConfig cfg, std::uint64_t seed) {
    SeriesDataset ds = base; // copy: normalization mutates
    normalize(ds);
    cfg.features = ds.features();

    SlmrModel model = SlmrModel::init(cfg, seed);
    TrainOptions opt;
    opt.lr = 3e-3;
    opt.batch = 256;
    opt.epochs = 6;
    opt.stride = 3;
    opt.val_fraction = 0.1;
    opt.seed = seed;

    train(model, ds.train, opt);

    ScoreOptions sopt;
    sopt.gamma = cfg.gamma_score;
    ScoreSeries s = score(model, ds.test, sopt);
    std::vector<std::uint8_t> truth(ds.test_labels.begin() + static_cast<std::ptrdiff_t>(cfg.window),
                                    ds.test_labels.end());
    return best_f1_threshold(s.values(), truth).f1;
}

void criterion_desk_scale() {
    const auto t0 = Clock::now();

    SynthSpec spec; // defaults: k=8, n=20000, 10% test anomalies
    const SeriesDataset base = synth_generate(spec);

    SlmrConfig full;
    full.window = 100;
    full.channels = 16;
    full.groups = 4;
    full.hidden = 32;

    struct Variant {
        std::string name;
        void (*mutate)(SlmrConfig&);
    };
    const std::vector<Variant> variants{
        {"full", [](SlmrConfig&) {}},
        {"w/o mask", [](SlmrConfig& c) { c.use_mask = false; }},
        {"w/o odd_even", [](SlmrConfig& c) { c.use_odd_even = false; }},
        {"w/o multi_cnn", [](SlmrConfig& c) { c.use_multi_cnn = false; }},
        {"w/o senet", [](SlmrConfig& c) { c.use_senet = false; }},
        {"w/o forecast", [](SlmrConfig& c) { c.use_forecast = false; }},
        {"w/o reconstruct", [](SlmrConfig& c) { c.use_reconstruct = false; }},
    };
    const std::vector<std::uint64_t> seeds{1, 2, 3};

    std::vector<VariantResult> table;
    for (const auto& variant : variants) {
        VariantResult vr;
        vr.name = variant.name;
        double acc = 0.0;
        for (std::uint64_t seed : seeds) {
            SlmrConfig cfg = full;
            variant.mutate(cfg);
            try {
                const double f1 = run_once(base, cfg, seed);
                acc += f1;
                std::fprintf(stderr, "  [desk] %-16s seed %llu  F1 %.4f  (%.0fs elapsed)\n", variant.name.c_str(),
                             static_cast<unsigned long long>(seed), f1, seconds_since(t0));
            } catch (const std::exception& e) {
                vr.trained = false;
                vr.error = e.what();
                break;
            }
        }
        vr.mean_f1 = acc / static_cast<double>(seeds.size());
        table.push_back(vr);
    }

    const double elapsed = seconds_since(t0);
    const double full_f1 = table[0].mean_f1;
    bool all_trained = true;
    std::size_t within = 0;
    std::string detail = fmt("full F1 %.4f; ", full_f1);
    for (std::size_t i = 1; i < table.size(); ++i) {
        const auto& vr = table[i];
        if (!vr.trained) {
            all_trained = false;
            detail += vr.name + " FAILED(" + vr.error + "); ";
            continue;
        }
        const bool ok = vr.mean_f1 <= full_f1 + 0.02;
        within += ok;
        detail += fmt("%s %.4f%s; ", vr.name.c_str(), vr.mean_f1, ok ? "" : "(+)");
    }
    detail += fmt("%zu/6 within +0.02; %.0fs (budget 1800s)", within, elapsed);

    const bool pass = all_trained && full_f1 >= 0.90 && within >= 4 && elapsed < 1800.0;
    report("desk-scale-e2e", pass, detail);
}

// ---------------------------------------------------------------------------
// criterion 7: paper-scale note (SWaT sanity run only when data is provided)
// ---------------------------------------------------------------------------

void criterion_paper_scale() {
    const char* train_env = std::getenv("SLMR_SWAT_TRAIN");
    const char* test_env = std::getenv("SLMR_SWAT_TEST");
    const std::string train_path = train_env ? train_env : "data/swat/train.csv";
    const std::string test_path = test_env ? test_env : "data/swat/test.csv";
    std::ifstream train_in(train_path), test_in(test_path);
    if (!train_in || !test_in) {
        report("paper-scale-note", true,
               "skipped: SWaT CSVs not provided (see README for the stretch-goal commands); "
               "published-scale results are documented, not asserted");
        return;
    }

    // Sanity band: one run must complete and reach point-adjusted F1 >= 0.80.
    CsvOptions copt;
    copt.label_column = "label";
    copt.label_map = {{"Normal", 0}, {"Attack", 1}};
    copt.label_optional = true;
    LoadedCsv train_csv = load_csv(train_path, copt);
    LoadedCsv test_csv = load_csv(test_path, copt);
    if (test_csv.labels.empty()) {
        report("paper-scale-note", false, "SWaT test CSV lacks a usable label column");
        return;
    }
    SeriesDataset ds;
    ds.name = "swat";
    ds.train = std::move(train_csv.values);
    ds.test = std::move(test_csv.values);
    ds.test_labels = std::move(test_csv.labels);
    ds.feature_names = train_csv.feature_names;
    normalize(ds);

    SlmrConfig cfg;
    cfg.window = 100;
    cfg.channels = 16;
    cfg.groups = 4;
    cfg.hidden = 32;
    cfg.features = ds.features();
    SlmrModel model = SlmrModel::init(cfg, 1);
    TrainOptions opt;
    opt.epochs = 3;
    opt.stride = 20; // desk-scale subsample of the 450k-row train split
    opt.seed = 1;
    train(model, ds.train, opt);

    ScoreSeries s = score(model, ds.test);
    std::vector<std::uint8_t> truth(ds.test_labels.begin() + static_cast<std::ptrdiff_t>(cfg.window),
                                    ds.test_labels.end());
    const EvalReport r = best_f1_threshold(s.values(), truth);
    report("paper-scale-note", r.f1 >= 0.80, fmt("SWaT sanity run: point-adjusted F1 %.4f (band >= 0.80)", r.f1));
}

} // namespace

int main() {
    std::printf("slmr acceptance suite\n");
    criterion_gradients();
    criterion_oracles();
    criterion_mask_stats();
    criterion_threshold();
    criterion_score_arithmetic();
    criterion_desk_scale();
    criterion_paper_scale();

    std::size_t fails = 0;
    for (const auto& c : results()) fails += !c.pass;
    std::printf("%zu/%zu criteria passed\n", results().size() - fails, results().size());
    return fails == 0 ? 0 : 1;
}
