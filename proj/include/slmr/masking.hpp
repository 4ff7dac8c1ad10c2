#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slmr/rng.hpp"
#include "slmr/tensor.hpp"

namespace slmr {

// Geometric-segment mask parameters. Runs of masked cells (zeros) stop with
// probability 1/mean_len per step; runs of unmasked cells (ones) stop with
// probability ratio / (mean_len * (1 - ratio)), which makes the long-run
// masked fraction equal to ratio and the mean unmasked run
// mean_len * (1 - ratio) / ratio.
struct MaskSpec {
    double mean_len = 3.0; // mean masked-segment length, >= 1
    double ratio = 0.1;    // masked fraction, in (0,1)
    bool per_feature = true;

    double masked_stop_prob() const { return 1.0 / mean_len; }
    double unmasked_stop_prob() const { return ratio / (mean_len * (1.0 - ratio)); }
    double expected_unmasked_len() const { return mean_len * (1.0 - ratio) / ratio; }

    void validate() const {
        if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must be in (0,1), got " + std::to_string(ratio));
        if (!(mean_len >= 1.0)) throw ConfigError("mask mean segment length must be >= 1, got " + std::to_string(mean_len));
        if (unmasked_stop_prob() > 1.0)
            throw ConfigError("mask spec infeasible: unmasked stop probability " + std::to_string(unmasked_stop_prob()) +
                              " exceeds 1 (increase mean length or decrease ratio)");
    }
};

// Binary {0,1} matrix with the same [w x k] layout as the window it masks.
struct MaskMatrix {
    std::size_t rows = 0; // w (time)
    std::size_t cols = 0; // k (features)
    std::vector<std::uint8_t> values;

    std::uint8_t at(std::size_t t, std::size_t f) const { return values[t * cols + f]; }
    std::size_t ones() const {
        std::size_t n = 0;
        for (auto v : values) n += v;
        return n;
    }
};

namespace detail {

// one alternating 0/1 column of length w
inline void fill_mask_column(std::vector<std::uint8_t>& col, const MaskSpec& spec, Rng& rng) {
    const std::size_t w = col.size();
    bool masked = rng.uniform() < spec.ratio; // start with a 1-run with probability 1 - ratio
    std::size_t t = 0;
    while (t < w) {
        const double stop = masked ? spec.masked_stop_prob() : spec.unmasked_stop_prob();
        std::uint64_t len = rng.geometric(stop);
        while (len-- && t < w) col[t++] = masked ? 0 : 1;
        masked = !masked;
    }
}

} // namespace detail

// Deterministic given (spec, seed). Columns are independent when
// spec.per_feature is set; otherwise one sampled column is shared.
inline MaskMatrix generate_mask(const MaskSpec& spec, std::size_t w, std::size_t k, std::uint64_t seed) {
    spec.validate();
    if (w < 1 || k < 1) throw ConfigError("mask dimensions must be >= 1");
    MaskMatrix m;
    m.rows = w;
    m.cols = k;
    m.values.assign(w * k, 1);
    std::vector<std::uint8_t> col(w);
    const std::size_t streams = spec.per_feature ? k : 1;
    for (std::size_t f = 0; f < streams; ++f) {
        Rng rng(Rng::mix(seed, f));
        detail::fill_mask_column(col, spec, rng);
        for (std::size_t t = 0; t < w; ++t) m.values[t * k + f] = col[t];
    }
    if (!spec.per_feature)
        for (std::size_t t = 0; t < w; ++t)
            for (std::size_t f = 1; f < k; ++f) m.values[t * k + f] = m.values[t * k];
    return m;
}

// X~ = M .* X; masked cells are exactly zero, shape is unchanged.
inline Tensor apply_mask(const Tensor& x, const MaskMatrix& m) {
    if (x.rank() != 2 || x.extent(0) != m.rows || x.extent(1) != m.cols)
        throw ShapeError("apply_mask: tensor " + shape_str(x.shape()) + " does not match mask [" + std::to_string(m.rows) +
                         "x" + std::to_string(m.cols) + "]");
    std::vector<double> out(x.numel());
    const double* xv = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.values[i] ? xv[i] : 0.0;
    auto mask = m.values;
    return detail::make_result(x.shape(), std::move(out), {x.node()}, [mask = std::move(mask)](Tensor::Node& node) {
        auto& ap = *node.parents[0];
        if (!ap.requires_grad) return;
        auto& da = detail::grad_buf(ap);
        for (std::size_t i = 0; i < da.size(); ++i)
            if (mask[i]) da[i] += node.grad[i];
    });
}

// Batch masking for training. The input batch is laid out [B,k,w]; the
// returned mask tensor is [B,w,k] so it aligns with reconstruction targets.
struct MaskedBatch {
    Tensor input;  // [B,k,w], masked
    Tensor mask;   // [B,w,k], 0 where masked
};

inline MaskedBatch mask_batch(const Tensor& x, const MaskSpec& spec, const std::vector<std::uint64_t>& window_seeds) {
    if (x.rank() != 3) throw ShapeError("mask_batch expects [B,k,w], got " + shape_str(x.shape()));
    const std::size_t B = x.extent(0), k = x.extent(1), w = x.extent(2);
    if (window_seeds.size() != B) throw ConfigError("mask_batch: one seed per window required");
    std::vector<double> masked(x.numel());
    std::vector<double> mask(B * w * k);
    const double* xv = x.data().data();
    for (std::size_t b = 0; b < B; ++b) {
        MaskMatrix m = generate_mask(spec, w, k, window_seeds[b]);
        for (std::size_t f = 0; f < k; ++f)
            for (std::size_t t = 0; t < w; ++t) {
                const bool keep = m.values[t * k + f] != 0;
                masked[(b * k + f) * w + t] = keep ? xv[(b * k + f) * w + t] : 0.0;
                mask[(b * w + t) * k + f] = keep ? 1.0 : 0.0;
            }
    }
    MaskedBatch out;
    out.input = Tensor::from(x.shape(), std::move(masked));
    out.mask = Tensor::from({B, w, k}, std::move(mask));
    return out;
}

} // namespace slmr
