#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "slmr/rng.hpp"
#include "slmr/tensor.hpp"

namespace slmr {

// ---------------------------------------------------------------------------
// 1-d convolution
// ---------------------------------------------------------------------------

enum class ConvVariant { Alpha, Beta, Gamma };

// The three convolution flavours used by the front-end:
//   alpha: growing odd kernel (2i+1 for cascade position i), dilation 2
//   beta:  kernel 3, dilation 1
//   gamma: kernel 1, dilation 1 (pure channel mix)
struct ConvSpec {
    std::size_t kernel_size = 1;
    std::size_t dilation = 1;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    ConvVariant variant = ConvVariant::Gamma;

    static ConvSpec alpha(std::size_t index, std::size_t in_ch, std::size_t out_ch) {
        if (index < 1) throw ConfigError("alpha conv index must be >= 1");
        return validated({2 * index + 1, 2, in_ch, out_ch, ConvVariant::Alpha});
    }
    static ConvSpec beta(std::size_t in_ch, std::size_t out_ch) { return validated({3, 1, in_ch, out_ch, ConvVariant::Beta}); }
    static ConvSpec gamma(std::size_t in_ch, std::size_t out_ch) { return validated({1, 1, in_ch, out_ch, ConvVariant::Gamma}); }

    static ConvSpec validated(ConvSpec s) {
        if (s.kernel_size == 0 || s.kernel_size % 2 == 0)
            throw ConfigError("conv kernel size must be odd and positive, got " + std::to_string(s.kernel_size));
        if (s.dilation == 0) throw ConfigError("conv dilation must be positive");
        if (s.in_channels == 0 || s.out_channels == 0) throw ConfigError("conv channel counts must be positive");
        switch (s.variant) {
            case ConvVariant::Alpha:
                if (s.dilation != 2) throw ConfigError("alpha conv requires dilation 2");
                break;
            case ConvVariant::Beta:
                if (s.kernel_size != 3 || s.dilation != 1) throw ConfigError("beta conv requires kernel 3, dilation 1");
                break;
            case ConvVariant::Gamma:
                if (s.kernel_size != 1 || s.dilation != 1) throw ConfigError("gamma conv requires kernel 1, dilation 1");
                break;
        }
        return s;
    }

    std::size_t padding() const { return (kernel_size - 1) * dilation / 2; }
};

struct Conv1dParams {
    ConvSpec spec;
    Tensor weight; // [Cout, Cin, k]
    Tensor bias;   // [Cout]

    static Conv1dParams init(const ConvSpec& spec, Rng& rng) {
        Conv1dParams p;
        p.spec = spec;
        const std::size_t fan_in = spec.in_channels * spec.kernel_size;
        const std::size_t fan_out = spec.out_channels * spec.kernel_size;
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::vector<double> w(spec.out_channels * spec.in_channels * spec.kernel_size);
        for (double& v : w) v = rng.uniform(-limit, limit);
        p.weight = Tensor::from({spec.out_channels, spec.in_channels, spec.kernel_size}, std::move(w), true);
        p.bias = Tensor::zeros({spec.out_channels}, true);
        return p;
    }

    static Conv1dParams zeros(const ConvSpec& spec) {
        Conv1dParams p;
        p.spec = spec;
        p.weight = Tensor::zeros({spec.out_channels, spec.in_channels, spec.kernel_size}, true);
        p.bias = Tensor::zeros({spec.out_channels}, true);
        return p;
    }
};

// "same" conv over the time axis with symmetric zero padding of
// (k-1)*dilation/2 per side; output length always equals input length.
inline Tensor conv1d(const Tensor& x, const Conv1dParams& params) {
    if (x.rank() != 3) throw ShapeError("conv1d expects [B,Cin,T], got " + shape_str(x.shape()));
    const ConvSpec& spec = params.spec;
    if (spec.kernel_size % 2 == 0) throw ConfigError("conv1d requires an odd kernel size for symmetric padding");
    const std::size_t B = x.extent(0), Cin = x.extent(1), T = x.extent(2);
    if (Cin != spec.in_channels)
        throw ShapeError("conv1d input has " + std::to_string(Cin) + " channels, spec expects " + std::to_string(spec.in_channels));
    if (T < 1) throw ShapeError("conv1d requires T >= 1");
    const std::size_t Cout = spec.out_channels, K = spec.kernel_size, D = spec.dilation;
    const std::size_t P = spec.padding();

    std::vector<double> out(B * Cout * T);
    const double* xv = x.data().data();
    const double* wv = params.weight.data().data();
    const double* bv = params.bias.data().data();
    detail::par_for(B * Cout, Cin * K * T, [&](std::size_t bc) {
        const std::size_t b = bc / Cout, co = bc % Cout;
        double* orow = out.data() + (b * Cout + co) * T;
        for (std::size_t t = 0; t < T; ++t) orow[t] = bv[co];
        for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double* xrow = xv + (b * Cin + ci) * T;
            const double* wrow = wv + (co * Cin + ci) * K;
            for (std::size_t j = 0; j < K; ++j) {
                const double w = wrow[j];
                if (w == 0.0) continue;
                const long long shift = static_cast<long long>(j * D) - static_cast<long long>(P);
                const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
                const std::size_t t1 = shift > 0 ? T - std::min<std::size_t>(T, static_cast<std::size_t>(shift)) : T;
                for (std::size_t t = t0; t < t1; ++t) orow[t] += w * xrow[t + shift];
            }
        }
    });

    auto wn = params.weight.node();
    auto bn = params.bias.node();
    return detail::make_result(
        {B, Cout, T}, std::move(out), {x.node(), wn, bn}, [B, Cin, Cout, T, K, D, P](Tensor::Node& node) {
            auto& xp = *node.parents[0];
            auto& wp = *node.parents[1];
            auto& bp = *node.parents[2];
            const auto& g = node.grad;
            if (bp.requires_grad) {
                auto& db = detail::grad_buf(bp);
                for (std::size_t co = 0; co < Cout; ++co) {
                    double acc = 0.0;
                    for (std::size_t b = 0; b < B; ++b) {
                        const double* grow = g.data() + (b * Cout + co) * T;
                        for (std::size_t t = 0; t < T; ++t) acc += grow[t];
                    }
                    db[co] += acc;
                }
            }
            if (wp.requires_grad) {
                auto& dw = detail::grad_buf(wp);
                detail::par_for(Cout, B * Cin * K * T, [&](std::size_t co) {
                    for (std::size_t ci = 0; ci < Cin; ++ci)
                        for (std::size_t j = 0; j < K; ++j) {
                            const long long shift = static_cast<long long>(j * D) - static_cast<long long>(P);
                            const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
                            const std::size_t t1 = shift > 0 ? T - std::min<std::size_t>(T, static_cast<std::size_t>(shift)) : T;
                            double acc = 0.0;
                            for (std::size_t b = 0; b < B; ++b) {
                                const double* grow = g.data() + (b * Cout + co) * T;
                                const double* xrow = xp.value.data() + (b * Cin + ci) * T;
                                for (std::size_t t = t0; t < t1; ++t) acc += grow[t] * xrow[t + shift];
                            }
                            dw[(co * Cin + ci) * K + j] += acc;
                        }
                });
            }
            if (xp.requires_grad) {
                auto& dx = detail::grad_buf(xp);
                detail::par_for(B * Cin, Cout * K * T, [&](std::size_t bc) {
                    const std::size_t b = bc / Cin, ci = bc % Cin;
                    double* dxrow = dx.data() + (b * Cin + ci) * T;
                    for (std::size_t co = 0; co < Cout; ++co) {
                        const double* grow = g.data() + (b * Cout + co) * T;
                        const double* wrow = wp.value.data() + (co * Cin + ci) * K;
                        for (std::size_t j = 0; j < K; ++j) {
                            const double w = wrow[j];
                            if (w == 0.0) continue;
                            const long long shift = static_cast<long long>(j * D) - static_cast<long long>(P);
                            const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
                            const std::size_t t1 = shift > 0 ? T - std::min<std::size_t>(T, static_cast<std::size_t>(shift)) : T;
                            for (std::size_t t = t0; t < t1; ++t) dxrow[t + shift] += w * grow[t];
                        }
                    }
                });
            }
        });
}

// ---------------------------------------------------------------------------
// GRU
// ---------------------------------------------------------------------------

// Gate convention (the reset gate scales the previous hidden state before the
// candidate transform):
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   c = tanh(x Wn + (r .* h) Un + bn)
//   h' = (1 - z) .* h + z .* c
struct GruParams {
    std::size_t input_size = 0;
    std::size_t hidden_size = 0;
    Tensor wz, uz, bz; // update gate
    Tensor wr, ur, br; // reset gate
    Tensor wn, un, bn; // candidate

    static GruParams init(std::size_t input, std::size_t hidden, Rng& rng) {
        GruParams p;
        p.input_size = input;
        p.hidden_size = hidden;
        const double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
        auto mat = [&](std::size_t rows, std::size_t cols) {
            std::vector<double> v(rows * cols);
            for (double& x : v) x = rng.uniform(-limit, limit);
            return Tensor::from({rows, cols}, std::move(v), true);
        };
        p.wz = mat(input, hidden);
        p.uz = mat(hidden, hidden);
        p.bz = Tensor::zeros({hidden}, true);
        p.wr = mat(input, hidden);
        p.ur = mat(hidden, hidden);
        p.br = Tensor::zeros({hidden}, true);
        p.wn = mat(input, hidden);
        p.un = mat(hidden, hidden);
        p.bn = Tensor::zeros({hidden}, true);
        return p;
    }

    static GruParams zeros(std::size_t input, std::size_t hidden) {
        GruParams p;
        p.input_size = input;
        p.hidden_size = hidden;
        p.wz = Tensor::zeros({input, hidden}, true);
        p.uz = Tensor::zeros({hidden, hidden}, true);
        p.bz = Tensor::zeros({hidden}, true);
        p.wr = Tensor::zeros({input, hidden}, true);
        p.ur = Tensor::zeros({hidden, hidden}, true);
        p.br = Tensor::zeros({hidden}, true);
        p.wn = Tensor::zeros({input, hidden}, true);
        p.un = Tensor::zeros({hidden, hidden}, true);
        p.bn = Tensor::zeros({hidden}, true);
        return p;
    }
};

// One fused recurrence step: x[B,D], h[B,H] -> h'[B,H].
inline Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p) {
    if (x.rank() != 2 || x.extent(1) != p.input_size)
        throw ShapeError("gru_cell input " + shape_str(x.shape()) + " does not match input_size " + std::to_string(p.input_size));
    if (h.rank() != 2 || h.extent(1) != p.hidden_size || h.extent(0) != x.extent(0))
        throw ShapeError("gru_cell hidden state " + shape_str(h.shape()) + " inconsistent with input " + shape_str(x.shape()));
    const std::size_t B = x.extent(0), D = p.input_size, H = p.hidden_size;

    std::vector<double> z(B * H, 0.0), r(B * H, 0.0), c(B * H, 0.0), hr(B * H);
    const double* xv = x.data().data();
    const double* hv = h.data().data();
    {
        // gate pre-activations
        detail::mm(xv, p.wz.data().data(), z.data(), B, D, H);
        detail::mm(hv, p.uz.data().data(), z.data(), B, H, H);
        detail::mm(xv, p.wr.data().data(), r.data(), B, D, H);
        detail::mm(hv, p.ur.data().data(), r.data(), B, H, H);
        const double* bz = p.bz.data().data();
        const double* br = p.br.data().data();
        detail::par_for(B, 4 * H, [&](std::size_t b) {
            for (std::size_t j = 0; j < H; ++j) {
                z[b * H + j] = detail::stable_sigmoid(z[b * H + j] + bz[j]);
                r[b * H + j] = detail::stable_sigmoid(r[b * H + j] + br[j]);
                hr[b * H + j] = r[b * H + j] * hv[b * H + j];
            }
        });
        detail::mm(xv, p.wn.data().data(), c.data(), B, D, H);
        detail::mm(hr.data(), p.un.data().data(), c.data(), B, H, H);
        const double* bn = p.bn.data().data();
        detail::par_for(B, 2 * H, [&](std::size_t b) {
            for (std::size_t j = 0; j < H; ++j) c[b * H + j] = std::tanh(c[b * H + j] + bn[j]);
        });
    }
    std::vector<double> out(B * H);
    for (std::size_t i = 0; i < B * H; ++i) out[i] = (1.0 - z[i]) * hv[i] + z[i] * c[i];

    return detail::make_result(
        {B, H}, std::move(out),
        {x.node(), h.node(), p.wz.node(), p.uz.node(), p.bz.node(), p.wr.node(), p.ur.node(), p.br.node(), p.wn.node(),
         p.un.node(), p.bn.node()},
        [B, D, H, z = std::move(z), r = std::move(r), c = std::move(c)](Tensor::Node& node) {
            auto& xp = *node.parents[0];
            auto& hp = *node.parents[1];
            auto& wz = *node.parents[2];
            auto& uz = *node.parents[3];
            auto& bz = *node.parents[4];
            auto& wr = *node.parents[5];
            auto& ur = *node.parents[6];
            auto& br = *node.parents[7];
            auto& wn = *node.parents[8];
            auto& un = *node.parents[9];
            auto& bn = *node.parents[10];
            const auto& g = node.grad;
            const double* hv = hp.value.data();

            std::vector<double> da_n(B * H), da_z(B * H), dhr(B * H, 0.0), da_r(B * H), hr(B * H);
            std::vector<double> dh_local(B * H, 0.0);
            for (std::size_t i = 0; i < B * H; ++i) {
                const double gz = g[i] * (c[i] - hv[i]);
                da_z[i] = gz * z[i] * (1.0 - z[i]);
                da_n[i] = g[i] * z[i] * (1.0 - c[i] * c[i]);
                dh_local[i] = g[i] * (1.0 - z[i]);
                hr[i] = r[i] * hv[i];
            }
            // candidate path
            detail::mm_a_bt(da_n.data(), un.value.data(), dhr.data(), B, H, H);
            for (std::size_t i = 0; i < B * H; ++i) {
                da_r[i] = dhr[i] * hv[i] * r[i] * (1.0 - r[i]);
                dh_local[i] += dhr[i] * r[i];
            }
            if (un.requires_grad) detail::mm_at_b(hr.data(), da_n.data(), detail::grad_buf(un).data(), B, H, H);
            if (wn.requires_grad) detail::mm_at_b(xp.value.data(), da_n.data(), detail::grad_buf(wn).data(), B, D, H);
            // update and reset gate paths
            if (wz.requires_grad) detail::mm_at_b(xp.value.data(), da_z.data(), detail::grad_buf(wz).data(), B, D, H);
            if (uz.requires_grad) detail::mm_at_b(hv, da_z.data(), detail::grad_buf(uz).data(), B, H, H);
            if (wr.requires_grad) detail::mm_at_b(xp.value.data(), da_r.data(), detail::grad_buf(wr).data(), B, D, H);
            if (ur.requires_grad) detail::mm_at_b(hv, da_r.data(), detail::grad_buf(ur).data(), B, H, H);
            auto colsum = [&](Tensor::Node& bias, const std::vector<double>& src) {
                if (!bias.requires_grad) return;
                auto& db = detail::grad_buf(bias);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t j = 0; j < H; ++j) db[j] += src[b * H + j];
            };
            colsum(bz, da_z);
            colsum(br, da_r);
            colsum(bn, da_n);
            if (xp.requires_grad) {
                auto& dx = detail::grad_buf(xp);
                detail::mm_a_bt(da_n.data(), wn.value.data(), dx.data(), B, H, D);
                detail::mm_a_bt(da_z.data(), wz.value.data(), dx.data(), B, H, D);
                detail::mm_a_bt(da_r.data(), wr.value.data(), dx.data(), B, H, D);
            }
            if (hp.requires_grad) {
                auto& dh = detail::grad_buf(hp);
                detail::mm_a_bt(da_z.data(), uz.value.data(), dh_local.data(), B, H, H);
                detail::mm_a_bt(da_r.data(), ur.value.data(), dh_local.data(), B, H, H);
                for (std::size_t i = 0; i < B * H; ++i) dh[i] += dh_local[i];
            }
        });
}

// Unrolls the cell over x[B,T,D]; returns per-step hidden states [B,T,H] and
// the final state [B,H]. h0 defaults to zeros.
inline std::pair<Tensor, Tensor> gru_forward(const Tensor& x, const GruParams& p, Tensor h0 = Tensor()) {
    if (x.rank() != 3) throw ShapeError("gru_forward expects [B,T,D], got " + shape_str(x.shape()));
    if (x.extent(2) != p.input_size)
        throw ShapeError("gru_forward input dim " + std::to_string(x.extent(2)) + " does not match params input_size " +
                         std::to_string(p.input_size));
    const std::size_t B = x.extent(0), T = x.extent(1);
    Tensor h = h0.defined() ? h0 : Tensor::zeros({B, p.hidden_size});
    std::vector<Tensor> steps;
    steps.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        h = gru_cell(step_slice(x, t), h, p);
        steps.push_back(h);
    }
    return {stack_time(steps), h};
}

// ---------------------------------------------------------------------------
// SENet1D channel attention
// ---------------------------------------------------------------------------

// Squeeze-and-excitation over channels of a 1-d sequence: the time axis is
// average-pooled to a length-C channel descriptor, two kernel-3 convs with a
// ReLU between run over that descriptor, and the sigmoid output rescales each
// channel of x.
struct SenetParams {
    Conv1dParams conv1; // beta conv, 1 -> 1 channels over the descriptor
    Conv1dParams conv2;

    static SenetParams init(Rng& rng) {
        SenetParams p;
        p.conv1 = Conv1dParams::init(ConvSpec::beta(1, 1), rng);
        p.conv2 = Conv1dParams::init(ConvSpec::beta(1, 1), rng);
        return p;
    }

    static SenetParams zeros() {
        SenetParams p;
        p.conv1 = Conv1dParams::zeros(ConvSpec::beta(1, 1));
        p.conv2 = Conv1dParams::zeros(ConvSpec::beta(1, 1));
        return p;
    }
};

inline Tensor senet1d(const Tensor& x, const SenetParams& p) {
    if (x.rank() != 3) throw ShapeError("senet1d expects [B,C,T], got " + shape_str(x.shape()));
    const std::size_t B = x.extent(0), C = x.extent(1);
    if (C < 1) throw ShapeError("senet1d requires at least one channel");
    Tensor pooled = avgpool_time(x);                   // [B,C]
    Tensor d = reshape(pooled, {B, 1, C});             // descriptor as a 1-channel sequence
    Tensor hidden = relu(conv1d(d, p.conv1));          // [B,1,C]
    Tensor zlin = conv1d(hidden, p.conv2);             // [B,1,C]
    Tensor zgate = sigmoid(zlin);                      // weights in (0,1)
    return channel_scale(x, reshape(zgate, {B, C}));
}

// ---------------------------------------------------------------------------
// dense head
// ---------------------------------------------------------------------------

struct DenseParams {
    Tensor weight; // [In, Out]
    Tensor bias;   // [Out]

    static DenseParams init(std::size_t in, std::size_t out, Rng& rng) {
        DenseParams p;
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::vector<double> w(in * out);
        for (double& v : w) v = rng.uniform(-limit, limit);
        p.weight = Tensor::from({in, out}, std::move(w), true);
        p.bias = Tensor::zeros({out}, true);
        return p;
    }
};

inline Tensor dense(const Tensor& x, const DenseParams& p) { return add(matmul(x, p.weight), p.bias); }

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<std::vector<double>> m; // first moments, aligned with the parameter list
    std::vector<std::vector<double>> v; // second moments

    static AdamState init(const std::vector<Tensor>& params, double lr) {
        AdamState s;
        s.lr = lr;
        for (const auto& p : params) {
            s.m.emplace_back(p.numel(), 0.0);
            s.v.emplace_back(p.numel(), 0.0);
        }
        return s;
    }
};

// Standard Adam update with bias correction; gradients are read from each
// parameter's grad buffer and must be finite.
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (params.size() != state.m.size()) throw ConfigError("adam_step: state does not match parameter list");
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        const auto& g = p.grad();
        if (g.size() != p.numel()) throw ShapeError("adam_step: gradient shape mismatch");
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        auto& w = p.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) throw NumericError("adam_step: non-finite gradient encountered; training aborted");
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

} // namespace slmr
