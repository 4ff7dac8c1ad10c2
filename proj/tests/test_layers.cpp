#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "slmr/layers.hpp"

using namespace slmr;

namespace {

Conv1dParams conv_with(const ConvSpec& spec, std::vector<double> w, std::vector<double> b) {
    Conv1dParams p = Conv1dParams::zeros(spec);
    p.weight.data() = std::move(w);
    p.bias.data() = std::move(b);
    return p;
}

} // namespace

TEST_CASE("conv1d with a 1x1 kernel scales the input") {
    Conv1dParams p = conv_with(ConvSpec::gamma(1, 1), {2.0}, {0.0});
    Tensor x = Tensor::from({1, 1, 3}, {1, 2, 3});
    CHECK(conv1d(x, p).data() == std::vector<double>{2, 4, 6});
}

TEST_CASE("conv1d with a centered identity kernel is the identity") {
    Conv1dParams p = conv_with(ConvSpec::beta(1, 1), {0, 1, 0}, {0});
    Rng rng(2);
    std::vector<double> xv = oracle::random_vec(7, rng);
    Tensor x = Tensor::from({1, 1, 7}, xv);
    CHECK(conv1d(x, p).data() == xv);
}

TEST_CASE("dilated conv1d matches the direct-summation oracle") {
    Rng rng(21);
    const ConvSpec spec = ConvSpec::validated({3, 2, 2, 3, ConvVariant::Alpha});
    Conv1dParams p = Conv1dParams::init(spec, rng);
    std::vector<double> xv = oracle::random_vec(1 * 2 * 9, rng);
    Tensor out = conv1d(Tensor::from({1, 2, 9}, xv), p);
    const std::vector<double> expect = oracle::conv1d(xv, p, 1, 9);
    REQUIRE(out.numel() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(out.data()[i] == Catch::Approx(expect[i]).margin(1e-12));
}

TEST_CASE("conv1d rejects even kernel sizes") {
    CHECK_THROWS_AS(ConvSpec::validated({4, 1, 1, 1, ConvVariant::Beta}), ConfigError);
    Conv1dParams p = Conv1dParams::zeros(ConvSpec::beta(1, 1));
    p.spec.kernel_size = 2; // bypass the factory check
    Tensor x = Tensor::from({1, 1, 3}, {1, 2, 3});
    CHECK_THROWS_AS(conv1d(x, p), ConfigError);
}

TEST_CASE("conv1d output length equals input length for every variant") {
    Rng rng(33);
    for (std::size_t T : {1, 2, 5, 9, 16}) {
        for (auto spec : {ConvSpec::gamma(3, 2), ConvSpec::beta(3, 3), ConvSpec::alpha(2, 3, 4)}) {
            Conv1dParams p = Conv1dParams::init(spec, rng);
            Tensor x = Tensor::from({2, 3, T}, oracle::random_vec(2 * 3 * T, rng));
            CHECK(conv1d(x, p).extent(2) == T);
        }
    }
}

TEST_CASE("conv1d gradients pass the finite-difference check for all variants") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(100 + seed);
        for (auto spec : {ConvSpec::gamma(2, 3), ConvSpec::beta(2, 2), ConvSpec::alpha(1, 2, 2), ConvSpec::alpha(3, 2, 2)}) {
            Conv1dParams p = Conv1dParams::init(spec, rng);
            std::vector<double> xv = oracle::random_vec(2 * 2 * 6, rng);
            auto wrt_input = [&](Tensor& t) { return mean_all(mul(conv1d(t, p), conv1d(t, p))); };
            Tensor x = Tensor::from({2, 2, 6}, xv, true);
            CHECK(grad_check(wrt_input, x, 1e-5) < 1e-4);

            Tensor fixed = Tensor::from({2, 2, 6}, xv);
            auto wrt_weight = [&](Tensor&) { return mean_all(mul(conv1d(fixed, p), conv1d(fixed, p))); };
            CHECK(grad_check(wrt_weight, p.weight, 1e-5) < 1e-4);
            CHECK(grad_check(wrt_weight, p.bias, 1e-5) < 1e-4);
        }
    }
}

TEST_CASE("gru with zero weights halves the hidden state each step") {
    // z = sigmoid(0) = 0.5 and the candidate is 0, so h' = 0.5 h
    GruParams p = GruParams::zeros(3, 4);
    Rng rng(5);
    std::vector<double> hv = oracle::random_vec(2 * 4, rng);
    Tensor x = Tensor::from({2, 5, 3}, oracle::random_vec(2 * 5 * 3, rng));
    auto [outputs, h_last] = gru_forward(x, p, Tensor::from({2, 4}, hv));
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t j = 0; j < 4; ++j) {
            double expect = hv[b * 4 + j];
            for (std::size_t t = 0; t < 5; ++t) {
                expect *= 0.5;
                CHECK(outputs.at(b, t, j) == Catch::Approx(expect).margin(1e-15));
            }
            CHECK(h_last.at(b, j) == Catch::Approx(expect).margin(1e-15));
        }
}

TEST_CASE("gru with zero weights and zero initial state stays at zero") {
    GruParams p = GruParams::zeros(2, 3);
    Rng rng(6);
    Tensor x = Tensor::from({1, 4, 2}, oracle::random_vec(8, rng));
    auto [outputs, h_last] = gru_forward(x, p);
    for (double v : outputs.data()) CHECK(v == 0.0);
    for (double v : h_last.data()) CHECK(v == 0.0);
}

TEST_CASE("gru matches the per-step scalar oracle") {
    Rng rng(77);
    GruParams p = GruParams::init(3, 4, rng);
    const std::size_t B = 2, T = 5, D = 3, H = 4;
    std::vector<double> xv = oracle::random_vec(B * T * D, rng);
    auto [outputs, h_last] = gru_forward(Tensor::from({B, T, D}, xv), p);

    std::vector<double> h(B * H, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> xt(B * D);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t d = 0; d < D; ++d) xt[b * D + d] = xv[(b * T + t) * D + d];
        h = oracle::gru_step(xt, h, p, B);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < H; ++j) CHECK(outputs.at(b, t, j) == Catch::Approx(h[b * H + j]).margin(1e-12));
    }
    for (std::size_t i = 0; i < B * H; ++i) CHECK(h_last.data()[i] == Catch::Approx(h[i]).margin(1e-12));
}

TEST_CASE("gru rejects input dimension mismatches") {
    GruParams p = GruParams::zeros(3, 4);
    Tensor x = Tensor::from({1, 2, 2}, std::vector<double>(4, 0.0));
    CHECK_THROWS_AS(gru_forward(x, p), ShapeError);
}

TEST_CASE("gru hidden states stay inside (-1,1) from a zero start") {
    // tanh candidate and convex gate mixing keep the state bounded
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(300 + seed);
        GruParams p = GruParams::init(2, 3, rng);
        // widen the weights to stress the bound (tanh saturates to 1.0 in
        // doubles past ~19, so stay below that)
        for (auto* t : {&p.wz, &p.uz, &p.wr, &p.ur, &p.wn, &p.un})
            for (double& v : t->data()) v *= 2.0;
        Tensor x = Tensor::from({1, 20, 2}, oracle::random_vec(40, rng, -3.0, 3.0));
        auto [outputs, h_last] = gru_forward(x, p);
        for (double v : outputs.data()) {
            CHECK(v > -1.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("gru gradients pass the finite-difference check") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(400 + seed);
        GruParams p = GruParams::init(2, 3, rng);
        std::vector<double> xv = oracle::random_vec(2 * 4 * 2, rng);
        Tensor fixed = Tensor::from({2, 4, 2}, xv);
        auto loss_fn = [&](Tensor&) {
            auto [outputs, h_last] = gru_forward(fixed, p);
            return mean_all(mul(outputs, outputs));
        };
        for (Tensor* t : {&p.wz, &p.uz, &p.bz, &p.wr, &p.ur, &p.br, &p.wn, &p.un, &p.bn})
            CHECK(grad_check(loss_fn, *t, 1e-5) < 1e-4);

        Tensor x = Tensor::from({2, 4, 2}, xv, true);
        auto wrt_input = [&](Tensor& t) {
            auto [outputs, h_last] = gru_forward(t, p);
            return mean_all(mul(outputs, outputs));
        };
        CHECK(grad_check(wrt_input, x, 1e-5) < 1e-4);
    }
}

TEST_CASE("senet with zero conv weights scales everything by one half") {
    SenetParams p = SenetParams::zeros();
    Rng rng(8);
    std::vector<double> xv = oracle::random_vec(2 * 3 * 4, rng);
    Tensor out = senet1d(Tensor::from({2, 3, 4}, xv), p);
    for (std::size_t i = 0; i < xv.size(); ++i) CHECK(out.data()[i] == Catch::Approx(0.5 * xv[i]).margin(1e-15));
}

TEST_CASE("senet with symmetric kernels weights identical channels identically") {
    // the descriptor conv sees zero padding at both ends, so a symmetric
    // kernel treats the two positions of a C=2 descriptor the same way
    SenetParams p = SenetParams::zeros();
    p.conv1.weight.data() = {0.4, -0.3, 0.4};
    p.conv1.bias.data() = {0.1};
    p.conv2.weight.data() = {-0.2, 0.7, -0.2};
    p.conv2.bias.data() = {-0.05};
    Rng rng(12);
    std::vector<double> row = oracle::random_vec(6, rng);
    std::vector<double> xv(12);
    std::copy(row.begin(), row.end(), xv.begin());
    std::copy(row.begin(), row.end(), xv.begin() + 6); // channel 2 identical to channel 1
    Tensor out = senet1d(Tensor::from({1, 2, 6}, xv), p);
    for (std::size_t t = 0; t < 6; ++t) CHECK(out.at(0, 0, t) == Catch::Approx(out.at(0, 1, t)).margin(1e-15));
}

TEST_CASE("senet matches the composed-primitive oracle") {
    Rng rng(91);
    SenetParams p = SenetParams::init(rng);
    std::vector<double> xv = oracle::random_vec(2 * 5 * 7, rng);
    Tensor out = senet1d(Tensor::from({2, 5, 7}, xv), p);
    const std::vector<double> expect = oracle::senet(xv, p, 2, 5, 7);
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(out.data()[i] == Catch::Approx(expect[i]).margin(1e-12));
}

TEST_CASE("senet channel weights live strictly inside (0,1)") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(500 + seed);
        SenetParams p = SenetParams::init(rng);
        std::vector<double> xv = oracle::random_vec(1 * 4 * 6, rng, 0.5, 2.0); // positive input so the ratio is the weight
        Tensor out = senet1d(Tensor::from({1, 4, 6}, xv), p);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double z = out.data()[i] / xv[i];
            CHECK(z > 0.0);
            CHECK(z < 1.0);
        }
    }
}

TEST_CASE("senet gradients pass the finite-difference check") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(600 + seed);
        SenetParams p = SenetParams::init(rng);
        std::vector<double> xv = oracle::random_vec(2 * 3 * 5, rng);
        Tensor x = Tensor::from({2, 3, 5}, xv, true);
        auto wrt_input = [&](Tensor& t) { return mean_all(mul(senet1d(t, p), senet1d(t, p))); };
        CHECK(grad_check(wrt_input, x, 1e-5) < 1e-4);
        Tensor fixed = Tensor::from({2, 3, 5}, xv);
        auto wrt_weight = [&](Tensor&) { return mean_all(mul(senet1d(fixed, p), senet1d(fixed, p))); };
        CHECK(grad_check(wrt_weight, p.conv1.weight, 1e-5) < 1e-4);
        CHECK(grad_check(wrt_weight, p.conv2.weight, 1e-5) < 1e-4);
    }
}

TEST_CASE("dense with identity weights is the identity") {
    DenseParams p;
    p.weight = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}, true);
    p.bias = Tensor::zeros({3}, true);
    Rng rng(4);
    std::vector<double> xv = oracle::random_vec(6, rng);
    CHECK(dense(Tensor::from({2, 3}, xv), p).data() == xv);
}

TEST_CASE("dense with zero weights returns the bias in every row") {
    DenseParams p;
    p.weight = Tensor::zeros({3, 2}, true);
    p.bias = Tensor::from({2}, {0.5, -1.5}, true);
    Tensor out = dense(Tensor::from({2, 3}, std::vector<double>(6, 3.0)), p);
    CHECK(out.data() == std::vector<double>{0.5, -1.5, 0.5, -1.5});
}

TEST_CASE("dense matches the matmul oracle") {
    Rng rng(14);
    DenseParams p = DenseParams::init(4, 3, rng);
    std::vector<double> xv = oracle::random_vec(2 * 4, rng);
    Tensor out = dense(Tensor::from({2, 4}, xv), p);
    std::vector<double> expect = oracle::matmul(xv, p.weight.data(), 2, 4, 3);
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(out.data()[i] == Catch::Approx(expect[i] + p.bias.data()[i % 3]).margin(1e-12));
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
    Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
    std::vector<Tensor> params{p};
    AdamState st = AdamState::init(params, 0.01);
    for (int i = 0; i < 5; ++i) {
        p.zero_grad();
        adam_step(params, st);
    }
    CHECK(p.data() == std::vector<double>{1.0, -2.0, 0.5});
    CHECK(st.step == 5);
}

TEST_CASE("adam update magnitude approaches lr * sign(g) for constant gradients") {
    Tensor p = Tensor::from({2}, {0.0, 0.0}, true);
    std::vector<Tensor> params{p};
    AdamState st = AdamState::init(params, 1e-3);
    double step0 = 0.0, step1 = 0.0;
    for (int i = 0; i < 5000; ++i) {
        p.zero_grad();
        p.node()->grad[0] = 0.7; // constant gradient
        p.node()->grad[1] = -0.2;
        const double prev0 = p.data()[0], prev1 = p.data()[1];
        adam_step(params, st);
        step0 = p.data()[0] - prev0;
        step1 = p.data()[1] - prev1;
    }
    CHECK(step0 == Catch::Approx(-1e-3).margin(1e-6));
    CHECK(step1 == Catch::Approx(+1e-3).margin(1e-6));
}

TEST_CASE("adam three-step trace matches the scalar recurrence") {
    Tensor p = Tensor::from({1}, {1.0}, true);
    std::vector<Tensor> params{p};
    AdamState st = AdamState::init(params, 0.1);
    const double grads[3] = {0.5, -0.25, 1.0};

    // independent scalar recurrence
    double w = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        const double g = grads[t - 1];
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1.0 - std::pow(0.9, t));
        const double vhat = v / (1.0 - std::pow(0.999, t));
        w -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);

        p.zero_grad();
        p.node()->grad[0] = g;
        adam_step(params, st);
        CHECK(p.data()[0] == Catch::Approx(w).margin(1e-15));
    }
}

TEST_CASE("adam aborts loudly on non-finite gradients") {
    Tensor p = Tensor::from({1}, {1.0}, true);
    std::vector<Tensor> params{p};
    AdamState st = AdamState::init(params, 0.1);
    p.zero_grad();
    p.node()->grad[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adam_step(params, st), NumericError);
}
