#include <gtest/gtest.h>

#include <filesystem>

#include "permfm/checkpoint.hpp"
#include "permfm/flow.hpp"
#include "permfm/net.hpp"
#include "permfm/optim.hpp"
#include "permfm/verify.hpp"

using namespace permfm;

namespace {

NetArch small_arch(bool uses_state, bool uses_time = false) {
    NetArch a;
    a.n = 4;
    a.ctx_dim = 5;
    a.enc_hidden = {7, 6};
    a.embed_dim = 5;
    a.head_hidden = {9, 8};
    a.uses_state = uses_state;
    a.uses_time = uses_time;
    return a;
}

CfmBatch random_batch(const NetArch& a, Eigen::Index b, Rng& rng) {
    const auto nn = static_cast<Eigen::Index>(a.n * a.n);
    CfmBatch batch{RowMat(b, static_cast<Eigen::Index>(a.ctx_dim)), RowMat(b, nn), Eigen::VectorXd(b), RowMat(b, nn)};
    for (Eigen::Index r = 0; r < b; ++r) {
        for (Eigen::Index c = 0; c < batch.obs.cols(); ++c) batch.obs(r, c) = standard_normal(rng);
        const SquareMatrix x = noisy_uniform_start(a.n, 0.5, rng);
        for (Eigen::Index c = 0; c < nn; ++c) {
            batch.x(r, c) = x.raw()[static_cast<std::size_t>(c)];
            batch.target(r, c) = standard_normal(rng);
        }
        batch.t(r) = uniform01(rng);
    }
    return batch;
}

std::string tmp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "permfm_tests";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

} // namespace

TEST(VelocityNet, ParameterLayout) {
    VelocityNet net(small_arch(true, true));
    // encoder 5->7->6->5, head (16+5+1)->9->8->16
    const std::size_t expect = (5 * 7 + 7) + (7 * 6 + 6) + (6 * 5 + 5) + (22 * 9 + 9) + (9 * 8 + 8) + (8 * 16 + 16);
    EXPECT_EQ(net.param_count(), expect);
    EXPECT_THROW(net.set_params(std::vector<double>(3)), DimensionError);
}

TEST(EncodeContext, DeterministicSensitiveAndBiasAtZeroWeights) {
    VelocityNet net(small_arch(true));
    Rng rng = make_stream(1, "enc");
    init_params(net, rng);
    const std::vector<double> obs{0.1, -0.2, 0.3, 0.4, -0.5};
    EXPECT_EQ(encode_context(net, obs), encode_context(net, obs));
    std::vector<double> obs2 = obs;
    obs2[2] += 0.01;
    EXPECT_GT((encode_context(net, obs) - encode_context(net, obs2)).norm(), 0.0);
    EXPECT_THROW(encode_context(net, {1.0, 2.0}), DimensionError);

    // zero weights: each layer outputs act(bias) or bias; the last layer is linear
    VelocityNet z(small_arch(true));
    std::fill(z.params().begin(), z.params().end(), 0.0);
    const auto& last = z.encoder_layers().back();
    for (std::size_t k = 0; k < last.out; ++k) z.params()[last.b_off + k] = 0.25 * static_cast<double>(k) - 0.5;
    const Eigen::RowVectorXd h = encode_context(z, obs);
    for (std::size_t k = 0; k < last.out; ++k) EXPECT_EQ(h(static_cast<Eigen::Index>(k)), 0.25 * static_cast<double>(k) - 0.5);
}

TEST(Velocity, TangentForArbitraryParameters) {
    for (int s = 0; s < 20; ++s) {
        Rng rng = make_stream(static_cast<std::uint64_t>(s), "tan");
        VelocityNet net(small_arch(true, s % 2 == 0));
        for (double& p : net.params()) p = 3.0 * standard_normal(rng);
        const auto h = encode_context(net, {1, 2, 3, 4, 5});
        const SquareMatrix v = velocity(net, noisy_uniform_start(4, 1.0, rng), h, uniform01(rng));
        EXPECT_LE(tangent_residual(v), 1e-10 * std::max(1.0, frobenius_norm(v)));
    }
}

TEST(Velocity, StateFlagControlsDependence) {
    Rng rng = make_stream(2, "flag");
    VelocityNet stateless(small_arch(false));
    VelocityNet stateful(small_arch(true));
    init_params(stateless, rng, 1.0);
    init_params(stateful, rng, 1.0);
    const SquareMatrix x1 = noisy_uniform_start(4, 1.0, rng), x2 = noisy_uniform_start(4, 1.0, rng);
    const auto h1 = encode_context(stateless, {1, 0, 0, 0, 0});
    EXPECT_EQ(velocity(stateless, x1, h1, 0.3), velocity(stateless, x2, h1, 0.3));
    const auto h2 = encode_context(stateful, {1, 0, 0, 0, 0});
    EXPECT_NE(velocity(stateful, x1, h2, 0.3), velocity(stateful, x2, h2, 0.3));
}

TEST(GradCfm, ZeroWhenTargetEqualsOutput) {
    Rng rng = make_stream(3, "zero");
    const NetArch a = small_arch(true, true);
    VelocityNet net(a);
    init_params(net, rng, 1.0);
    CfmBatch b = random_batch(a, 4, rng);
    b.target = velocity_batch(net, b.x, encode_batch(net, b.obs), b.t);
    const CfmGrad g = grad_cfm(net, b);
    EXPECT_EQ(g.loss, 0.0);
    for (double v : g.grad) EXPECT_EQ(v, 0.0);
}

TEST(GradCfm, LinearModelMatchesClosedForm) {
    NetArch a;
    a.n = 3;
    a.ctx_dim = 2;
    a.enc_hidden = {};
    a.embed_dim = 2;
    a.head_hidden = {};
    a.uses_state = false;
    VelocityNet net(a);
    Rng rng = make_stream(4, "lin");
    for (double& p : net.params()) p = standard_normal(rng);
    CfmBatch b = random_batch(a, 1, rng);

    // Hand derivation: h = W1 o + b1, f = W2 h + b2, r = C(f) - y,
    // dL/df = 2 C(r), dW2 = dL/df h^T, db2 = dL/df, dh = W2^T dL/df, dW1 = dh o^T.
    const auto& e = net.encoder_layers()[0];
    const auto& hd = net.head_layers()[0];
    const auto& p = net.params();
    std::vector<double> h(2), f(9);
    for (int i = 0; i < 2; ++i) {
        h[i] = p[e.b_off + i];
        for (int j = 0; j < 2; ++j) h[i] += p[e.w_off + i * 2 + j] * b.obs(0, j);
    }
    for (int i = 0; i < 9; ++i) {
        f[i] = p[hd.b_off + i];
        for (int j = 0; j < 2; ++j) f[i] += p[hd.w_off + i * 2 + j] * h[j];
    }
    SquareMatrix r = center(SquareMatrix(3, f));
    for (int i = 0; i < 9; ++i) r.values()[i] -= b.target(0, i);
    const double loss = inner(r, r);
    SquareMatrix gf = 2.0 * center(r);
    std::vector<double> expect(net.param_count(), 0.0), dh(2, 0.0);
    for (int i = 0; i < 9; ++i) {
        expect[hd.b_off + i] = gf.values()[i];
        for (int j = 0; j < 2; ++j) {
            expect[hd.w_off + i * 2 + j] = gf.values()[i] * h[j];
            dh[j] += p[hd.w_off + i * 2 + j] * gf.values()[i];
        }
    }
    for (int i = 0; i < 2; ++i) {
        expect[e.b_off + i] = dh[i];
        for (int j = 0; j < 2; ++j) expect[e.w_off + i * 2 + j] = dh[i] * b.obs(0, j);
    }
    const CfmGrad g = grad_cfm(net, b);
    EXPECT_NEAR(g.loss, loss, 1e-12);
    for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_NEAR(g.grad[k], expect[k], 1e-12) << "param " << k;
}

TEST(GradCfm, MatchesCentralDifferencesSmallNets) {
    for (bool state : {false, true}) {
        for (Activation act : {Activation::silu, Activation::tanh}) {
            NetArch a = small_arch(state, true);
            a.act = act;
            VelocityNet net(a);
            Rng rng = make_stream(5, "fd");
            init_params(net, rng, 1.0);
            const CfmBatch b = random_batch(a, 3, rng);
            const CfmGrad g = grad_cfm(net, b);
            for (int q = 0; q < 50; ++q) {
                const std::size_t k = uniform_index(rng, net.param_count());
                const double saved = net.params()[k];
                net.params()[k] = saved + 1e-5;
                const double lp = cfm_loss(net, b);
                net.params()[k] = saved - 1e-5;
                const double lm = cfm_loss(net, b);
                net.params()[k] = saved;
                const double fd = (lp - lm) / 2e-5;
                EXPECT_LE(std::abs(fd - g.grad[k]) / std::max({std::abs(fd), std::abs(g.grad[k]), 1e-6}), 1e-4);
            }
        }
    }
}

TEST(GradCfm, DefaultArchitecturesBothTasks) {
    EXPECT_LE(gradient_check(default_arch(Task::slap, 8), 20, 1).worst_rel, 1e-4);
    EXPECT_LE(gradient_check(default_arch(Task::sort, 8), 20, 1).worst_rel, 1e-4);
}

TEST(GradCfm, NonFiniteLossReportsBatchIndex) {
    const NetArch a = small_arch(true);
    VelocityNet net(a);
    Rng rng = make_stream(6, "nan");
    init_params(net, rng);
    CfmBatch b = random_batch(a, 3, rng);
    b.target(2, 0) = std::numeric_limits<double>::quiet_NaN();
    try {
        grad_cfm(net, b);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("batch index 2"), std::string::npos);
    }
}

TEST(Adam, ZeroGradientNoDecayLeavesParams) {
    AdamConfig c;
    c.weight_decay = 0.0;
    OptimState st(c, 4);
    std::vector<double> p{1, -2, 3, 0.5};
    const auto before = p;
    for (int k = 0; k < 5; ++k) opt_step(st, p, std::vector<double>(4, 0.0));
    EXPECT_EQ(p, before);
    EXPECT_EQ(st.step, 5u);
}

TEST(Adam, FirstStepMovesAgainstGradientByLr) {
    AdamConfig c;
    c.weight_decay = 0.0;
    OptimState st(c, 3);
    std::vector<double> p{0, 0, 0};
    opt_step(st, p, {2.0, -0.5, 1e-3});
    // bias-corrected step 1: m_hat = g, v_hat = g^2, update = -lr * g / (|g| + eps)
    EXPECT_NEAR(p[0], -3e-4 * 2.0 / (2.0 + 1e-8), 1e-15);
    EXPECT_NEAR(p[1], 3e-4 * 0.5 / (0.5 + 1e-8), 1e-15);
    EXPECT_LT(p[2], 0.0);
}

TEST(Adam, DecoupledDecayShrinksParams) {
    AdamConfig c;
    c.lr = 0.1;
    c.weight_decay = 0.5;
    OptimState st(c, 1);
    std::vector<double> p{2.0};
    opt_step(st, p, {0.0});
    EXPECT_DOUBLE_EQ(p[0], 2.0 * (1 - 0.1 * 0.5));
}

TEST(Schedule, CosineEndpoints) {
    AdamConfig c;
    c.total_steps = 1000;
    EXPECT_DOUBLE_EQ(lr_at(c, 0), 3e-4);
    EXPECT_DOUBLE_EQ(lr_at(c, 1000), 1e-5);
    EXPECT_DOUBLE_EQ(lr_at(c, 5000), 1e-5);
    EXPECT_NEAR(lr_at(c, 500), 0.5 * (3e-4 + 1e-5), 1e-15);
    for (std::uint64_t s = 1; s <= 1000; ++s) EXPECT_LE(lr_at(c, s), lr_at(c, s - 1));
}

TEST(Clip, RescalesOnlyAboveThreshold) {
    std::vector<double> g{3, 4};
    EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 5.0);
    EXPECT_NEAR(std::hypot(g[0], g[1]), 1.0, 1e-15);
    std::vector<double> s{0.3, 0.4};
    clip_grad_norm(s, 1.0);
    EXPECT_EQ(s, (std::vector<double>{0.3, 0.4}));
}

TEST(Checkpoint, HexFloatRoundTripsEdgeValues) {
    for (double v : {0.0, -0.0, 1.0, -1.5e-300, 4.9e-324, 1.7976931348623157e308, 0.1}) {
        const double back = parse_hex(format_hex(v));
        EXPECT_EQ(back, v);
        EXPECT_EQ(std::signbit(back), std::signbit(v));
    }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdenticalAndReproducesVelocity) {
    Rng rng = make_stream(7, "ck");
    Checkpoint ck{VelocityNet(small_arch(true, true)), OptimState{}, {{"task", "slap"}, {"epoch", "3"}}};
    init_params(ck.net, rng);
    ck.optim = OptimState(AdamConfig{}, ck.net.param_count());
    opt_step(ck.optim, ck.net.params(), std::vector<double>(ck.net.param_count(), 0.1));
    const std::string p1 = tmp_path("ck1.txt"), p2 = tmp_path("ck2.txt");
    save_checkpoint(ck, p1);
    const Checkpoint back = load_checkpoint(p1);
    save_checkpoint(back, p2);
    EXPECT_EQ(read_file(p1), read_file(p2));
    EXPECT_EQ(back.net.params(), ck.net.params());
    EXPECT_EQ(back.optim, ck.optim);
    EXPECT_EQ(back.meta, ck.meta);

    const SquareMatrix x = noisy_uniform_start(4, 0.5, rng);
    const std::vector<double> obs{1, 2, 3, 4, 5};
    EXPECT_EQ(velocity(ck.net, x, encode_context(ck.net, obs), 0.2), velocity(back.net, x, encode_context(back.net, obs), 0.2));
}

TEST(Checkpoint, ErrorsAreClassified) {
    Checkpoint ck{VelocityNet(small_arch(false)), OptimState{}, {}};
    ck.optim = OptimState(AdamConfig{}, ck.net.param_count());
    const std::string text = serialize_checkpoint(ck);
    EXPECT_THROW(parse_checkpoint(text, 5), DimensionError);
    std::string wrong_version = text;
    wrong_version.replace(wrong_version.find(" 1\n"), 3, " 7\n");
    EXPECT_THROW(parse_checkpoint(wrong_version), VersionError);
    EXPECT_THROW(parse_checkpoint(text.substr(0, text.size() / 2)), CorruptFileError);
    EXPECT_THROW(parse_checkpoint("garbage\n"), CorruptFileError);
    EXPECT_THROW(load_checkpoint(tmp_path("missing_ck.txt")), IoError);
}
