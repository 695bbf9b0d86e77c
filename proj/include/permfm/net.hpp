#pragma once

// Feed-forward velocity model with hand-written reverse mode.
//
//   encoder:  observables -> [act] hidden ... -> linear -> h
//   head:     [vec(x) if uses_state, h, t if uses_time] -> [act] hidden ... -> linear -> n*n
//   velocity: center(reshape(head output))
//
// All weights live in one flat vector. Each layer stores W (out x in,
// row-major) followed by b (out).

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "permfm/errors.hpp"
#include "permfm/matgeo.hpp"
#include "permfm/random.hpp"

namespace permfm {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { silu, tanh };

inline std::string to_string(Activation a) { return a == Activation::silu ? "silu" : "tanh"; }

inline Activation parse_activation(const std::string& s) {
    if (s == "silu") return Activation::silu;
    if (s == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + s + "'");
}

struct NetArch {
    std::size_t n = 8;
    std::size_t ctx_dim = 64;
    std::vector<std::size_t> enc_hidden{128, 128};
    std::size_t embed_dim = 128;
    std::vector<std::size_t> head_hidden{256, 256};
    Activation act = Activation::silu;
    bool uses_state = true;
    bool uses_time = false;

    std::size_t head_in() const { return (uses_state ? n * n : 0) + embed_dim + (uses_time ? 1 : 0); }
    friend bool operator==(const NetArch&, const NetArch&) = default;
};

struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t w_off = 0;
    std::size_t b_off = 0;
    bool activated = true;
};

class VelocityNet {
public:
    VelocityNet() = default;

    explicit VelocityNet(NetArch arch) : arch_(std::move(arch)) {
        if (arch_.n < 2) throw ConfigError("VelocityNet: n must be >= 2");
        if (arch_.ctx_dim == 0 || arch_.embed_dim == 0) throw ConfigError("VelocityNet: zero-width layer");
        std::size_t off = 0;
        auto build = [&](std::vector<DenseLayer>& layers, std::size_t in, const std::vector<std::size_t>& hidden,
                         std::size_t out) {
            std::size_t prev = in;
            for (std::size_t k = 0; k <= hidden.size(); ++k) {
                const std::size_t width = k < hidden.size() ? hidden[k] : out;
                if (width == 0) throw ConfigError("VelocityNet: zero-width layer");
                DenseLayer l{prev, width, off, off + prev * width, k < hidden.size()};
                off += prev * width + width;
                layers.push_back(l);
                prev = width;
            }
        };
        build(encoder_, arch_.ctx_dim, arch_.enc_hidden, arch_.embed_dim);
        build(head_, arch_.head_in(), arch_.head_hidden, arch_.n * arch_.n);
        params_.assign(off, 0.0);
    }

    const NetArch& arch() const noexcept { return arch_; }
    std::size_t n() const noexcept { return arch_.n; }
    std::size_t param_count() const noexcept { return params_.size(); }
    std::vector<double>& params() noexcept { return params_; }
    const std::vector<double>& params() const noexcept { return params_; }
    const std::vector<DenseLayer>& encoder_layers() const noexcept { return encoder_; }
    const std::vector<DenseLayer>& head_layers() const noexcept { return head_; }

    void set_params(std::vector<double> p) {
        if (p.size() != params_.size()) {
            throw DimensionError("VelocityNet: expected " + std::to_string(params_.size()) + " parameters, got " +
                                 std::to_string(p.size()));
        }
        params_ = std::move(p);
    }

private:
    NetArch arch_;
    std::vector<DenseLayer> encoder_;
    std::vector<DenseLayer> head_;
    std::vector<double> params_;
};

/// W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), b = 0; the last head layer is
/// scaled by final_scale so initial velocities are small.
inline void init_params(VelocityNet& net, Rng& rng, double final_scale = 0.01) {
    auto& p = net.params();
    std::fill(p.begin(), p.end(), 0.0);
    auto fill_layer = [&](const DenseLayer& l, double scale) {
        const double bound = scale / std::sqrt(static_cast<double>(l.in));
        for (std::size_t k = 0; k < l.in * l.out; ++k) p[l.w_off + k] = uniform(rng, -bound, bound);
    };
    for (const auto& l : net.encoder_layers()) fill_layer(l, 1.0);
    const auto& head = net.head_layers();
    for (std::size_t k = 0; k < head.size(); ++k) fill_layer(head[k], k + 1 == head.size() ? final_scale : 1.0);
}

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline void activate(RowMat& z, Activation act) {
    if (act == Activation::silu) z = z.unaryExpr([](double v) { return v * sigmoid(v); });
    else z = z.array().tanh().matrix();
}

inline RowMat activation_grad(const RowMat& z, Activation act) {
    if (act == Activation::silu) {
        return z.unaryExpr([](double v) {
            const double s = sigmoid(v);
            return s * (1.0 + v * (1.0 - s));
        });
    }
    return z.unaryExpr([](double v) {
        const double th = std::tanh(v);
        return 1.0 - th * th;
    });
}

struct MlpTape {
    std::vector<RowMat> inputs; // input to each layer
    std::vector<RowMat> pre;    // pre-activation of each layer
};

inline RowMat mlp_forward(const std::vector<DenseLayer>& layers, const double* params, const RowMat& x,
                          Activation act, MlpTape* tape) {
    RowMat a = x;
    if (tape) {
        tape->inputs.clear();
        tape->pre.clear();
    }
    for (const auto& l : layers) {
        Eigen::Map<const RowMat> w(params + l.w_off, static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
        Eigen::Map<const Eigen::RowVectorXd> b(params + l.b_off, static_cast<Eigen::Index>(l.out));
        RowMat z = a * w.transpose();
        z.rowwise() += b;
        if (tape) {
            tape->inputs.push_back(std::move(a));
            tape->pre.push_back(z);
        }
        if (l.activated) activate(z, act);
        a = std::move(z);
    }
    return a;
}

/// Accumulates parameter gradients into grad; returns d(loss)/d(input).
inline RowMat mlp_backward(const std::vector<DenseLayer>& layers, const double* params, const MlpTape& tape,
                           RowMat dy, Activation act, double* grad) {
    for (std::size_t k = layers.size(); k-- > 0;) {
        const auto& l = layers[k];
        if (l.activated) dy = dy.cwiseProduct(activation_grad(tape.pre[k], act));
        Eigen::Map<const RowMat> w(params + l.w_off, static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
        Eigen::Map<RowMat> dw(grad + l.w_off, static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
        Eigen::Map<Eigen::RowVectorXd> db(grad + l.b_off, static_cast<Eigen::Index>(l.out));
        dw.noalias() += dy.transpose() * tape.inputs[k];
        // Reduce into an owned vector first: evaluated straight into the
        // unaligned view, the vectorized column sum picks its order from the
        // destination address and identical runs drift apart under AVX.
        const Eigen::RowVectorXd db_step = dy.colwise().sum();
        db += db_step;
        dy = dy * w;
    }
    return dy;
}

inline RowMat head_input(const NetArch& arch, const RowMat& x, const RowMat& h, const Eigen::VectorXd& t) {
    const auto rows = h.rows();
    RowMat in(rows, static_cast<Eigen::Index>(arch.head_in()));
    Eigen::Index col = 0;
    if (arch.uses_state) {
        if (x.cols() != static_cast<Eigen::Index>(arch.n * arch.n) || x.rows() != rows)
            throw DimensionError("head input: state block has wrong shape");
        in.leftCols(x.cols()) = x;
        col += x.cols();
    }
    in.middleCols(col, h.cols()) = h;
    col += h.cols();
    if (arch.uses_time) in.col(col) = t;
    return in;
}

inline void center_rows(RowMat& f, std::size_t n) {
    for (Eigen::Index r = 0; r < f.rows(); ++r) center_inplace(f.row(r).data(), n);
}

} // namespace detail

/// Embeddings for a batch of observables (one row per instance).
inline RowMat encode_batch(const VelocityNet& net, const RowMat& obs) {
    if (obs.cols() != static_cast<Eigen::Index>(net.arch().ctx_dim)) {
        throw DimensionError("encode_context: expected " + std::to_string(net.arch().ctx_dim) + " observables, got " +
                             std::to_string(obs.cols()));
    }
    return detail::mlp_forward(net.encoder_layers(), net.params().data(), obs, net.arch().act, nullptr);
}

inline Eigen::RowVectorXd encode_context(const VelocityNet& net, const std::vector<double>& obs) {
    RowMat o = Eigen::Map<const RowMat>(obs.data(), 1, static_cast<Eigen::Index>(obs.size()));
    return encode_batch(net, o).row(0);
}

/// Raw head outputs f (one n*n row per input row), before centering.
inline RowMat raw_head_batch(const VelocityNet& net, const RowMat& x, const RowMat& h, const Eigen::VectorXd& t) {
    return detail::mlp_forward(net.head_layers(), net.params().data(), detail::head_input(net.arch(), x, h, t),
                               net.arch().act, nullptr);
}

/// Tangent velocities C(f) for a batch of states sharing nothing but parameters.
inline RowMat velocity_batch(const VelocityNet& net, const RowMat& x, const RowMat& h, const Eigen::VectorXd& t) {
    RowMat f = raw_head_batch(net, x, h, t);
    detail::center_rows(f, net.n());
    return f;
}

inline SquareMatrix raw_output(const VelocityNet& net, const SquareMatrix& x, const Eigen::RowVectorXd& h, double t) {
    const std::size_t n = net.n();
    if (x.n() != n) throw DimensionError("velocity: state size mismatch");
    RowMat xs = Eigen::Map<const RowMat>(x.raw().data(), 1, static_cast<Eigen::Index>(n * n));
    RowMat hs = h;
    Eigen::VectorXd ts = Eigen::VectorXd::Constant(1, t);
    RowMat f = raw_head_batch(net, xs, hs, ts);
    return SquareMatrix(n, std::vector<double>(f.data(), f.data() + n * n));
}

inline SquareMatrix velocity(const VelocityNet& net, const SquareMatrix& x, const Eigen::RowVectorXd& h, double t) {
    return center(raw_output(net, x, h, t));
}

/// One regression example: observables, noisy path state, time, target velocity.
struct CfmBatch {
    RowMat obs;
    RowMat x;
    Eigen::VectorXd t;
    RowMat target;

    Eigen::Index size() const { return obs.rows(); }
};

struct CfmGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Mean over the batch of ||C(f) - target||_F^2 and its exact gradient.
/// With r = C(f) - target the gradient w.r.t. f is (2/B) C(r), since C is a
/// symmetric projector.
inline CfmGrad grad_cfm(const VelocityNet& net, const CfmBatch& batch) {
    const auto bsz = batch.size();
    if (bsz == 0) throw ConfigError("grad_cfm: empty batch");
    const std::size_t n = net.n();
    const auto nn = static_cast<Eigen::Index>(n * n);
    if (batch.target.rows() != bsz || batch.target.cols() != nn || batch.t.size() != bsz)
        throw DimensionError("grad_cfm: inconsistent batch shapes");
    const auto& arch = net.arch();
    const double* p = net.params().data();

    detail::MlpTape enc_tape, head_tape;
    RowMat h = detail::mlp_forward(net.encoder_layers(), p, batch.obs, arch.act, &enc_tape);
    RowMat f = detail::mlp_forward(net.head_layers(), p, detail::head_input(arch, batch.x, h, batch.t), arch.act,
                                   &head_tape);
    detail::center_rows(f, n);
    RowMat r = f - batch.target;

    CfmGrad out;
    const Eigen::VectorXd per_sample = r.rowwise().squaredNorm();
    for (Eigen::Index b = 0; b < bsz; ++b) {
        if (!std::isfinite(per_sample(b))) {
            throw NumericError("grad_cfm: non-finite loss at batch index " + std::to_string(b));
        }
    }
    out.loss = per_sample.sum() / static_cast<double>(bsz);

    detail::center_rows(r, n);
    r *= 2.0 / static_cast<double>(bsz);
    out.grad.assign(net.param_count(), 0.0);
    RowMat d_in = detail::mlp_backward(net.head_layers(), p, head_tape, std::move(r), arch.act, out.grad.data());
    const Eigen::Index h_col = arch.uses_state ? nn : 0;
    RowMat dh = d_in.middleCols(h_col, static_cast<Eigen::Index>(arch.embed_dim));
    detail::mlp_backward(net.encoder_layers(), p, enc_tape, std::move(dh), arch.act, out.grad.data());
    return out;
}

/// Loss only, used by finite-difference checks.
inline double cfm_loss(const VelocityNet& net, const CfmBatch& batch) {
    RowMat h = encode_batch(net, batch.obs);
    RowMat v = velocity_batch(net, batch.x, h, batch.t);
    return (v - batch.target).rowwise().squaredNorm().sum() / static_cast<double>(batch.size());
}

} // namespace permfm
