#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "permfm/assign.hpp"
#include "permfm/errors.hpp"
#include "permfm/matgeo.hpp"
#include "permfm/net.hpp"
#include "permfm/optim.hpp"
#include "permfm/random.hpp"

namespace permfm {

struct FlowConfig {
    double sigma0 = 0.5;
    /// Path perturbation sigma_t = sigma_path * (1 - t).
    double sigma_path = 0.1;
    int euler_steps = 20;
    int samples = 10;
    double feas_tol = 1e-8;

    void validate() const {
        if (sigma0 < 0.0) throw ConfigError("sigma0 must be >= 0");
        if (sigma_path < 0.0) throw ConfigError("sigma_path must be >= 0");
        if (euler_steps < 1) throw ConfigError("euler_steps must be >= 1");
        if (samples < 1) throw ConfigError("samples must be >= 1");
        if (!(feas_tol > 0.0)) throw ConfigError("feas_tol must be positive");
    }
};

struct TrainConfig {
    FlowConfig flow;
    int epochs = 50;
    int batch_size = 128;
    std::uint64_t seed = 42;
    double clip_norm = 1.0;
    AdamConfig adam;

    void validate() const {
        flow.validate();
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
    }
};

/// What the trainer and sampler need from an instance.
struct FlowItem {
    std::vector<double> obs;
    std::vector<PermMatrix> modes;
};

struct SampleSet {
    std::size_t instance_id = 0;
    std::vector<PermMatrix> samples;
    /// Worst row/column-sum deviation seen along each trajectory.
    std::vector<double> residuals;

    double max_residual() const {
        return residuals.empty() ? 0.0 : *std::max_element(residuals.begin(), residuals.end());
    }
};

/// Closest mode in Frobenius distance; the lowest index wins ties.
inline const PermMatrix& nearest_target(const SquareMatrix& x0, const std::vector<PermMatrix>& modes) {
    if (modes.empty()) throw ConfigError("nearest_target: no modes");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < modes.size(); ++k) {
        const double d = frobenius_dist(x0, modes[k].to_matrix());
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return modes[best];
}

struct PathPoint {
    SquareMatrix x_hat;
    SquareMatrix target_velocity;
};

/// x_t = (1 - t) x0 + t p*, perturbed along the tangent space by sigma_t.
/// The noise is drawn even when sigma_t = 0 so stream consumption does not
/// depend on t.
inline PathPoint sample_path_point(const SquareMatrix& x0, const PermMatrix& p_star, double t, double sigma_t, Rng& rng) {
    if (t < 0.0 || t > 1.0) throw ConfigError("sample_path_point: t outside [0, 1]");
    if (sigma_t < 0.0) throw ConfigError("sample_path_point: sigma_t must be >= 0");
    const SquareMatrix p = p_star.to_matrix();
    SquareMatrix xt = (1.0 - t) * x0;
    xt.axpy(t, p);
    const SquareMatrix eps = doubly_centered_noise(x0.n(), rng, true);
    if (sigma_t > 0.0) xt.axpy(sigma_t, eps);
    return {std::move(xt), p - x0};
}

inline double sigma_at(const FlowConfig& cfg, double t) { return cfg.sigma_path * (1.0 - t); }

struct EpochLog {
    int epoch = 0; // 1-based
    double cfm_loss = 0.0;
    std::uint64_t step = 0;
};

/// Deterministic minibatch assembly for one optimizer step.
inline CfmBatch make_cfm_batch(const std::vector<FlowItem>& items, const std::vector<std::size_t>& idx,
                               std::size_t n, const FlowConfig& cfg, Rng& rng) {
    const auto b = static_cast<Eigen::Index>(idx.size());
    const auto nn = static_cast<Eigen::Index>(n * n);
    const auto ctx = static_cast<Eigen::Index>(items.at(idx.at(0)).obs.size());
    CfmBatch batch{RowMat(b, ctx), RowMat(b, nn), Eigen::VectorXd(b), RowMat(b, nn)};
    for (Eigen::Index r = 0; r < b; ++r) {
        const FlowItem& it = items[idx[static_cast<std::size_t>(r)]];
        if (static_cast<Eigen::Index>(it.obs.size()) != ctx) throw DimensionError("training items differ in observable width");
        for (Eigen::Index c = 0; c < ctx; ++c) batch.obs(r, c) = it.obs[static_cast<std::size_t>(c)];
        const SquareMatrix x0 = noisy_uniform_start(n, cfg.sigma0, rng);
        const PermMatrix& p_star = nearest_target(x0, it.modes);
        const double t = uniform01(rng);
        const PathPoint pp = sample_path_point(x0, p_star, t, sigma_at(cfg, t), rng);
        for (Eigen::Index c = 0; c < nn; ++c) {
            batch.x(r, c) = pp.x_hat.raw()[static_cast<std::size_t>(c)];
            batch.target(r, c) = pp.target_velocity.raw()[static_cast<std::size_t>(c)];
        }
        batch.t(r) = t;
    }
    return batch;
}

/// Runs epochs [start_epoch, cfg.epochs). Batch order comes from the stream
/// (seed, "shuffle", epoch) and path noise from (seed, "noise", step), so a
/// run resumed at an epoch boundary retraces the uninterrupted one exactly.
/// on_epoch may return false to stop early.
inline std::vector<EpochLog> train(VelocityNet& net, OptimState& opt, const std::vector<FlowItem>& items,
                                   const TrainConfig& cfg, int start_epoch = 0,
                                   const std::function<bool(const EpochLog&)>& on_epoch = {}) {
    cfg.validate();
    if (items.empty()) throw ConfigError("train: empty dataset");
    if (opt.m.size() != net.param_count()) throw DimensionError("train: optimizer state does not match network");
    const std::size_t n = net.n();
    for (const auto& it : items) {
        if (it.modes.empty() || it.modes[0].n() != n) throw DimensionError("train: instance size differs from network n");
    }

    std::vector<EpochLog> logs;
    std::vector<std::size_t> order(items.size());
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng = make_stream(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t first = 0; first < order.size(); first += bs) {
            const std::size_t last = std::min(order.size(), first + bs);
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(first),
                                               order.begin() + static_cast<std::ptrdiff_t>(last));
            Rng noise = make_stream(cfg.seed, "noise", opt.step);
            const CfmBatch batch = make_cfm_batch(items, idx, n, cfg.flow, noise);
            CfmGrad g;
            try {
                g = grad_cfm(net, batch);
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch + 1) + ", batch starting at " +
                                   std::to_string(first) + ": " + e.what());
            }
            clip_grad_norm(g.grad, cfg.clip_norm);
            opt_step(opt, net.params(), g.grad);
            loss_sum += g.loss * static_cast<double>(idx.size());
            seen += idx.size();
        }
        EpochLog log{epoch + 1, loss_sum / static_cast<double>(seen), opt.step};
        if (!std::isfinite(log.cfm_loss)) throw NumericError("epoch " + std::to_string(epoch + 1) + ": non-finite loss");
        logs.push_back(log);
        if (on_epoch && !on_epoch(log)) break;
    }
    return logs;
}

namespace detail {

inline double row_affine_residual(const double* x, std::size_t n) {
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double r = 0.0, c = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            r += x[i * n + j];
            c += x[j * n + i];
        }
        worst = std::max({worst, std::abs(r - 1.0), std::abs(c - 1.0)});
    }
    return worst;
}

/// x += step * v with Kahan compensation carried in `comp`. Plain
/// accumulation lets round-off drift grow with the number of steps, linearly
/// so when the velocity repeats from step to step.
inline void compensated_step(double* x, double* comp, const double* v, double step, std::size_t len) {
    for (std::size_t i = 0; i < len; ++i) {
        const double y = step * v[i] - comp[i];
        const double sum = x[i] + y;
        comp[i] = (sum - x[i]) - y;
        x[i] = sum;
    }
}

inline PermMatrix round_row(const double* x, std::size_t n) {
    return round_to_perm(SquareMatrix(n, std::vector<double>(x, x + n * n)));
}

} // namespace detail

/// Euler integration of K trajectories from independent noisy starts. Every
/// intermediate state is checked against the affine constraints.
inline SampleSet sample(const VelocityNet& net, const std::vector<double>& obs, const FlowConfig& cfg, Rng& rng,
                        std::size_t instance_id = 0) {
    cfg.validate();
    const std::size_t n = net.n();
    const auto k = static_cast<Eigen::Index>(cfg.samples);
    const auto nn = static_cast<Eigen::Index>(n * n);
    const Eigen::RowVectorXd h1 = encode_context(net, obs);
    const RowMat h = h1.replicate(k, 1);

    RowMat x(k, nn);
    for (Eigen::Index r = 0; r < k; ++r) {
        const SquareMatrix x0 = noisy_uniform_start(n, cfg.sigma0, rng);
        std::copy(x0.raw().begin(), x0.raw().end(), x.row(r).data());
    }
    SampleSet out;
    out.instance_id = instance_id;
    out.residuals.assign(static_cast<std::size_t>(k), 0.0);
    for (Eigen::Index r = 0; r < k; ++r)
        out.residuals[static_cast<std::size_t>(r)] = detail::row_affine_residual(x.row(r).data(), n);

    const double dt = 1.0 / static_cast<double>(cfg.euler_steps);
    Eigen::VectorXd t(k);
    RowMat comp = RowMat::Zero(k, nn);
    for (int s = 0; s < cfg.euler_steps; ++s) {
        t.setConstant(static_cast<double>(s) * dt);
        const RowMat v = velocity_batch(net, x, h, t);
        detail::compensated_step(x.data(), comp.data(), v.data(), dt, static_cast<std::size_t>(x.size()));
        for (Eigen::Index r = 0; r < k; ++r) {
            double& worst = out.residuals[static_cast<std::size_t>(r)];
            const double res = detail::row_affine_residual(x.row(r).data(), n);
            if (!(res <= cfg.feas_tol)) {
                throw FeasibilityError("trajectory " + std::to_string(r) + " left the constraint manifold at step " +
                                       std::to_string(s + 1) + " (residual " + std::to_string(res) + ")");
            }
            worst = std::max(worst, res);
        }
    }
    for (Eigen::Index r = 0; r < k; ++r) out.samples.push_back(detail::round_row(x.row(r).data(), n));
    return out;
}

/// Straight-line transport with the ideal velocity p* - x0 toward the nearest
/// mode; no network involved.
inline SampleSet oracle_velocity_sample(const std::vector<PermMatrix>& modes, const FlowConfig& cfg, Rng& rng) {
    cfg.validate();
    if (modes.empty()) throw ConfigError("oracle_velocity_sample: no modes");
    const std::size_t n = modes[0].n();
    const double dt = 1.0 / static_cast<double>(cfg.euler_steps);
    SampleSet out;
    for (int k = 0; k < cfg.samples; ++k) {
        SquareMatrix x = noisy_uniform_start(n, cfg.sigma0, rng);
        const SquareMatrix v = nearest_target(x, modes).to_matrix() - x;
        double worst = affine_residual(x);
        std::vector<double> comp(x.size(), 0.0);
        for (int s = 0; s < cfg.euler_steps; ++s) {
            detail::compensated_step(x.values().data(), comp.data(), v.values().data(), dt, x.size());
            const double res = affine_residual(x);
            if (!(res <= cfg.feas_tol)) throw FeasibilityError("oracle trajectory left the constraint manifold");
            worst = std::max(worst, res);
        }
        out.samples.push_back(round_to_perm(x));
        out.residuals.push_back(worst);
    }
    return out;
}

/// Largest row/column-sum deviation over every step of every trajectory.
/// Unlike sample(), this does not stop at the tolerance; it reports.
inline double measure_trajectory_feasibility(const VelocityNet& net, const std::vector<double>& obs,
                                             const FlowConfig& cfg, Rng& rng) {
    FlowConfig loose = cfg;
    loose.feas_tol = std::numeric_limits<double>::max();
    return sample(net, obs, loose, rng).max_residual();
}

} // namespace permfm
