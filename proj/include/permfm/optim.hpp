#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "permfm/errors.hpp"

namespace permfm {

struct AdamConfig {
    double lr = 3e-4;
    double lr_floor = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    /// Length of the cosine schedule in optimizer steps; 0 keeps lr constant.
    std::uint64_t total_steps = 0;

    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct OptimState {
    AdamConfig cfg;
    std::uint64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    OptimState() = default;
    OptimState(AdamConfig c, std::size_t param_count) : cfg(c), m(param_count, 0.0), v(param_count, 0.0) {}

    friend bool operator==(const OptimState&, const OptimState&) = default;
};

/// Cosine decay from lr to lr_floor; lr_at(total_steps) == lr_floor and the
/// floor is held afterwards.
inline double lr_at(const AdamConfig& cfg, std::uint64_t step) {
    if (cfg.total_steps == 0) return cfg.lr;
    if (step >= cfg.total_steps) return cfg.lr_floor;
    const double frac = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
    return cfg.lr_floor + 0.5 * (cfg.lr - cfg.lr_floor) * (1.0 + std::cos(std::numbers::pi * frac));
}

/// Rescales grad in place so its Euclidean norm is at most max_norm (0 disables).
/// Returns the norm before clipping.
inline double clip_grad_norm(std::vector<double>& grad, double max_norm) {
    double sq = 0.0;
    for (double g : grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (double& g : grad) g *= s;
    }
    return norm;
}

/// AdamW: bias-corrected Adam plus weight decay applied directly to the
/// parameters, scaled by the scheduled rate. The k-th call (k = 1, 2, ...) uses
/// lr_at(k), so the final scheduled step runs at the floor.
inline void opt_step(OptimState& st, std::vector<double>& params, const std::vector<double>& grad) {
    if (params.size() != grad.size() || st.m.size() != params.size() || st.v.size() != params.size())
        throw DimensionError("opt_step: parameter, gradient and moment lengths differ");
    ++st.step;
    const auto& c = st.cfg;
    const double lr = lr_at(c, st.step);
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double g = grad[k];
        st.m[k] = c.beta1 * st.m[k] + (1.0 - c.beta1) * g;
        st.v[k] = c.beta2 * st.v[k] + (1.0 - c.beta2) * g * g;
        const double mhat = st.m[k] / bc1;
        const double vhat = st.v[k] / bc2;
        params[k] -= lr * c.weight_decay * params[k];
        params[k] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
}

} // namespace permfm
