#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "permfm/errors.hpp"
#include "permfm/matgeo.hpp"
#include "permfm/random.hpp"

namespace permfm {

struct Assignment {
    PermMatrix perm;
    double total_cost = 0.0;
};

namespace detail {
inline void require_finite(const SquareMatrix& m, const char* who) {
    if (!m.all_finite()) throw NumericError(std::string(who) + ": non-finite entry");
}
} // namespace detail

/// Minimum-cost assignment, O(n^3) shortest augmenting path with potentials.
/// Among equal-cost optima the returned one is implementation-defined; only the
/// objective value is part of the contract.
inline Assignment hungarian_min(const SquareMatrix& cost) {
    detail::require_finite(cost, "hungarian_min");
    const std::size_t n = cost.n();
    constexpr double inf = std::numeric_limits<double>::infinity();
    // 1-based arrays; column 0 is the virtual source.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);

    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> assign(n, -1);
    for (std::size_t j = 1; j <= n; ++j) assign[p[j] - 1] = static_cast<int>(j - 1);
    PermMatrix perm(std::move(assign));
    const double total = assignment_cost(cost, perm);
    return {std::move(perm), total};
}

inline constexpr std::size_t brute_force_max_n = 9;

/// Exhaustive minimum over all n! permutations. Among minimisers (equal up to
/// 1e-12 relative) the lexicographically smallest assignment wins.
inline Assignment brute_force_min(const SquareMatrix& cost) {
    detail::require_finite(cost, "brute_force_min");
    const std::size_t n = cost.n();
    if (n > brute_force_max_n) {
        throw DimensionError("brute_force_min: n = " + std::to_string(n) + " exceeds " +
                             std::to_string(brute_force_max_n));
    }
    std::vector<int> a(n);
    std::iota(a.begin(), a.end(), 0);
    std::vector<int> best = a;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) c += cost(i, static_cast<std::size_t>(a[i]));
        const double tie = 1e-12 * std::max(1.0, std::abs(best_cost));
        if (c < best_cost - (std::isfinite(best_cost) ? tie : 0.0)) {
            best_cost = c;
            best = a;
        }
    } while (std::next_permutation(a.begin(), a.end()));
    return {PermMatrix(std::move(best)), best_cost};
}

/// Nearest permutation in the inner-product sense: argmax_P <x, P>.
inline PermMatrix round_to_perm(const SquareMatrix& x) { return hungarian_min(-x).perm; }

struct SinkhornResult {
    SquareMatrix matrix;
    int iters_run = 0;
    double max_marginal_residual = 0.0;
    /// Residual after each full row+column sweep.
    std::vector<double> residual_trace;
};

namespace detail {
inline double log_sum_exp(const double* first, std::size_t count, std::size_t stride) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < count; ++k) m = std::max(m, first[k * stride]);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (std::size_t k = 0; k < count; ++k) s += std::exp(first[k * stride] - m);
    return m + std::log(s);
}

inline double exp_marginal_residual(const std::vector<double>& logk, std::size_t n) {
    double worst = 0.0;
    std::vector<double> col(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double r = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(logk[i * n + j]);
            r += e;
            col[j] += e;
        }
        worst = std::max(worst, std::abs(r - 1.0));
    }
    for (double c : col) worst = std::max(worst, std::abs(c - 1.0));
    return worst;
}
} // namespace detail

/// Entropic projection of exp(score / tau) onto the Birkhoff polytope by
/// alternating row and column normalisation, carried out entirely in log
/// space. The residual is measured, never assumed to vanish.
inline SinkhornResult sinkhorn_log(const SquareMatrix& score, double tau, int iters) {
    if (!(tau > 0.0)) throw ConfigError("sinkhorn_log: tau must be positive");
    if (iters < 1) throw ConfigError("sinkhorn_log: iters must be >= 1");
    detail::require_finite(score, "sinkhorn_log");
    const std::size_t n = score.n();
    std::vector<double> logk(score.raw());
    for (double& v : logk) v /= tau;

    SinkhornResult res;
    res.residual_trace.reserve(static_cast<std::size_t>(iters));
    for (int it = 0; it < iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            const double lse = detail::log_sum_exp(&logk[i * n], n, 1);
            if (!std::isfinite(lse)) {
                throw NumericError("sinkhorn_log: non-finite row normaliser at iteration " + std::to_string(it) +
                                   " (tau too small for the score scale?)");
            }
            for (std::size_t j = 0; j < n; ++j) logk[i * n + j] -= lse;
        }
        for (std::size_t j = 0; j < n; ++j) {
            const double lse = detail::log_sum_exp(&logk[j], n, n);
            if (!std::isfinite(lse)) {
                throw NumericError("sinkhorn_log: non-finite column normaliser at iteration " + std::to_string(it) +
                                   " (tau too small for the score scale?)");
            }
            for (std::size_t i = 0; i < n; ++i) logk[i * n + j] -= lse;
        }
        res.residual_trace.push_back(detail::exp_marginal_residual(logk, n));
    }
    for (double& v : logk) {
        v = std::exp(v);
        if (!std::isfinite(v)) throw NumericError("sinkhorn_log: non-finite output entry");
    }
    res.matrix = SquareMatrix(n, std::move(logk));
    res.iters_run = iters;
    res.max_marginal_residual = res.residual_trace.back();
    return res;
}

/// Standard Gumbel by inverse CDF, u clamped to [1e-12, 1 - 1e-12].
inline double gumbel_sample(Rng& rng) {
    const double u = std::clamp(uniform01(rng), 1e-12, 1.0 - 1e-12);
    return -std::log(-std::log(u));
}

/// k independent Gumbel-Sinkhorn draws: perturb the score with iid Gumbel
/// noise, run log-domain Sinkhorn on (score + G) / tau, round each result.
inline std::vector<PermMatrix> gumbel_sinkhorn_sample(const SquareMatrix& score, double tau, int iters, int k,
                                                      Rng& rng) {
    if (k < 1) throw ConfigError("gumbel_sinkhorn_sample: k must be >= 1");
    std::vector<PermMatrix> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int s = 0; s < k; ++s) {
        SquareMatrix perturbed = score;
        for (double& v : perturbed.values()) v += gumbel_sample(rng);
        out.push_back(round_to_perm(sinkhorn_log(perturbed, tau, iters).matrix));
    }
    return out;
}

} // namespace permfm
