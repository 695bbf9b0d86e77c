#pragma once

// Property checks shared by the `verify` subcommand and the acceptance gate.
// Each check returns the worst observed statistic next to its bound.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "permfm/assign.hpp"
#include "permfm/flow.hpp"
#include "permfm/instances.hpp"
#include "permfm/matgeo.hpp"
#include "permfm/net.hpp"
#include "permfm/random.hpp"

namespace permfm {

using CenterFn = std::function<SquareMatrix(const SquareMatrix&)>;

struct PropertyResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

/// Drops the grand-mean term. Used as a negative control.
inline SquareMatrix broken_center(const SquareMatrix& u) {
    const std::size_t n = u.n();
    SquareMatrix out = center(u);
    double grand = 0.0;
    for (double v : u.values()) grand += v;
    grand /= static_cast<double>(n * n);
    for (double& v : out.values()) v -= grand;
    return out;
}

namespace detail {

inline SquareMatrix random_matrix(std::size_t n, Rng& rng, double scale = 1.0) {
    SquareMatrix m(n);
    for (double& v : m.values()) v = scale * standard_normal(rng);
    return m;
}

inline std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

template <class F>
PropertyResult timed(const std::string& name, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    PropertyResult r = body();
    r.name = name;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

} // namespace detail

struct ProjectorStats {
    double idempotency = 0.0;    // ||C(C(U)) - C(U)|| / ||U||
    double self_adjoint = 0.0;   // |<C(A),B> - <A,C(B)>| / (||A|| ||B||)
    double sandwich = 0.0;       // max entry |C(U) - (I-J)U(I-J)|
    double image = 0.0;          // max row/col sum of C(U)
    double tangent_fixed = 0.0;  // max entry |C(D) - D| for D in T
    double orthogonality = 0.0;  // |<U - C(U), C(V)>| / (||U|| ||V||)
    int matrices = 0;
};

/// Random U with n cycling over {2, ..., 12}. Scales vary over six decades so
/// the relative bounds are exercised.
inline ProjectorStats projector_stats(const CenterFn& c, int count, std::uint64_t seed) {
    ProjectorStats st;
    Rng rng = make_stream(seed, "projector");
    for (int k = 0; k < count; ++k) {
        const std::size_t n = 2 + static_cast<std::size_t>(k) % 11;
        const double scale = std::pow(10.0, uniform(rng, -3.0, 3.0));
        const SquareMatrix u = detail::random_matrix(n, rng, scale);
        const SquareMatrix v = detail::random_matrix(n, rng, scale);
        const SquareMatrix cu = c(u);
        const SquareMatrix cv = c(v);
        const double nu = frobenius_norm(u), nv = frobenius_norm(v);

        st.idempotency = std::max(st.idempotency, frobenius_dist(c(cu), cu) / nu);
        st.self_adjoint = std::max(st.self_adjoint, std::abs(inner(cu, v) - inner(u, cv)) / (nu * nv));

        const SquareMatrix ij = SquareMatrix::identity(n) - SquareMatrix::uniform(n);
        const SquareMatrix sw = matmul(matmul(ij, u), ij);
        for (std::size_t q = 0; q < sw.size(); ++q) {
            const double tol_scale = std::max(1.0, nu);
            st.sandwich = std::max(st.sandwich, std::abs(sw.values()[q] - cu.values()[q]) / tol_scale);
        }
        st.image = std::max(st.image, tangent_residual(cu) / std::max(1.0, nu));

        const SquareMatrix d = center(detail::random_matrix(n, rng, scale));
        SquareMatrix diff = c(d) - d;
        double worst = 0.0;
        for (double x : diff.values()) worst = std::max(worst, std::abs(x));
        st.tangent_fixed = std::max(st.tangent_fixed, worst / std::max(1.0, frobenius_norm(d)));

        st.orthogonality = std::max(st.orthogonality, std::abs(inner(u - cu, cv)) / (nu * nv));
        ++st.matrices;
    }
    return st;
}

/// Bounds (relative to the operand scale where one is given):
/// idempotency 1e-10, self-adjointness 1e-10, sandwich 1e-12 per entry,
/// image 1e-10, orthogonality 1e-10.
inline std::vector<PropertyResult> check_projector(const CenterFn& c, int count, std::uint64_t seed) {
    ProjectorStats st;
    const auto t0 = std::chrono::steady_clock::now();
    st = projector_stats(c, count, seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto mk = [&](const char* name, double v, double bound) {
        return PropertyResult{name, v <= bound,
                              "worst " + detail::fmt_g(v) + " <= " + detail::fmt_g(bound) + " over " +
                                  std::to_string(st.matrices) + " matrices",
                              secs / 6.0};
    };
    return {mk("projector idempotency", st.idempotency, 1e-10),
            mk("projector self-adjointness", st.self_adjoint, 1e-10),
            mk("projector sandwich identity", st.sandwich, 1e-12),
            mk("projector image (zero sums)", st.image, 1e-10),
            mk("projector fixes tangent space", st.tangent_fixed, 1e-12),
            mk("projector orthogonality", st.orthogonality, 1e-10)};
}

inline PropertyResult check_hungarian_vs_brute(int count, std::size_t max_n, std::uint64_t seed) {
    return detail::timed("hungarian equals brute force", [&] {
        Rng rng = make_stream(seed, "hungarian");
        double worst = 0.0;
        for (int k = 0; k < count; ++k) {
            const std::size_t n = 2 + static_cast<std::size_t>(k) % (max_n - 1);
            SquareMatrix c = detail::random_matrix(n, rng);
            if (k % 3 == 0) {
                // integer costs produce many ties
                for (double& v : c.values()) v = std::round(2.0 * v);
            }
            worst = std::max(worst, std::abs(hungarian_min(c).total_cost - brute_force_min(c).total_cost));
        }
        return PropertyResult{"", worst <= 1e-9,
                              "worst |diff| " + detail::fmt_g(worst) + " <= 1e-09 over " + std::to_string(count) +
                                  " instances, n <= " + std::to_string(max_n)};
    });
}

inline PropertyResult check_symmetric_degeneracy(int count, std::uint64_t seed) {
    return detail::timed("symmetric cost ties P and P^-1", [&] {
        Rng rng = make_stream(seed, "symmetric");
        int bad = 0;
        for (int k = 0; k < count; ++k) {
            const std::size_t n = 3 + static_cast<std::size_t>(k) % 8;
            const SquareMatrix r = detail::random_matrix(n, rng);
            const SquareMatrix c = 0.5 * (r + r.transpose());
            std::vector<int> a(n);
            std::iota(a.begin(), a.end(), 0);
            std::shuffle(a.begin(), a.end(), rng);
            const PermMatrix p(a);
            // same multiset of entries; compare sorted sums to avoid order effects
            std::vector<double> x, y;
            for (std::size_t i = 0; i < n; ++i) {
                x.push_back(c(i, static_cast<std::size_t>(p[i])));
                y.push_back(c(i, static_cast<std::size_t>(p.inverse()[i])));
            }
            std::sort(x.begin(), x.end());
            std::sort(y.begin(), y.end());
            bad += x != y;
        }
        return PropertyResult{"", bad == 0, std::to_string(bad) + " mismatches over " + std::to_string(count) + " matrices"};
    });
}

struct GradCheckStats {
    double worst_rel = 0.0;
    int coords = 0;
};

/// Central differences (h = 1e-5) on `per_layer` random coordinates of every
/// weight block and every bias block. Relative error uses
/// max(|analytic|, |numeric|, 1e-6) as denominator.
inline GradCheckStats gradient_check(const NetArch& arch, int per_layer, std::uint64_t seed) {
    Rng rng = make_stream(seed, "gradcheck");
    VelocityNet net(arch);
    init_params(net, rng, 1.0);
    for (double& p : net.params()) p += 0.05 * standard_normal(rng); // non-zero biases
    const std::size_t n = arch.n;
    const Eigen::Index b = 3;
    const auto nn = static_cast<Eigen::Index>(n * n);
    CfmBatch batch{RowMat(b, static_cast<Eigen::Index>(arch.ctx_dim)), RowMat(b, nn), Eigen::VectorXd(b), RowMat(b, nn)};
    for (Eigen::Index r = 0; r < b; ++r) {
        for (Eigen::Index c = 0; c < batch.obs.cols(); ++c) batch.obs(r, c) = standard_normal(rng);
        const SquareMatrix x0 = noisy_uniform_start(n, 0.5, rng);
        std::vector<int> a(n);
        std::iota(a.begin(), a.end(), 0);
        std::shuffle(a.begin(), a.end(), rng);
        const double t = uniform01(rng);
        const PathPoint pp = sample_path_point(x0, PermMatrix(a), t, 0.1 * (1 - t), rng);
        for (Eigen::Index c = 0; c < nn; ++c) {
            batch.x(r, c) = pp.x_hat.raw()[static_cast<std::size_t>(c)];
            batch.target(r, c) = pp.target_velocity.raw()[static_cast<std::size_t>(c)];
        }
        batch.t(r) = t;
    }
    const CfmGrad g = grad_cfm(net, batch);
    GradCheckStats st;
    auto probe = [&](std::size_t off, std::size_t len) {
        for (int q = 0; q < per_layer; ++q) {
            const std::size_t k = off + uniform_index(rng, len);
            const double saved = net.params()[k];
            const double h = 1e-5;
            net.params()[k] = saved + h;
            const double lp = cfm_loss(net, batch);
            net.params()[k] = saved - h;
            const double lm = cfm_loss(net, batch);
            net.params()[k] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double rel = std::abs(fd - g.grad[k]) / std::max({std::abs(fd), std::abs(g.grad[k]), 1e-6});
            st.worst_rel = std::max(st.worst_rel, rel);
            ++st.coords;
        }
    };
    for (const auto* layers : {&net.encoder_layers(), &net.head_layers()}) {
        for (const auto& l : *layers) {
            probe(l.w_off, l.in * l.out);
            probe(l.b_off, l.out);
        }
    }
    return st;
}

inline PropertyResult check_gradients(const NetArch& arch, const std::string& label, int per_layer, std::uint64_t seed) {
    return detail::timed("gradient check (" + label + ")", [&] {
        const GradCheckStats st = gradient_check(arch, per_layer, seed);
        return PropertyResult{"", st.worst_rel <= 1e-4,
                              "worst relative error " + detail::fmt_g(st.worst_rel) + " <= 1e-04 over " +
                                  std::to_string(st.coords) + " coordinates"};
    });
}

struct FeasibilityRun {
    int steps = 0;
    double max_residual = 0.0;
    double mean_residual = 0.0;
};

/// Max residual over `nets` random parameter vectors per step count. Each
/// network gets random observables and one trajectory per step count.
inline std::vector<FeasibilityRun> feasibility_sweep(const NetArch& arch, int nets, const std::vector<int>& steps,
                                                     double sigma0, std::uint64_t seed) {
    std::vector<FeasibilityRun> out;
    for (int s : steps) out.push_back({s, 0.0, 0.0});
    for (int k = 0; k < nets; ++k) {
        Rng rng = make_stream(seed, "feasibility", static_cast<std::uint64_t>(k));
        VelocityNet net(arch);
        init_params(net, rng, 1.0);
        for (std::size_t p = 0; p < net.param_count(); p += 1) net.params()[p] += 0.1 * standard_normal(rng);
        std::vector<double> obs(arch.ctx_dim);
        for (double& o : obs) o = standard_normal(rng);
        for (std::size_t q = 0; q < steps.size(); ++q) {
            FlowConfig cfg;
            cfg.sigma0 = sigma0;
            cfg.euler_steps = steps[q];
            cfg.samples = 1;
            Rng traj = make_stream(seed, "feasibility-traj", static_cast<std::uint64_t>(k));
            const double r = measure_trajectory_feasibility(net, obs, cfg, traj);
            out[q].max_residual = std::max(out[q].max_residual, r);
            out[q].mean_residual += r / nets;
        }
    }
    return out;
}

struct VoronoiStats {
    std::vector<double> oracle_freq;
    std::vector<double> cell_mass;
    std::vector<double> z;
    double max_abs_z = 0.0;
};

/// Oracle-transport frequencies against Voronoi masses estimated from an
/// independent set of noise draws classified directly.
inline VoronoiStats voronoi_unbiasedness(const std::vector<PermMatrix>& modes, int draws, double sigma0,
                                         std::uint64_t seed) {
    const std::size_t m = modes.size();
    const std::size_t n = modes[0].n();
    VoronoiStats st;
    st.oracle_freq.assign(m, 0.0);
    st.cell_mass.assign(m, 0.0);

    FlowConfig cfg;
    cfg.sigma0 = sigma0;
    cfg.samples = draws;
    cfg.euler_steps = 20;
    Rng oracle_rng = make_stream(seed, "voronoi-oracle");
    const SampleSet s = oracle_velocity_sample(modes, cfg, oracle_rng);
    for (const auto& p : s.samples)
        for (std::size_t i = 0; i < m; ++i) st.oracle_freq[i] += (p == modes[i]);

    Rng mass_rng = make_stream(seed, "voronoi-mass");
    for (int d = 0; d < draws; ++d) {
        const SquareMatrix x0 = noisy_uniform_start(n, sigma0, mass_rng);
        const PermMatrix& t = nearest_target(x0, modes);
        for (std::size_t i = 0; i < m; ++i) st.cell_mass[i] += (t == modes[i]);
    }
    const double nd = static_cast<double>(draws);
    for (std::size_t i = 0; i < m; ++i) {
        st.oracle_freq[i] /= nd;
        st.cell_mass[i] /= nd;
        const double p = 0.5 * (st.oracle_freq[i] + st.cell_mass[i]);
        const double sd = std::sqrt(std::max(p * (1.0 - p), 1e-12) * 2.0 / nd);
        const double z = (st.oracle_freq[i] - st.cell_mass[i]) / sd;
        st.z.push_back(z);
        st.max_abs_z = std::max(st.max_abs_z, std::abs(z));
    }
    return st;
}

/// Deterministic Sinkhorn followed by rounding returns the same permutation
/// on every call.
inline PropertyResult check_sinkhorn_determinism(int repeats, std::uint64_t seed) {
    return detail::timed("sinkhorn + rounding is a point mass", [&] {
        Rng rng = make_stream(seed, "sinkhorn-determinism");
        const SquareMatrix score = detail::random_matrix(8, rng);
        const PermMatrix first = round_to_perm(sinkhorn_log(score, 0.5, 20).matrix);
        int distinct = 0;
        for (int k = 1; k < repeats; ++k) distinct += round_to_perm(sinkhorn_log(score, 0.5, 20).matrix) != first;
        return PropertyResult{"", distinct == 0,
                              std::to_string(distinct) + " deviating outputs over " + std::to_string(repeats) + " calls"};
    });
}

/// Three permutations with unequal Voronoi cells: identity, one transposition
/// and a 3-cycle.
inline std::vector<PermMatrix> three_mode_set(std::size_t n) {
    std::vector<int> id(n), sw(n), cyc(n);
    std::iota(id.begin(), id.end(), 0);
    sw = id;
    std::swap(sw[0], sw[1]);
    cyc = id;
    cyc[2] = 3;
    cyc[3] = 4;
    cyc[4] = 2;
    return {PermMatrix(id), PermMatrix(sw), PermMatrix(cyc)};
}

inline std::vector<PermMatrix> two_mode_set(std::size_t n) {
    std::vector<int> a(n);
    std::iota(a.begin(), a.end(), 0);
    std::vector<int> b = a;
    std::swap(b[2], b[5]);
    return {PermMatrix(a), PermMatrix(b)};
}

struct SuiteOptions {
    CenterFn center_fn = [](const SquareMatrix& u) { return center(u); };
    std::uint64_t seed = 7;
    int projector_matrices = 500;
    int hungarian_instances = 1000;
    int voronoi_draws = 100000;
    int feasibility_nets = 10;
    std::vector<int> feasibility_steps{10, 100, 1000};
    int grad_coords_per_layer = 50;
};

inline NetArch default_arch(Task task, std::size_t n) {
    NetArch a;
    a.n = n;
    a.ctx_dim = task == Task::slap ? n * n : n;
    a.uses_state = task == Task::slap;
    return a;
}

inline std::vector<PropertyResult> run_property_suite(const SuiteOptions& opt) {
    std::vector<PropertyResult> out = check_projector(opt.center_fn, opt.projector_matrices, opt.seed);
    out.push_back(check_hungarian_vs_brute(opt.hungarian_instances, 6, opt.seed));
    out.push_back(check_symmetric_degeneracy(200, opt.seed));
    out.push_back(check_gradients(default_arch(Task::slap, 8), "slap", opt.grad_coords_per_layer, opt.seed));
    out.push_back(check_gradients(default_arch(Task::sort, 8), "sort", opt.grad_coords_per_layer, opt.seed));
    out.push_back(detail::timed("feasibility under integration", [&] {
        const auto runs = feasibility_sweep(default_arch(Task::slap, 8), opt.feasibility_nets, opt.feasibility_steps, 0.5, opt.seed);
        double worst = 0.0;
        std::string d;
        for (const auto& r : runs) {
            worst = std::max(worst, r.max_residual);
            d += "S=" + std::to_string(r.steps) + ":" + detail::fmt_g(r.max_residual) + " ";
        }
        return PropertyResult{"", worst <= 1e-8, d + "<= 1e-08"};
    }));
    for (const auto& [label, modes] : {std::pair{std::string("2 modes"), two_mode_set(8)},
                                       std::pair{std::string("3 modes"), three_mode_set(8)}}) {
        out.push_back(detail::timed("voronoi unbiasedness (" + label + ")", [&] {
            const VoronoiStats st = voronoi_unbiasedness(modes, opt.voronoi_draws, 0.5, opt.seed);
            std::string d = "freq/mass";
            for (std::size_t i = 0; i < modes.size(); ++i)
                d += " " + detail::fmt_g(st.oracle_freq[i]) + "/" + detail::fmt_g(st.cell_mass[i]);
            return PropertyResult{"", st.max_abs_z <= 3.0, d + ", max |z| " + detail::fmt_g(st.max_abs_z) + " <= 3"};
        }));
    }
    out.push_back(check_sinkhorn_determinism(100, opt.seed));
    return out;
}

} // namespace permfm
