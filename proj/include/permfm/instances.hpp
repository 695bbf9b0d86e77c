#pragma once

// Synthetic tasks with verified ground truth.
//
// SLAP: symmetric costs whose labelled optimum is unique (clean) or consists
// of exactly two matchings that differ by one swapped pair (bimodal).
//
// Sorting: n scalar features on a unit grid. An ambiguous sequence carries one
// blended item alpha * v_a + (1 - alpha) * v_b and admits two ascending sorts,
// one per identification of the blended item.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "permfm/assign.hpp"
#include "permfm/errors.hpp"
#include "permfm/matgeo.hpp"
#include "permfm/random.hpp"

namespace permfm {

enum class Task { slap, sort };

inline std::string to_string(Task t) { return t == Task::slap ? "slap" : "sort"; }

inline Task parse_task(const std::string& s) {
    if (s == "slap") return Task::slap;
    if (s == "sort") return Task::sort;
    throw ConfigError("unknown task '" + s + "' (expected slap or sort)");
}

// ---------------------------------------------------------------------------
// SLAP
// ---------------------------------------------------------------------------

enum class SlapKind { clean, bimodal };

struct SlapInstance {
    std::size_t n = 0;
    SquareMatrix cost;
    std::vector<PermMatrix> modes;
    double optimal_cost = 0.0;
    SlapKind kind = SlapKind::clean;

    friend bool operator==(const SlapInstance&, const SlapInstance&) = default;
};

struct SlapGenConfig {
    double noise_sd = 0.25;
    double bonus_lo = 1.5;
    double bonus_hi = 2.5;
    /// Tie value is -bonus_hi - Unif(tie_lo, tie_hi).
    double tie_lo = 0.5;
    double tie_hi = 1.5;
    double tie_tol = 1e-9;
    int max_attempts = 1000;
    /// true: a failed bimodal construction is retried until verified.
    /// false: it falls back to a clean instance.
    bool bimodal_retry = true;
    /// Cross-check optimality exhaustively up to this size.
    std::size_t brute_force_max_n = 8;
};

struct SlapGenStats {
    std::size_t clean_attempts = 0;
    std::size_t clean_failures = 0;
    std::size_t bimodal_attempts = 0;
    std::size_t bimodal_failures = 0;
    std::size_t bimodal_fallbacks = 0;
};

/// Uniformly random involution (P = P^{-1}). Element r is a fixed point with
/// probability I(r-1)/I(r), where I counts involutions.
inline PermMatrix random_involution(std::size_t n, Rng& rng) {
    std::vector<double> count(n + 1);
    count[0] = 1.0;
    if (n >= 1) count[1] = 1.0;
    for (std::size_t r = 2; r <= n; ++r) count[r] = count[r - 1] + static_cast<double>(r - 1) * count[r - 2];

    std::vector<int> free_items(n);
    for (std::size_t i = 0; i < n; ++i) free_items[i] = static_cast<int>(i);
    std::shuffle(free_items.begin(), free_items.end(), rng);
    std::vector<int> assign(n, -1);
    while (!free_items.empty()) {
        const std::size_t r = free_items.size();
        const int a = free_items.back();
        free_items.pop_back();
        const double p_fixed = count[r - 1] / count[r];
        if (r == 1 || uniform01(rng) < p_fixed) {
            assign[static_cast<std::size_t>(a)] = a;
        } else {
            const std::size_t k = uniform_index(rng, free_items.size());
            const int b = free_items[k];
            free_items.erase(free_items.begin() + static_cast<std::ptrdiff_t>(k));
            assign[static_cast<std::size_t>(a)] = b;
            assign[static_cast<std::size_t>(b)] = a;
        }
    }
    return PermMatrix(std::move(assign));
}

namespace detail {

inline SquareMatrix symmetric_noise(std::size_t n, double sd, Rng& rng) {
    std::normal_distribution<double> normal(0.0, sd);
    SquareMatrix raw(n);
    for (double& v : raw.values()) v = normal(rng);
    SquareMatrix c(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) c(i, j) = (raw(i, j) + raw(j, i)) / 2.0;
    return c;
}

inline void sym_add(SquareMatrix& c, std::size_t r, std::size_t col, double v) {
    c(r, col) += v;
    if (r != col) c(col, r) += v;
}

inline void sym_set(SquareMatrix& c, std::size_t r, std::size_t col, double v) {
    c(r, col) = v;
    c(col, r) = v;
}

inline std::vector<double> distinct_uniform(std::size_t count, double lo, double hi, Rng& rng) {
    std::vector<double> out;
    out.reserve(count);
    while (out.size() < count) {
        const double v = uniform(rng, lo, hi);
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
    return out;
}

inline double forbid_value(const SquareMatrix& cost) {
    double m = 0.0;
    for (double v : cost.values()) m = std::max(m, std::abs(v));
    return 4.0 * static_cast<double>(cost.n()) * (m + 1.0);
}

} // namespace detail

/// True when some permutation outside `modes` attains `opt` within `tol`.
///
/// Any competitor differs from every mode on a row where all modes agree, as
/// long as the modes differ on at most two rows. Forbidding each such entry in
/// turn and re-solving therefore finds it with n Hungarian solves.
inline bool other_optimum_exists(const SquareMatrix& cost, const std::vector<PermMatrix>& modes, double opt,
                                 double tol) {
    if (modes.empty()) throw DataError("other_optimum_exists: no modes");
    const std::size_t n = cost.n();
    std::vector<std::size_t> agree_rows;
    for (std::size_t r = 0; r < n; ++r) {
        const bool agree = std::all_of(modes.begin(), modes.end(), [&](const PermMatrix& m) { return m[r] == modes[0][r]; });
        if (agree) agree_rows.push_back(r);
    }
    if (n - agree_rows.size() > 2) {
        if (n > brute_force_max_n) throw DimensionError("other_optimum_exists: modes differ on more than two rows");
        std::vector<int> a(n);
        std::iota(a.begin(), a.end(), 0);
        do {
            PermMatrix p(a);
            if (std::find(modes.begin(), modes.end(), p) != modes.end()) continue;
            if (assignment_cost(cost, p) <= opt + tol) return true;
        } while (std::next_permutation(a.begin(), a.end()));
        return false;
    }
    const double big = detail::forbid_value(cost);
    for (std::size_t r : agree_rows) {
        SquareMatrix c = cost;
        c(r, static_cast<std::size_t>(modes[0][r])) = big;
        if (hungarian_min(c).total_cost <= opt + tol) return true;
    }
    return false;
}

/// All permutations within tol of the exhaustive minimum, in lexicographic order.
inline std::vector<PermMatrix> brute_force_optima(const SquareMatrix& cost, double tol) {
    const double best = brute_force_min(cost).total_cost;
    const std::size_t n = cost.n();
    std::vector<int> a(n);
    std::iota(a.begin(), a.end(), 0);
    std::vector<PermMatrix> out;
    do {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) c += cost(i, static_cast<std::size_t>(a[i]));
        if (c <= best + tol) out.emplace_back(a);
    } while (std::next_permutation(a.begin(), a.end()));
    return out;
}

struct SlapCheck {
    bool symmetric = false;
    bool modes_optimal = false;   // every mode matches the Hungarian optimum
    bool modes_exhaustive = false; // no other permutation ties
    bool shape_ok = false;         // mode count and swap structure match the kind
    std::optional<bool> brute_force_agrees;
    double hungarian_cost = 0.0;

    bool ok() const {
        return symmetric && modes_optimal && modes_exhaustive && shape_ok && brute_force_agrees.value_or(true);
    }
};

/// Re-derives every invariant of a SLAP instance from its cost matrix.
inline SlapCheck check_slap_instance(const SlapInstance& inst, double tol = 1e-9, std::size_t brute_max_n = 8) {
    SlapCheck chk;
    const SquareMatrix& c = inst.cost;
    chk.symmetric = (c == c.transpose());
    const std::size_t want = inst.kind == SlapKind::clean ? 1 : 2;
    chk.shape_ok = inst.modes.size() == want && c.n() == inst.n;
    if (chk.shape_ok && want == 2) chk.shape_ok = inst.modes[0].hamming(inst.modes[1]) == 2;
    if (inst.modes.empty()) return chk;

    chk.hungarian_cost = hungarian_min(c).total_cost;
    chk.modes_optimal = std::abs(chk.hungarian_cost - inst.optimal_cost) <= tol;
    for (const auto& m : inst.modes) chk.modes_optimal = chk.modes_optimal && std::abs(assignment_cost(c, m) - chk.hungarian_cost) <= tol;
    chk.modes_exhaustive = chk.modes_optimal && !other_optimum_exists(c, inst.modes, chk.hungarian_cost, tol);

    if (c.n() <= brute_max_n) {
        auto optima = brute_force_optima(c, tol);
        auto modes = inst.modes;
        std::sort(modes.begin(), modes.end());
        chk.brute_force_agrees = (optima == modes);
    }
    return chk;
}

/// Clean instance: symmetric noise base plus a distinct bonus per row at the
/// labelled column, written symmetrically. The labelled permutation is drawn
/// as a uniform involution: for a symmetric cost P and P^{-1} always tie, so
/// only involutions can be unique optima.
inline SlapInstance gen_slap_clean(std::size_t n, Rng& rng, const SlapGenConfig& cfg = {},
                                   SlapGenStats* stats = nullptr) {
    if (n < 4) throw ConfigError("gen_slap_clean: n must be >= 4");
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        if (stats) ++stats->clean_attempts;
        SlapInstance inst;
        inst.n = n;
        inst.kind = SlapKind::clean;
        inst.cost = detail::symmetric_noise(n, cfg.noise_sd, rng);
        PermMatrix pa = random_involution(n, rng);
        const auto bonus = detail::distinct_uniform(n, cfg.bonus_lo, cfg.bonus_hi, rng);
        for (std::size_t k = 0; k < n; ++k) detail::sym_add(inst.cost, k, static_cast<std::size_t>(pa[k]), -bonus[k]);
        inst.optimal_cost = assignment_cost(inst.cost, pa);
        inst.modes = {std::move(pa)};

        const Assignment h = hungarian_min(inst.cost);
        bool ok = std::abs(h.total_cost - inst.optimal_cost) <= cfg.tie_tol &&
                  !other_optimum_exists(inst.cost, inst.modes, h.total_cost, cfg.tie_tol);
        if (ok && n <= cfg.brute_force_max_n) ok = brute_force_optima(inst.cost, cfg.tie_tol) == inst.modes;
        if (ok) return inst;
        if (stats) ++stats->clean_failures;
    }
    throw NumericError("gen_slap_clean: retry budget exhausted");
}

/// Bimodal instance: P_b is P_a with the assignments of rows i and j swapped.
/// The four critical entries (and transposes) are written last with a common
/// tie value, so cost(P_a) == cost(P_b) bit for bit. The construction is
/// accepted only if these two are the only optima.
inline SlapInstance gen_slap_bimodal(std::size_t n, Rng& rng, const SlapGenConfig& cfg = {},
                                     SlapGenStats* stats = nullptr) {
    if (n < 4) throw ConfigError("gen_slap_bimodal: n must be >= 4");
    const int attempts = cfg.bimodal_retry ? cfg.max_attempts : 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (stats) ++stats->bimodal_attempts;
        SlapInstance inst;
        inst.n = n;
        inst.kind = SlapKind::bimodal;
        inst.cost = detail::symmetric_noise(n, cfg.noise_sd, rng);
        const PermMatrix pa = random_involution(n, rng);
        const std::size_t i = uniform_index(rng, n);
        std::size_t j = uniform_index(rng, n - 1);
        if (j >= i) ++j;
        std::vector<int> b = pa.assign();
        std::swap(b[i], b[j]);
        const PermMatrix pb(std::move(b));

        const auto bonus = detail::distinct_uniform(n, cfg.bonus_lo, cfg.bonus_hi, rng);
        for (std::size_t k = 0; k < n; ++k) {
            if (k == i || k == j) continue;
            detail::sym_add(inst.cost, k, static_cast<std::size_t>(pa[k]), -bonus[k]);
        }
        const double tie = -cfg.bonus_hi - uniform(rng, cfg.tie_lo, cfg.tie_hi);
        for (std::size_t r : {i, j}) {
            detail::sym_set(inst.cost, r, static_cast<std::size_t>(pa[r]), tie);
            detail::sym_set(inst.cost, r, static_cast<std::size_t>(pb[r]), tie);
        }
        inst.optimal_cost = assignment_cost(inst.cost, pa);
        inst.modes = {pa, pb};

        const Assignment h = hungarian_min(inst.cost);
        bool ok = std::abs(h.total_cost - inst.optimal_cost) <= cfg.tie_tol &&
                  std::abs(h.total_cost - assignment_cost(inst.cost, pb)) <= cfg.tie_tol &&
                  !other_optimum_exists(inst.cost, inst.modes, h.total_cost, cfg.tie_tol);
        if (ok && n <= cfg.brute_force_max_n) {
            auto sorted = inst.modes;
            std::sort(sorted.begin(), sorted.end());
            ok = brute_force_optima(inst.cost, cfg.tie_tol) == sorted;
        }
        if (ok) return inst;
        if (stats) ++stats->bimodal_failures;
    }
    if (cfg.bimodal_retry) throw NumericError("gen_slap_bimodal: retry budget exhausted");
    if (stats) ++stats->bimodal_fallbacks;
    return gen_slap_clean(n, rng, cfg, stats);
}

// ---------------------------------------------------------------------------
// Ambiguous sorting
// ---------------------------------------------------------------------------

enum class SortKind { clean, ambiguous };

struct SortInstance {
    std::size_t n = 0;
    std::vector<double> features;
    /// Latent grid values; the blended item holds v_a here.
    std::vector<double> latent;
    std::vector<PermMatrix> modes;
    std::optional<double> alpha;
    std::optional<std::size_t> blend_item;
    std::optional<std::pair<double, double>> blend_values;
    SortKind kind = SortKind::clean;

    friend bool operator==(const SortInstance&, const SortInstance&) = default;
};

struct SortGenConfig {
    /// Latent values live on {0, ..., grid_size - 1}; 0 picks the smallest
    /// grid whose support holds n + 4 values.
    std::size_t grid_size = 0;
    double obs_sd = 0.02;
    /// Blend partners sit blend_gap grid positions apart.
    std::size_t blend_gap = 6;
    /// Number of blend pairs, spread evenly over the grid with dense runs of
    /// ordinary values between them.
    std::size_t blend_zones = 1;
    double alpha_lo = 0.2;
    double alpha_hi = 0.8;
    /// Leave grid points inside a blend range unused, so a blended feature
    /// never sits on a value a clean item could take.
    bool clear_blend_zone = true;

    /// Grid points in [v + (1 - alpha_hi) gap, v + (1 - alpha_lo) gap].
    std::size_t holes_per_zone() const {
        if (!clear_blend_zone) return 0;
        std::size_t h = 0;
        const double g = static_cast<double>(blend_gap);
        for (std::size_t off = 1; off < blend_gap; ++off) {
            const double o = static_cast<double>(off);
            h += o >= (1.0 - alpha_hi) * g && o <= (1.0 - alpha_lo) * g;
        }
        return h;
    }

    std::size_t grid(std::size_t n) const {
        return grid_size != 0 ? grid_size : n + 4 + holes_per_zone() * blend_zones;
    }

    std::vector<std::pair<std::size_t, std::size_t>> pairs(std::size_t n) const {
        const std::size_t g = grid(n);
        const std::size_t span = blend_gap + 1;
        if (blend_gap < 2 || blend_zones == 0 || blend_zones * span > g)
            throw ConfigError("sort generator: grid cannot hold the blend pairs");
        const std::size_t run = (g - blend_zones * span) / (blend_zones + 1);
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (std::size_t k = 0; k < blend_zones; ++k) {
            const std::size_t v = run + k * (span + run);
            out.emplace_back(v, v + blend_gap);
        }
        return out;
    }

    /// Grid points a latent value may take.
    std::vector<std::size_t> support(std::size_t n) const {
        const auto ps = pairs(n);
        const double g = static_cast<double>(blend_gap);
        std::vector<std::size_t> out;
        for (std::size_t u = 0; u < grid(n); ++u) {
            bool inside = false;
            for (const auto& [va, vb] : ps) {
                const double o = static_cast<double>(u) - static_cast<double>(va);
                inside = inside || (clear_blend_zone && o >= (1.0 - alpha_hi) * g && o <= (1.0 - alpha_lo) * g);
            }
            if (!inside) out.push_back(u);
        }
        return out;
    }
};

/// assign[i] = position of item i in the ascending order of `values`.
inline PermMatrix ascending_sort_perm(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return values[static_cast<std::size_t>(a)] < values[static_cast<std::size_t>(b)];
    });
    std::vector<int> assign(n);
    for (std::size_t pos = 0; pos < n; ++pos) assign[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos);
    return PermMatrix(std::move(assign));
}

inline SortInstance gen_sort_instance(std::size_t n, bool ambiguous, Rng& rng, const SortGenConfig& cfg = {}) {
    if (n < 3) throw ConfigError("gen_sort_instance: n must be >= 3");
    std::normal_distribution<double> obs_noise(0.0, cfg.obs_sd);

    SortInstance inst;
    inst.n = n;
    const std::vector<std::size_t> support = cfg.support(n);
    if (support.size() < n + 1) throw ConfigError("gen_sort_instance: grid support too small for n");
    if (!ambiguous) {
        std::vector<std::size_t> pool = support;
        std::shuffle(pool.begin(), pool.end(), rng);
        for (std::size_t i = 0; i < n; ++i) {
            const double v = static_cast<double>(pool[i]);
            inst.latent.push_back(v);
            inst.features.push_back(v + obs_noise(rng));
        }
        inst.kind = SortKind::clean;
        inst.modes = {ascending_sort_perm(inst.latent)};
        return inst;
    }

    const auto pairs = cfg.pairs(n);
    const auto [va, vb] = pairs[uniform_index(rng, pairs.size())];
    std::vector<std::size_t> pool;
    for (std::size_t v : support)
        if (v != va && v != vb) pool.push_back(v);
    if (pool.size() < n - 1) throw ConfigError("gen_sort_instance: grid too small for n");

    if (std::none_of(pool.begin(), pool.end(), [&](std::size_t v) { return v > va && v < vb; }))
        throw ConfigError("gen_sort_instance: no grid point between blend partners");
    std::vector<double> others;
    for (;;) {
        std::shuffle(pool.begin(), pool.end(), rng);
        others.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n - 1));
        const bool separated = std::any_of(others.begin(), others.end(), [&](double v) {
            return v > static_cast<double>(va) && v < static_cast<double>(vb);
        });
        if (separated) break;
    }
    const std::size_t blend = uniform_index(rng, n);
    const double alpha = std::clamp(beta_sample(rng, 2.0, 2.0), cfg.alpha_lo, cfg.alpha_hi);

    std::vector<double> latent_a, latent_b;
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i == blend) {
            latent_a.push_back(static_cast<double>(va));
            latent_b.push_back(static_cast<double>(vb));
            inst.features.push_back(alpha * static_cast<double>(va) + (1.0 - alpha) * static_cast<double>(vb));
        } else {
            const double v = others[k++];
            latent_a.push_back(v);
            latent_b.push_back(v);
            inst.features.push_back(v + obs_noise(rng));
        }
    }
    inst.latent = latent_a;
    inst.alpha = alpha;
    inst.blend_item = blend;
    inst.blend_values = std::make_pair(static_cast<double>(va), static_cast<double>(vb));
    inst.kind = SortKind::ambiguous;
    inst.modes = {ascending_sort_perm(latent_a), ascending_sort_perm(latent_b)};
    return inst;
}

} // namespace permfm
