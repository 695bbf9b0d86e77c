#pragma once

// Dense small-matrix arithmetic and the geometry of the affine manifold of
// matrices with unit row and column sums.
//
// The tangent space T = {D : D1 = 0, D^T 1 = 0} does not depend on the base
// point, and center() is the orthogonal projector onto it:
//
//     C(U) = U - (1/n) U 11^T - (1/n) 11^T U + (1/n^2) 11^T U 11^T
//          = (I - J) U (I - J),        J = (1/n) 11^T.
//
// Any Euler step X += h * C(F) therefore keeps X on the manifold regardless
// of F, up to floating-point accumulation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "permfm/errors.hpp"
#include "permfm/random.hpp"

namespace permfm {

class SquareMatrix {
public:
    SquareMatrix() = default;

    explicit SquareMatrix(std::size_t n, double fill = 0.0) : n_(n), data_(n * n, fill) {
        check_size(n);
    }

    SquareMatrix(std::size_t n, std::vector<double> data) : n_(n), data_(std::move(data)) {
        check_size(n);
        if (data_.size() != n * n) {
            throw DimensionError("SquareMatrix: expected " + std::to_string(n * n) + " values, got " +
                                 std::to_string(data_.size()));
        }
        if (!all_finite()) throw NumericError("SquareMatrix: non-finite entry");
    }

    static SquareMatrix from_rows(const std::vector<std::vector<double>>& rows) {
        const std::size_t n = rows.size();
        std::vector<double> data;
        data.reserve(n * n);
        for (const auto& r : rows) {
            if (r.size() != n) throw DimensionError("SquareMatrix::from_rows: ragged input");
            data.insert(data.end(), r.begin(), r.end());
        }
        return SquareMatrix(n, std::move(data));
    }

    static SquareMatrix identity(std::size_t n) {
        SquareMatrix m(n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    /// J = (1/n) 11^T, the barycentre of the Birkhoff polytope.
    static SquareMatrix uniform(std::size_t n) {
        check_size(n);
        return SquareMatrix(n, 1.0 / static_cast<double>(n));
    }

    std::size_t n() const noexcept { return n_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * n_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * n_ + j]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& raw() const noexcept { return data_; }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    SquareMatrix transpose() const {
        SquareMatrix t(n_);
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < n_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    double row_sum(std::size_t i) const noexcept {
        double s = 0.0;
        for (std::size_t j = 0; j < n_; ++j) s += (*this)(i, j);
        return s;
    }

    double col_sum(std::size_t j) const noexcept {
        double s = 0.0;
        for (std::size_t i = 0; i < n_; ++i) s += (*this)(i, j);
        return s;
    }

    SquareMatrix& operator+=(const SquareMatrix& o) {
        check_same(o);
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
        return *this;
    }
    SquareMatrix& operator-=(const SquareMatrix& o) {
        check_same(o);
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
        return *this;
    }
    SquareMatrix& operator*=(double s) noexcept {
        for (double& v : data_) v *= s;
        return *this;
    }

    /// this += s * o
    SquareMatrix& axpy(double s, const SquareMatrix& o) {
        check_same(o);
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += s * o.data_[k];
        return *this;
    }

    friend SquareMatrix operator+(SquareMatrix a, const SquareMatrix& b) { return a += b; }
    friend SquareMatrix operator-(SquareMatrix a, const SquareMatrix& b) { return a -= b; }
    friend SquareMatrix operator*(double s, SquareMatrix a) { return a *= s; }
    friend SquareMatrix operator*(SquareMatrix a, double s) { return a *= s; }
    friend SquareMatrix operator-(SquareMatrix a) { return a *= -1.0; }

    friend bool operator==(const SquareMatrix& a, const SquareMatrix& b) = default;

    void check_same(const SquareMatrix& o) const {
        if (o.n_ != n_) {
            throw DimensionError("matrix size mismatch: " + std::to_string(n_) + " vs " + std::to_string(o.n_));
        }
    }

private:
    static void check_size(std::size_t n) {
        if (n < 2) throw DimensionError("SquareMatrix requires n >= 2, got " + std::to_string(n));
    }

    std::size_t n_ = 0;
    std::vector<double> data_;
};

/// Hard permutation stored as assign[row] = column of the single 1.
class PermMatrix {
public:
    PermMatrix() = default;

    explicit PermMatrix(std::vector<int> assign) : assign_(std::move(assign)) {
        const std::size_t n = assign_.size();
        if (n < 2) throw DimensionError("PermMatrix requires n >= 2");
        std::vector<char> seen(n, 0);
        for (int c : assign_) {
            if (c < 0 || static_cast<std::size_t>(c) >= n || seen[static_cast<std::size_t>(c)]) {
                throw DataError("PermMatrix: assignment is not a bijection");
            }
            seen[static_cast<std::size_t>(c)] = 1;
        }
    }

    static PermMatrix identity(std::size_t n) {
        std::vector<int> a(n);
        std::iota(a.begin(), a.end(), 0);
        return PermMatrix(std::move(a));
    }

    std::size_t n() const noexcept { return assign_.size(); }
    int operator[](std::size_t row) const noexcept { return assign_[row]; }
    const std::vector<int>& assign() const noexcept { return assign_; }

    SquareMatrix to_matrix() const {
        SquareMatrix m(n());
        for (std::size_t i = 0; i < n(); ++i) m(i, static_cast<std::size_t>(assign_[i])) = 1.0;
        return m;
    }

    PermMatrix inverse() const {
        std::vector<int> inv(n());
        for (std::size_t i = 0; i < n(); ++i) inv[static_cast<std::size_t>(assign_[i])] = static_cast<int>(i);
        return PermMatrix(std::move(inv));
    }

    /// Number of rows on which two permutations disagree.
    std::size_t hamming(const PermMatrix& o) const {
        if (o.n() != n()) throw DimensionError("PermMatrix size mismatch");
        std::size_t d = 0;
        for (std::size_t i = 0; i < n(); ++i) d += assign_[i] != o.assign_[i];
        return d;
    }

    friend bool operator==(const PermMatrix&, const PermMatrix&) = default;
    friend auto operator<=>(const PermMatrix&, const PermMatrix&) = default;

private:
    std::vector<int> assign_;
};

/// sum_i cost[i, P[i]]
inline double assignment_cost(const SquareMatrix& cost, const PermMatrix& p) {
    if (cost.n() != p.n()) throw DimensionError("assignment_cost: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p.n(); ++i) s += cost(i, static_cast<std::size_t>(p[i]));
    return s;
}

inline double inner(const SquareMatrix& a, const SquareMatrix& b) {
    a.check_same(b);
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a.values()[k] * b.values()[k];
    return s;
}

inline double frobenius_norm(const SquareMatrix& a) { return std::sqrt(inner(a, a)); }

inline double frobenius_dist(const SquareMatrix& a, const SquareMatrix& b) {
    a.check_same(b);
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a.values()[k] - b.values()[k];
        s += d * d;
    }
    return std::sqrt(s);
}

inline SquareMatrix matmul(const SquareMatrix& a, const SquareMatrix& b) {
    a.check_same(b);
    const std::size_t n = a.n();
    SquareMatrix c(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < n; ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

/// In-place centering of an n*n row-major block.
inline void center_inplace(double* u, std::size_t n) {
    const double inv_n = 1.0 / static_cast<double>(n);
    double row_mean[128];
    double col_mean[128];
    std::vector<double> heap;
    double* rm = row_mean;
    double* cm = col_mean;
    if (n > 128) {
        heap.assign(2 * n, 0.0);
        rm = heap.data();
        cm = heap.data() + n;
    }
    std::fill(cm, cm + n, 0.0);
    double grand = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            s += u[i * n + j];
            cm[j] += u[i * n + j];
        }
        rm[i] = s * inv_n;
        grand += s;
    }
    for (std::size_t j = 0; j < n; ++j) cm[j] *= inv_n;
    grand *= inv_n * inv_n;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) u[i * n + j] = u[i * n + j] - rm[i] - cm[j] + grand;
}

/// Projects u onto the tangent space: subtract row means and column means,
/// add back the grand mean.
inline SquareMatrix center(const SquareMatrix& u) {
    SquareMatrix out = u;
    center_inplace(out.values().data(), out.n());
    return out;
}

/// max over rows and columns of |sum - target|.
inline double marginal_residual(const SquareMatrix& x, double target) {
    double worst = 0.0;
    for (std::size_t i = 0; i < x.n(); ++i) {
        worst = std::max(worst, std::abs(x.row_sum(i) - target));
        worst = std::max(worst, std::abs(x.col_sum(i) - target));
    }
    return worst;
}

/// Deviation of x from the affine manifold (unit row and column sums).
inline double affine_residual(const SquareMatrix& x) { return marginal_residual(x, 1.0); }

/// Deviation of d from the tangent space (zero row and column sums).
inline double tangent_residual(const SquareMatrix& d) { return marginal_residual(d, 0.0); }

inline bool is_affine_feasible(const SquareMatrix& x, double tol) {
    if (!(tol > 0.0)) throw ConfigError("is_affine_feasible: tol must be positive");
    return affine_residual(x) <= tol;
}

/// Gaussian matrix pushed through center(); optionally rescaled to unit
/// Frobenius norm. A numerically zero draw is resampled (at most 16 times).
inline SquareMatrix doubly_centered_noise(std::size_t n, Rng& rng, bool unit_frobenius) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int attempt = 0; attempt < 16; ++attempt) {
        SquareMatrix g(n);
        for (double& v : g.values()) v = normal(rng);
        SquareMatrix eps = center(g);
        if (!unit_frobenius) return eps;
        const double norm = frobenius_norm(eps);
        if (norm > 1e-300 && std::isfinite(norm)) {
            eps *= 1.0 / norm;
            return eps;
        }
    }
    throw NumericError("doubly_centered_noise: degenerate draws exhausted the retry budget");
}

/// J + sigma0 * eps with eps doubly centred. Row and column sums equal one by
/// construction, no renormalisation involved.
inline SquareMatrix noisy_uniform_start(std::size_t n, double sigma0, Rng& rng, bool unit_frobenius = true) {
    if (sigma0 < 0.0) throw ConfigError("noisy_uniform_start: sigma0 must be >= 0");
    SquareMatrix x = SquareMatrix::uniform(n);
    SquareMatrix eps = doubly_centered_noise(n, rng, unit_frobenius);
    if (sigma0 > 0.0) x.axpy(sigma0, eps);
    return x;
}

} // namespace permfm
