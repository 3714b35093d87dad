#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mfg/core.hpp"

namespace mfg {

/// Compressed sparse row matrix with a fixed square shape.
struct SpMat {
    std::size_t n = 0;
    std::vector<std::size_t> row_ptr;  // size n+1
    std::vector<std::size_t> col;
    std::vector<double> val;

    static SpMat from_triplets(std::size_t n,
                               const std::vector<std::size_t>& ti,
                               const std::vector<std::size_t>& tj,
                               const std::vector<double>& tv) {
        std::vector<std::size_t> order(ti.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return ti[a] != ti[b] ? ti[a] < ti[b] : tj[a] < tj[b];
        });
        SpMat out;
        out.n = n;
        std::vector<std::size_t> rows;
        for (std::size_t k : order) {
            const std::size_t i = ti[k], j = tj[k];
            if (!rows.empty() && rows.back() == i && out.col.back() == j) {
                out.val.back() += tv[k];
            } else {
                rows.push_back(i);
                out.col.push_back(j);
                out.val.push_back(tv[k]);
            }
        }
        out.row_ptr.assign(n + 1, 0);
        for (std::size_t i : rows) out.row_ptr[i + 1]++;
        for (std::size_t i = 0; i < n; ++i) out.row_ptr[i + 1] += out.row_ptr[i];
        return out;
    }

    void apply(const double* x, double* y) const {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) s += val[k] * x[col[k]];
            y[i] = s;
        }
    }

    std::vector<double> apply(const std::vector<double>& x) const {
        std::vector<double> y(n, 0.0);
        apply(x.data(), y.data());
        return y;
    }

    /// Exact transpose; values are copied bit-for-bit.
    SpMat transposed() const {
        SpMat t;
        t.n = n;
        t.row_ptr.assign(n + 1, 0);
        for (std::size_t k = 0; k < col.size(); ++k) t.row_ptr[col[k] + 1]++;
        for (std::size_t i = 0; i < n; ++i) t.row_ptr[i + 1] += t.row_ptr[i];
        t.col.resize(col.size());
        t.val.resize(val.size());
        std::vector<std::size_t> cursor(t.row_ptr.begin(), t.row_ptr.end() - 1);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
                const std::size_t slot = cursor[col[k]]++;
                t.col[slot] = i;
                t.val[slot] = val[k];
            }
        }
        return t;
    }

    std::vector<std::vector<double>> to_dense() const {
        std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) d[i][col[k]] = val[k];
        return d;
    }

    /// True when every row touches only columns i-1, i, i+1.
    bool is_tridiagonal() const {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
                const std::size_t j = col[k];
                if (j + 1 < i || j > i + 1) return false;
            }
        return true;
    }
};

/// I + c * A as a fresh CSR matrix.
inline SpMat shifted_identity(const SpMat& A, double c) {
    std::vector<std::size_t> ti, tj;
    std::vector<double> tv;
    ti.reserve(A.val.size() + A.n);
    tj.reserve(A.val.size() + A.n);
    tv.reserve(A.val.size() + A.n);
    for (std::size_t i = 0; i < A.n; ++i) {
        ti.push_back(i);
        tj.push_back(i);
        tv.push_back(1.0);
    }
    for (std::size_t i = 0; i < A.n; ++i)
        for (std::size_t k = A.row_ptr[i]; k < A.row_ptr[i + 1]; ++k) {
            ti.push_back(i);
            tj.push_back(A.col[k]);
            tv.push_back(c * A.val[k]);
        }
    return SpMat::from_triplets(A.n, ti, tj, tv);
}

/// Thomas algorithm for a tridiagonal system given by diagonals.
inline void solve_tridiag(std::vector<double> lower, std::vector<double> diag,
                          std::vector<double> upper, std::vector<double>& rhs) {
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
}

/// Solves A x = b. Uses the Thomas algorithm when A is tridiagonal and
/// Gauss-Seidel (requires diagonal dominance) otherwise.
inline std::vector<double> solve_sparse(const SpMat& A, const std::vector<double>& b,
                                        double tol = 1e-13, std::size_t max_sweeps = 20000) {
    const std::size_t n = A.n;
    if (A.is_tridiagonal()) {
        std::vector<double> lo(n, 0.0), di(n, 0.0), up(n, 0.0), rhs = b;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = A.row_ptr[i]; k < A.row_ptr[i + 1]; ++k) {
                const std::size_t j = A.col[k];
                if (j + 1 == i) lo[i] = A.val[k];
                else if (j == i) di[i] = A.val[k];
                else up[i] = A.val[k];
            }
        solve_tridiag(std::move(lo), std::move(di), std::move(up), rhs);
        return rhs;
    }
    std::vector<double> x(n, 0.0);
    double bscale = 0.0;
    for (double v : b) bscale = std::max(bscale, std::abs(v));
    if (bscale == 0.0) return x;
    std::vector<double> diag(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = A.row_ptr[i]; k < A.row_ptr[i + 1]; ++k)
            if (A.col[k] == i) diag[i] = A.val[k];
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double delta = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = b[i];
            for (std::size_t k = A.row_ptr[i]; k < A.row_ptr[i + 1]; ++k)
                if (A.col[k] != i) s -= A.val[k] * x[A.col[k]];
            const double xn = s / diag[i];
            delta = std::max(delta, std::abs(xn - x[i]));
            x[i] = xn;
        }
        if (delta <= tol * bscale) return x;
    }
    throw ConvergenceError("solve_sparse: Gauss-Seidel did not reach tolerance", {});
}

}  // namespace mfg
