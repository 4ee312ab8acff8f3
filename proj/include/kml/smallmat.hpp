#pragma once

// Pointwise linear algebra on n×n matrices, n ≤ 4, stored row-major on the
// stack. Used in the per-node inner loops; no allocation.

#include "common.hpp"

namespace kml::sm {

constexpr int kMax = 4;
using M = double[kMax * kMax];

inline void zero(int n, double* A) { for (int i = 0; i < n * n; ++i) A[i] = 0; }
inline void ident(int n, double* A) {
    zero(n, A);
    for (int i = 0; i < n; ++i) A[i * n + i] = 1;
}
inline void copy(int n, const double* A, double* B) { for (int i = 0; i < n * n; ++i) B[i] = A[i]; }

inline void mul(int n, const double* A, const double* B, double* C) {
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int k = 0; k < n; ++k) s += A[i * n + k] * B[k * n + j];
            C[i * n + j] = s;
        }
}

inline void matvec(int n, const double* A, const double* x, double* y) {
    for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int k = 0; k < n; ++k) s += A[i * n + k] * x[k];
        y[i] = s;
    }
}

inline double trace(int n, const double* A) {
    double s = 0;
    for (int i = 0; i < n; ++i) s += A[i * n + i];
    return s;
}

inline double trace_mul(int n, const double* A, const double* B) {  // tr(AB)
    double s = 0;
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) s += A[i * n + k] * B[k * n + i];
    return s;
}

inline void transpose(int n, const double* A, double* B) {
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) B[j * n + i] = A[i * n + j];
}

inline void axpy(int n, double a, const double* X, double* Y) {
    for (int i = 0; i < n * n; ++i) Y[i] += a * X[i];
}

// Gauss–Jordan with partial pivoting.
inline bool inverse(int n, const double* A, double* Ainv) {
    double a[kMax * 2 * kMax];
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            a[i * 2 * n + j] = A[i * n + j];
            a[i * 2 * n + n + j] = (i == j) ? 1.0 : 0.0;
        }
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a[r * 2 * n + col]) > std::abs(a[piv * 2 * n + col])) piv = r;
        if (std::abs(a[piv * 2 * n + col]) < 1e-300) return false;
        if (piv != col)
            for (int j = 0; j < 2 * n; ++j) std::swap(a[piv * 2 * n + j], a[col * 2 * n + j]);
        double d = a[col * 2 * n + col];
        for (int j = 0; j < 2 * n; ++j) a[col * 2 * n + j] /= d;
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            double f = a[r * 2 * n + col];
            if (f == 0) continue;
            for (int j = 0; j < 2 * n; ++j) a[r * 2 * n + j] -= f * a[col * 2 * n + j];
        }
    }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) Ainv[i * n + j] = a[i * 2 * n + n + j];
    return true;
}

// Cyclic Jacobi for symmetric A; returns eigenvalues and column eigenvectors.
inline void sym_eig(int n, const double* A, double* eval, double* evec) {
    double a[kMax * kMax];
    copy(n, A, a);
    ident(n, evec);
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
        if (off < 1e-32) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(a[p * n + q]) < 1e-300) continue;
                double th = 0.5 * (a[q * n + q] - a[p * n + p]) / a[p * n + q];
                double t = (th >= 0 ? 1.0 : -1.0) / (std::abs(th) + std::sqrt(th * th + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (int k = 0; k < n; ++k) {
                    double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    double vkp = evec[k * n + p], vkq = evec[k * n + q];
                    evec[k * n + p] = c * vkp - s * vkq;
                    evec[k * n + q] = s * vkp + c * vkq;
                }
            }
    }
    for (int i = 0; i < n; ++i) eval[i] = a[i * n + i];
}

// f(A) for symmetric A via eigendecomposition.
template <typename F>
inline void sym_func(int n, const double* A, double* out, F&& f) {
    double ev[kMax], V[kMax * kMax];
    sym_eig(n, A, ev, V);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int k = 0; k < n; ++k) s += V[i * n + k] * f(ev[k]) * V[j * n + k];
            out[i * n + j] = s;
        }
}

inline void inv_sqrt_spd(int n, const double* A, double* out) {
    sym_func(n, A, out, [](double x) {
        require(x > 0, "inv_sqrt_spd: matrix not positive definite");
        return 1.0 / std::sqrt(x);
    });
}

// Principal inverse square root of a general matrix with spectrum in the open
// right half-plane (Denman–Beavers). The result is a limit of rational
// functions of A, so it commutes with everything A commutes with.
inline void principal_inv_sqrt(int n, const double* A, double* out) {
    double Y[kMax * kMax], Z[kMax * kMax], Yi[kMax * kMax], Zi[kMax * kMax];
    copy(n, A, Y);
    ident(n, Z);
    for (int it = 0; it < 60; ++it) {
        require(inverse(n, Y, Yi) && inverse(n, Z, Zi), "principal_inv_sqrt: singular iterate");
        double delta = 0;
        for (int i = 0; i < n * n; ++i) {
            double ny = 0.5 * (Y[i] + Zi[i]);
            double nz = 0.5 * (Z[i] + Yi[i]);
            delta = std::max(delta, std::abs(ny - Y[i]));
            Y[i] = ny;
            Z[i] = nz;
        }
        if (delta < 1e-15) break;
    }
    copy(n, Z, out);
}

inline double min_eig_sym(int n, const double* A) {
    double ev[kMax], V[kMax * kMax];
    sym_eig(n, A, ev, V);
    double m = ev[0];
    for (int i = 1; i < n; ++i) m = std::min(m, ev[i]);
    return m;
}

} // namespace kml::sm
