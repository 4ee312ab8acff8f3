#pragma once

// Krylov machinery: weighted CG with a spectral constant-coefficient
// preconditioner, plus the variable-coefficient scalar operators shared by
// the solve-type modules (d(du∘J) on surfaces, flat Hodge pieces on tori).

#include "scenes.hpp"

#include <functional>

namespace kml {

using ScalarOp = std::function<ScalarField(const ScalarField&)>;

struct KrylovResult {
    ScalarField x;
    double residual = 0;  // relative
    int iterations = 0;
    bool converged = false;
};

inline double weighted_dot(const ScalarField& a, const ScalarField& b, const Vec& w) {
    double s = 0;
    for (size_t p = 0; p < a.v.size(); ++p) s += a.v[p] * b.v[p] * w[p];
    return s;
}

// Preconditioned CG for a self-adjoint PSD operator w.r.t. the weighted inner
// product; rhs must lie in the range.
inline KrylovResult conjugate_gradient(const ScalarOp& A, const ScalarField& rhs,
                                       const ScalarOp& precond, const Vec& weights,
                                       double tol = 1e-10, int maxit = 500) {
    KrylovResult out{ScalarField(rhs.b), 0, 0, false};
    double rhsn = std::sqrt(std::max(weighted_dot(rhs, rhs, weights), 1e-300));
    if (rhsn < 1e-11) {  // right side at roundoff level: the zero solution is exact
        out.converged = true;
        return out;
    }
    ScalarField x(rhs.b);
    ScalarField r = rhs;
    ScalarField z = precond(r);
    ScalarField p = z;
    double rz = weighted_dot(r, z, weights);
    ScalarField best = x;
    double best_rn = 1e300;
    int stagnant = 0;
    for (int it = 0; it < maxit; ++it) {
        ScalarField Ap = A(p);
        double pAp = weighted_dot(p, Ap, weights);
        if (std::abs(pAp) < 1e-300) break;
        double alpha = rz / pAp;
        for (size_t q = 0; q < x.v.size(); ++q) {
            x.v[q] += alpha * p.v[q];
            r.v[q] -= alpha * Ap.v[q];
        }
        double rn = std::sqrt(weighted_dot(r, r, weights));
        out.iterations = it + 1;
        out.residual = rn / rhsn;
        if (rn < best_rn) {
            best_rn = rn;
            best = x;
            stagnant = 0;
        } else if (++stagnant >= 8) {
            break;  // noise floor of an inexact operator
        }
        if (rn / rhsn < tol) {
            out.converged = true;
            break;
        }
        z = precond(r);
        double rz_new = weighted_dot(r, z, weights);
        double beta = rz_new / rz;
        rz = rz_new;
        for (size_t q = 0; q < p.v.size(); ++q) p.v[q] = z.v[q] + beta * p.v[q];
    }
    out.x = (best_rn < 1e300) ? best : x;
    out.residual = best_rn / rhsn;
    if (best_rn < 1e-11) out.converged = true;  // absolute noise floor reached
    return out;
}

inline Vec reference_weights(const BackendPtr& b) {
    Vec w(b->nnodes());
    for (size_t p = 0; p < w.size(); ++p) w[p] = b->quad_weight(p);
    return w;
}

// ---------------------------------------------------------------- surface ops

// density s with d(du∘J) = s · (reference area form); dimension two only
inline ScalarField ddc_density(const ScalarField& u, const EndoField& J) {
    require(u.b->dim == 2, "ddc_density: surface backends only");
    FormField du = d(scalar_as_form(u));
    FormField ddc = d(compose_J(du, J));
    return ScalarField(u.b, ddc.c[0]);
}

// Laplace–Beltrami d*d of the metric ω(·,J·): Δu = d(du∘J)/ω
inline ScalarField laplace_beltrami(const ScalarField& u, const FormField& omega, const EndoField& J) {
    ScalarField num = ddc_density(u, J);
    const Vec& w = omega.c[0];
    ScalarField out(u.b);
    for (size_t p = 0; p < out.v.size(); ++p) out.v[p] = num.v[p] / w[p];
    return out;
}

inline ScalarField remove_mean_ref(const ScalarField& f) {
    double vol = f.b->integrate_density(Vec(f.b->nnodes(), 1.0));
    double m = f.b->integrate_density(f.v) / vol;
    return map_scalar(f, [m](double x) { return x - m; });
}

// Solve d(du∘J) = s·ρ_ref for mean-zero u by preconditioned CG.
inline KrylovResult solve_ddc(const ScalarField& s, const EndoField& J,
                              double tol = 1e-10, int maxit = 500) {
    const auto& b = s.b;
    Vec w = reference_weights(b);
    ScalarOp A = [&J](const ScalarField& u) { return ddc_density(u, J); };
    // reference symbol: d(du∘J_std) = (d*d u)·ρ_ref
    ScalarOp M = [](const ScalarField& r) { return poisson_solve_reference(remove_mean_ref(r)); };
    ScalarField rhs = remove_mean_ref(s);
    KrylovResult res = conjugate_gradient(A, rhs, M, w, tol, maxit);
    res.x = remove_mean_ref(res.x);
    return res;
}

// d*d u = rhs for the metric of a compatible pair (2D); falls back to the
// exact spectral inverse when no pair is supplied.
inline ScalarField poisson_solve(const ScalarField& rhs) { return poisson_solve_reference(rhs); }

inline ScalarField poisson_solve(const ScalarField& rhs, const FormField& omega, const EndoField& J,
                                 double tol = 1e-10, int maxit = 500) {
    require(rhs.b->dim == 2, "poisson_solve(metric): surface backends only");
    // d*d u = rhs  ⟺  d(du∘J) = rhs·ω
    ScalarField s(rhs.b);
    for (size_t p = 0; p < s.v.size(); ++p) s.v[p] = rhs.v[p] * omega.c[0][p];
    double vol = rhs.b->integrate_density(Vec(rhs.b->nnodes(), 1.0));
    double mean = rhs.b->integrate_density(s.v) / vol;
    double scale = std::max(1.0, linf(rhs.v));
    require(std::abs(mean) <= 1e-10 * scale, "poisson_solve: rhs has nonzero mean");
    KrylovResult res = solve_ddc(s, J, tol, maxit);
    require(res.converged, "poisson_solve: Krylov iteration did not converge");
    return res.x;
}

// ------------------------------------------------------------ flat Hodge (T^d)

// flat codifferential (δα)_{i2..ik} = -Σ_j ∂_j α_{j i2..ik}
inline FormField flat_codiff(const FormField& a) {
    const auto& b = a.b;
    require(b->is_torus(), "flat_codiff: torus backends only");
    require(a.degree >= 1, "flat_codiff: degree must be >= 1");
    int n = b->dim, k = a.degree;
    auto at = index_tuples(n, k);
    auto ot = index_tuples(n, k - 1);
    FormField out(b, k - 1);
    for (size_t s = 0; s < at.size(); ++s)
        for (size_t j = 0; j < at[s].size(); ++j) {
            std::vector<int> rest;
            for (size_t q = 0; q < at[s].size(); ++q)
                if (q != j) rest.push_back(at[s][q]);
            int r = tuple_rank(ot, rest);
            double sign = (j % 2) ? 1.0 : -1.0;  // -(−1)^j ∂_{i_j}
            Vec da = b->torus->deriv(a.c[s], at[s][j]);
            for (size_t p = 0; p < da.size(); ++p) out.c[r][p] += sign * da[p];
        }
    return out;
}

// componentwise flat Δ^{-1} (zero modes dropped)
inline FormField flat_poisson_formwise(const FormField& a) {
    const auto& b = a.b;
    require(b->is_torus(), "flat_poisson_formwise: torus backends only");
    FormField out = a;
    for (auto& comp : out.c) {
        ScalarField f(b, comp);
        // subtract the zero mode so the spectral inverse applies
        double vol = b->integrate_density(Vec(b->nnodes(), 1.0));
        double m = b->integrate_density(f.v) / vol;
        ScalarField g = map_scalar(f, [m](double x) { return x - m; });
        comp = poisson_solve_reference(g).v;
    }
    return out;
}

// constant-coefficient (harmonic) part of a torus form
inline FormField harmonic_part(const FormField& a) {
    require(a.b->is_torus(), "harmonic_part: torus backends only");
    FormField out = a;
    double vol = a.b->integrate_density(Vec(a.b->nnodes(), 1.0));
    for (size_t k = 0; k < a.c.size(); ++k) {
        double m = a.b->integrate_density(a.c[k]) / vol;
        out.c[k].assign(out.c[k].size(), m);
    }
    return out;
}

} // namespace kml
