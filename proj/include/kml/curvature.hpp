#pragma once

// Volume-preserving connections, the one-forms λ and Λ, the Ricci form, its
// linearization, scalar curvature, and the Nijenhuis tensor.
//
// The connection is ∇ = ∇_ref + S with S_u v = (df(u)v + df(v)u)/(2n+1),
// f = log(ρ/ρ_ref). It is torsion-free and kills ρ by construction; the Ricci
// form is independent of this choice and the suite verifies that numerically.

#include "acstruct.hpp"

namespace kml {

struct CurvatureContext {
    BackendPtr b;
    FormField rho;      // positive top form
    ScalarField f;      // log(ρ/ρ_ref)
    ConnectionField S;  // deviation from the reference connection
};

namespace detail {

// components of df with all connection slots tangential on the sphere
inline ConnectionField volume_deviation(const BackendPtr& b, const std::vector<Vec>& df) {
    ConnectionField S(b);
    int n = b->ncomp();
    double denom = b->dim + 1.0;
    size_t N = b->nnodes();
    if (b->is_torus()) {
        for (size_t p = 0; p < N; ++p)
            for (int k = 0; k < n; ++k)
                for (int i = 0; i < n; ++i)
                    for (int j = i; j < n; ++j) {
                        double v = (df[i][p] * (k == j ? 1.0 : 0.0) + df[j][p] * (k == i ? 1.0 : 0.0)) / denom;
                        S.set(p, k, i, j, v);
                        S.set(p, k, j, i, v);
                    }
    } else {
        const auto& sp = *b->sphere;
        for (size_t p = 0; p < N; ++p) {
            double P[9];
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) P[i * 3 + j] = (i == j ? 1.0 : 0.0) - sp.nx(p, i) * sp.nx(p, j);
            for (int k = 0; k < 3; ++k)
                for (int i = 0; i < 3; ++i)
                    for (int j = i; j < 3; ++j) {
                        double v = (df[i][p] * P[k * 3 + j] + df[j][p] * P[k * 3 + i]) / denom;
                        S.set(p, k, i, j, v);
                        S.set(p, k, j, i, v);
                    }
        }
    }
    return S;
}

} // namespace detail

inline CurvatureContext build_volume_connection(const FormField& rho) {
    const auto& b = rho.b;
    require(rho.is_top(), "build_volume_connection: rho must be a top form");
    const Vec& r = volume_density(rho);
    ScalarField f(b);
    for (size_t p = 0; p < r.size(); ++p) {
        require(r[p] > 0, "build_volume_connection: rho not positive");
        f.v[p] = std::log(r[p]);
    }
    auto df = partials(f);
    CurvatureContext ctx{b, rho, f, detail::volume_deviation(b, df)};
    return ctx;
}

// residual of ∇ρ = 0 for a context (should be ~1e-12 for band-limited f)
inline double volume_parallel_residual(const CurvatureContext& ctx) {
    const Vec& r = volume_density(ctx.rho);
    int n = ctx.b->ncomp();
    double worst = 0, scale = std::max(1.0, linf(r));
    // ∇_a ρ = (∂_a r - r tr(S_a)) ρ_ref
    auto dr = partials(ScalarField(ctx.b, r));
    for (size_t p = 0; p < r.size(); ++p)
        for (int a = 0; a < n; ++a) {
            double trS = 0;
            for (int k = 0; k < n; ++k) trS += ctx.S.get(p, k, a, k);
            worst = std::max(worst, std::abs(dr[a][p] - r[p] * trS) / scale);
        }
    return worst;
}

// rank-3 covariant derivative of an endomorphism: (∇_{e_a} E)^i_j, layout as
// ConnectionField-style [(a·n + i)·n + j]
inline std::vector<Vec> cov_grad_endo(const EndoField& E, const ConnectionField& S) {
    const auto& b = E.b;
    int n = b->ncomp();
    auto D = ref_grad_endo(E);
    size_t N = b->nnodes();
    for (size_t p = 0; p < N; ++p) {
        double e[16];
        gather_endo(E, p, e);
        for (int a = 0; a < n; ++a) {
            double Sa[16], t1[16], t2[16];
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) Sa[i * n + j] = S.get(p, i, a, j);
            sm::mul(n, Sa, e, t1);
            sm::mul(n, e, Sa, t2);
            for (int ij = 0; ij < n * n; ++ij)
                D[static_cast<size_t>(a) * n * n + ij][p] += t1[ij] - t2[ij];
        }
    }
    return D;
}

// λ(u) = tr(v ↦ (∇_v E)u) for an endomorphism E (used with E = J and E = Ĵ)
inline FormField trace_one_form(const std::vector<Vec>& DE, const BackendPtr& b) {
    int n = b->ncomp();
    FormField lam(b, 1);
    for (size_t p = 0; p < b->nnodes(); ++p)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int k = 0; k < n; ++k) s += DE[(static_cast<size_t>(k) * n + k) * n + j][p];
            lam.c[j][p] = s;
        }
    return lam;
}

inline FormField lambda_nabla(const EndoField& J, const CurvatureContext& ctx) {
    return trace_one_form(cov_grad_endo(J, ctx.S), ctx.b);
}

// Λ_ρ(J, Ĵ)(u) = tr((∇Ĵ)u + ½ Ĵ J ∇_u J)
inline FormField Lambda_rho(const EndoField& J, const EndoField& Jhat, const CurvatureContext& ctx) {
    const auto& b = ctx.b;
    int n = b->ncomp();
    auto DJh = cov_grad_endo(Jhat, ctx.S);
    auto DJ = cov_grad_endo(J, ctx.S);
    FormField lam = trace_one_form(DJh, b);
    for (size_t p = 0; p < b->nnodes(); ++p) {
        double jh[16], jm[16], t[16], dja[16];
        gather_endo(Jhat, p, jh);
        gather_endo(J, p, jm);
        sm::mul(n, jh, jm, t);
        for (int a = 0; a < n; ++a) {
            for (int ij = 0; ij < n * n; ++ij) dja[ij] = DJ[(static_cast<size_t>(a) * n * n) + ij][p];
            lam.c[a][p] += 0.5 * sm::trace_mul(n, t, dja);
        }
    }
    return lam;
}

inline FormField ricci_form(const CurvatureContext& ctx, const EndoField& J);

// Full Ricci form of (ρ, J).
inline FormField ricci_form(const FormField& rho, const EndoField& J) {
    CurvatureContext ctx = build_volume_connection(rho);
    return ricci_form(ctx, J);
}

inline FormField ricci_form(const CurvatureContext& ctx, const EndoField& J) {
    const auto& b = ctx.b;
    int n = b->ncomp();
    size_t N = b->nnodes();
    auto DJ = cov_grad_endo(J, ctx.S);
    FormField lam = trace_one_form(DJ, b);
    FormField dlam = d(lam);
    FormField ric(b, 2);

    // ∇_ref S as raw partials of components (+ slot projections on the sphere)
    int n3 = n * n * n;
    std::vector<std::vector<Vec>> DS(n3);
    for (int c = 0; c < n3; ++c) DS[c] = partials(ScalarField(b, ctx.S.c[c]));

    if (b->is_torus()) {
        auto pairs = index_tuples(n, 2);
        for (size_t t = 0; t < pairs.size(); ++t) {
            int i = pairs[t][0], j = pairs[t][1];
            for (size_t p = 0; p < N; ++p) {
                double Si[16], Sj[16], R[16], t1[16], t2[16], jm[16], dji[16], djj[16];
                for (int k = 0; k < n; ++k)
                    for (int l = 0; l < n; ++l) {
                        Si[k * n + l] = ctx.S.get(p, k, i, l);
                        Sj[k * n + l] = ctx.S.get(p, k, j, l);
                        // (∇_i S)_j - (∇_j S)_i  (flat reference: plain partials)
                        R[k * n + l] = DS[(static_cast<size_t>(k) * n + j) * n + l][i][p]
                                     - DS[(static_cast<size_t>(k) * n + i) * n + l][j][p];
                    }
                sm::mul(n, Si, Sj, t1);
                sm::mul(n, Sj, Si, t2);
                for (int q = 0; q < n * n; ++q) R[q] += t1[q] - t2[q];
                gather_endo(J, p, jm);
                for (int q = 0; q < n * n; ++q) {
                    dji[q] = DJ[(static_cast<size_t>(i) * n * n) + q][p];
                    djj[q] = DJ[(static_cast<size_t>(j) * n * n) + q][p];
                }
                double term1, term2;
                {
                    double JR[16];
                    sm::mul(n, jm, R, JR);
                    term1 = 0.5 * sm::trace(n, JR);
                }
                {
                    double t3[16], t4[16];
                    sm::mul(n, dji, jm, t3);
                    sm::mul(n, t3, djj, t4);
                    term2 = 0.25 * sm::trace(n, t4);
                }
                ric.c[t][p] = term1 + term2 + 0.5 * dlam.c[t][p];
            }
        }
    } else {
        const auto& sp = *b->sphere;
        for (size_t p = 0; p < N; ++p) {
            double P[9], eth[3], eph[3];
            for (int c = 0; c < 3; ++c) { eth[c] = sp.eth(p, c); eph[c] = sp.eph(p, c); }
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) P[i * 3 + j] = (i == j ? 1.0 : 0.0) - sp.nx(p, i) * sp.nx(p, j);

            // (∇_u S)(v,·) - (∇_v S)(u,·) with u = e_th, v = e_ph: contract raw
            // partials with the frame and project every slot
            double R[9];
            sm::zero(3, R);
            for (int k = 0; k < 3; ++k)
                for (int l = 0; l < 3; ++l) {
                    double s = 0;
                    for (int a = 0; a < 3; ++a)
                        for (int ii = 0; ii < 3; ++ii)
                            s += eth[a] * DS[(static_cast<size_t>(k) * 3 + ii) * 3 + l][a][p] * eph[ii]
                               - eph[a] * DS[(static_cast<size_t>(k) * 3 + ii) * 3 + l][a][p] * eth[ii];
                    R[k * 3 + l] = s;
                }
            // project the k,l slots
            double t1[9], t2[9];
            sm::mul(3, P, R, t1);
            sm::mul(3, t1, P, R);
            // + [S_u, S_v] + R_ref(u,v) = u v^T - v u^T
            double Su[9], Sv[9];
            for (int k = 0; k < 3; ++k)
                for (int l = 0; l < 3; ++l) {
                    double su = 0, svv = 0;
                    for (int a = 0; a < 3; ++a) {
                        su += ctx.S.get(p, k, a, l) * eth[a];
                        svv += ctx.S.get(p, k, a, l) * eph[a];
                    }
                    Su[k * 3 + l] = su;
                    Sv[k * 3 + l] = svv;
                }
            sm::mul(3, Su, Sv, t1);
            sm::mul(3, Sv, Su, t2);
            for (int q = 0; q < 9; ++q) R[q] += t1[q] - t2[q];
            for (int k = 0; k < 3; ++k)
                for (int l = 0; l < 3; ++l) R[k * 3 + l] += eth[k] * eph[l] - eph[k] * eth[l];

            double jm[9], dju[9], djv[9];
            gather_endo(J, p, jm);
            for (int q = 0; q < 9; ++q) {
                double du = 0, dv = 0;
                for (int a = 0; a < 3; ++a) {
                    du += DJ[(static_cast<size_t>(a) * 9) + q][p] * eth[a];
                    dv += DJ[(static_cast<size_t>(a) * 9) + q][p] * eph[a];
                }
                dju[q] = du;
                djv[q] = dv;
            }
            double JR[9];
            sm::mul(3, jm, R, JR);
            double term1 = 0.5 * sm::trace(3, JR);
            double t3[9], t4[9];
            sm::mul(3, dju, jm, t3);
            sm::mul(3, t3, djv, t4);
            double term2 = 0.25 * sm::trace(3, t4);
            ric.c[0][p] = term1 + term2 + 0.5 * dlam.c[0][p];
        }
    }
    return ric;
}

// Ric_{e^f ρ, J} = Ric_{ρ,J} + ½ d(df∘J)
inline FormField ricci_conformal(const FormField& base, const ScalarField& f, const EndoField& J) {
    FormField df = d(scalar_as_form(f));
    FormField dfJ = compose_J(df, J);
    FormField corr = d(dfJ);
    FormField out = base;
    for (size_t k = 0; k < out.c.size(); ++k)
        for (size_t p = 0; p < out.c[k].size(); ++p) out.c[k][p] += 0.5 * corr.c[k][p];
    return out;
}

enum class RicHatMode { finite_difference, via_lambda };

// Derivative of the Ricci form along the retraction through Ĵ.
inline FormField ric_hat(const FormField& rho, const EndoField& J, const EndoField& Jhat,
                         RicHatMode mode, double h = 1e-4, bool richardson = true) {
    if (mode == RicHatMode::via_lambda) {
        CurvatureContext ctx = build_volume_connection(rho);
        FormField lam = Lambda_rho(J, Jhat, ctx);
        FormField out = d(lam);
        for (auto& comp : out.c)
            for (auto& x : comp) x *= 0.5;
        return out;
    }
    auto fd = [&](double step) {
        EndoField Jp = retract(J, Jhat, step);
        EndoField Jm = retract(J, Jhat, -step);
        FormField Rp = ricci_form(rho, Jp);
        FormField Rm = ricci_form(rho, Jm);
        FormField out = Rp;
        for (size_t k = 0; k < out.c.size(); ++k)
            for (size_t p = 0; p < out.c[k].size(); ++p)
                out.c[k][p] = (Rp.c[k][p] - Rm.c[k][p]) / (2 * step);
        return out;
    };
    FormField D1 = fd(h);
    if (!richardson) return D1;
    FormField D2 = fd(h / 2);
    for (size_t k = 0; k < D1.c.size(); ++k)
        for (size_t p = 0; p < D1.c[k].size(); ++p)
            D1.c[k][p] = (4 * D2.c[k][p] - D1.c[k][p]) / 3;
    return D1;
}

// S with S·ρ = 2 Ric ∧ ω^{n-1}/(n-1)!, ρ = ω^n/n!.
inline ScalarField scalar_curvature(const FormField& omega, const EndoField& J) {
    const auto& b = omega.b;
    FormField rho = (b->dim == 2) ? omega : scaled(0.5, wedge(omega, omega));
    FormField ric = ricci_form(rho, J);
    FormField num = (b->dim == 2) ? ric : wedge(ric, omega);
    ScalarField S(b);
    const Vec& r = volume_density(rho);
    for (size_t p = 0; p < S.v.size(); ++p) S.v[p] = 2.0 * num.c[0][p] / r[p];
    return S;
}

inline FormField volume_form_of(const FormField& omega) {
    return (omega.b->dim == 2) ? omega : scaled(0.5, wedge(omega, omega));
}

// N(u,v) = J(∇_v J)u - J(∇_u J)v + (∇_{Ju} J)v - (∇_{Jv} J)u  (reference ∇)
inline TangentValued2Form nijenhuis(const EndoField& J) {
    const auto& b = J.b;
    int n = b->ncomp();
    auto DJ = ref_grad_endo(J);
    TangentValued2Form N(b);
    size_t NN = b->nnodes();
    auto dj_dir = [&](size_t p, const double* u, double* out) {
        sm::zero(n, out);
        for (int a = 0; a < n; ++a) {
            if (u[a] == 0) continue;
            for (int q = 0; q < n * n; ++q) out[q] += u[a] * DJ[(static_cast<size_t>(a) * n * n) + q][p];
        }
    };
    if (b->is_torus()) {
        auto pairs = index_tuples(n, 2);
        for (size_t p = 0; p < NN; ++p) {
            double jm[16];
            gather_endo(J, p, jm);
            for (size_t t = 0; t < pairs.size(); ++t) {
                int i = pairs[t][0], j = pairs[t][1];
                double u[4] = {0, 0, 0, 0}, v[4] = {0, 0, 0, 0};
                u[i] = 1; v[j] = 1;
                double Ju[4], Jv[4];
                sm::matvec(n, jm, u, Ju);
                sm::matvec(n, jm, v, Jv);
                double Du[16], Dv[16], DJu[16], DJv[16];
                dj_dir(p, u, Du);
                dj_dir(p, v, Dv);
                dj_dir(p, Ju, DJu);
                dj_dir(p, Jv, DJv);
                double x1[4], x2[4], x3[4], x4[4], res[4];
                sm::matvec(n, Dv, u, x1);   // (∇_v J)u
                sm::matvec(n, Du, v, x2);   // (∇_u J)v
                sm::matvec(n, DJu, v, x3);  // (∇_{Ju} J)v
                sm::matvec(n, DJv, u, x4);  // (∇_{Jv} J)u
                double jx1[4], jx2[4];
                sm::matvec(n, jm, x1, jx1);
                sm::matvec(n, jm, x2, jx2);
                for (int k = 0; k < n; ++k) res[k] = jx1[k] - jx2[k] + x3[k] - x4[k];
                for (int k = 0; k < n; ++k) N.c[t * n + k][p] = res[k];
            }
        }
    } else {
        const auto& sp = *b->sphere;
        for (size_t p = 0; p < NN; ++p) {
            double jm[9], u[3], v[3];
            gather_endo(J, p, jm);
            for (int c = 0; c < 3; ++c) { u[c] = sp.eth(p, c); v[c] = sp.eph(p, c); }
            double Ju[3], Jv[3];
            sm::matvec(3, jm, u, Ju);
            sm::matvec(3, jm, v, Jv);
            double Du[9], Dv[9], DJu[9], DJv[9];
            dj_dir(p, u, Du);
            dj_dir(p, v, Dv);
            dj_dir(p, Ju, DJu);
            dj_dir(p, Jv, DJv);
            double x1[3], x2[3], x3[3], x4[3];
            sm::matvec(3, Dv, u, x1);
            sm::matvec(3, Du, v, x2);
            sm::matvec(3, DJu, v, x3);
            sm::matvec(3, DJv, u, x4);
            double jx1[3], jx2[3];
            sm::matvec(3, jm, x1, jx1);
            sm::matvec(3, jm, x2, jx2);
            for (int k = 0; k < 3; ++k) N.c[k][p] = jx1[k] - jx2[k] + x3[k] - x4[k];
        }
    }
    return N;
}

inline double norm_linf(const TangentValued2Form& N) { return max_abs_comp(N.c); }

// Central difference of the Nijenhuis tensor along the retraction: the second
// Dolbeault operator applied to Ĵ at an integrable J. Richardson halving
// removes the O(h²) term, which dominates exactly in the gauge directions.
inline TangentValued2Form nijenhuis_linearization(const EndoField& J, const EndoField& Jhat,
                                                  double h = 1e-4, bool richardson = true) {
    auto fd = [&](double step) {
        TangentValued2Form Np = nijenhuis(retract(J, Jhat, step));
        TangentValued2Form Nm = nijenhuis(retract(J, Jhat, -step));
        TangentValued2Form out = Np;
        for (size_t k = 0; k < out.c.size(); ++k)
            for (size_t p = 0; p < out.c[k].size(); ++p)
                out.c[k][p] = (Np.c[k][p] - Nm.c[k][p]) / (2 * step);
        return out;
    };
    TangentValued2Form D1 = fd(h);
    if (!richardson) return D1;
    TangentValued2Form D2 = fd(h / 2);
    for (size_t k = 0; k < D1.c.size(); ++k)
        for (size_t p = 0; p < D1.c[k].size(); ++p)
            D1.c[k][p] = (4 * D2.c[k][p] - D1.c[k][p]) / 3;
    return D1;
}

} // namespace kml
