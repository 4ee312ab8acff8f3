#pragma once

// Exterior calculus and pointwise tensor algebra over both backends.
// Torus forms carry coordinate components over sorted index tuples; sphere
// forms are ambient covectors (degree 1) or multiples of the round area form
// (degree 2). All derivative routes go through the spectral transforms.

#include "fields.hpp"
#include "smallmat.hpp"

namespace kml {

// ---------------------------------------------------------------- primitives

// Scalar partials: torus = coordinate partials, sphere = ambient components of
// the tangential gradient.
inline std::vector<Vec> partials(const ScalarField& f) {
    std::vector<Vec> out;
    if (f.b->is_torus()) {
        out.reserve(f.b->dim);
        for (int a = 0; a < f.b->dim; ++a) out.push_back(f.b->torus->deriv(f.v, a));
    } else {
        auto g = f.b->sphere->grad(f.v);
        out.assign(g.begin(), g.end());
    }
    return out;
}

inline void gather_endo(const EndoField& E, size_t p, double* m) {
    int n = E.n();
    for (int i = 0; i < n * n; ++i) m[i] = E.c[i][p];
}
inline void scatter_endo(EndoField& E, size_t p, const double* m) {
    int n = E.n();
    for (int i = 0; i < n * n; ++i) E.c[i][p] = m[i];
}

// 2-form as a pointwise antisymmetric bilinear matrix.
inline void gather_form2(const FormField& w, size_t p, double* m) {
    const auto& b = w.b;
    int n = b->ncomp();
    sm::zero(n, m);
    if (b->is_torus()) {
        auto tuples = index_tuples(b->dim, 2);
        for (size_t t = 0; t < tuples.size(); ++t) {
            int i = tuples[t][0], j = tuples[t][1];
            m[i * n + j] = w.c[t][p];
            m[j * n + i] = -w.c[t][p];
        }
    } else {
        // sigma * [n]x^T
        double s = w.c[0][p];
        const auto& sp = *b->sphere;
        double nx = sp.nx(p, 0), ny = sp.nx(p, 1), nz = sp.nx(p, 2);
        double cx[9] = {0, -nz, ny, nz, 0, -nx, -ny, nx, 0};  // [n]x
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) m[i * 3 + j] = s * cx[j * 3 + i];
    }
}

inline const Vec& volume_density(const FormField& rho) {
    require(rho.is_top(), "volume_density: not a top form");
    return rho.c[0];
}

// ------------------------------------------------------------------ exterior

inline FormField d(const FormField& a) {
    const auto& b = a.b;
    require(a.degree < b->dim, "d: degree overflow");
    FormField out(b, a.degree + 1);
    if (b->is_torus()) {
        auto in_t = index_tuples(b->dim, a.degree);
        auto out_t = index_tuples(b->dim, a.degree + 1);
        for (size_t s = 0; s < in_t.size(); ++s) {
            for (int ax = 0; ax < b->dim; ++ax) {
                std::vector<int> t = in_t[s];
                t.push_back(ax);
                int sign = sort_sign(t);
                if (sign == 0) continue;
                // moving dx^ax in front of dx^S costs the count of S-entries below ax
                int below = 0;
                for (int e : in_t[s])
                    if (e < ax) ++below;
                sign = ((below % 2) ? -1 : 1);
                int r = tuple_rank(out_t, t);
                Vec da = b->torus->deriv(a.c[s], ax);
                for (size_t p = 0; p < da.size(); ++p) out.c[r][p] += sign * da[p];
            }
        }
    } else {
        if (a.degree == 0) {
            auto g = b->sphere->grad(a.c[0]);
            for (int cmp = 0; cmp < 3; ++cmp) out.c[cmp] = g[cmp];
        } else {
            // d of a 1-form: sigma = (∇λ)(e_th, e_ph) - (∇λ)(e_ph, e_th)
            const auto& sp = *b->sphere;
            std::array<std::array<Vec, 3>, 3> D;  // D[a][c] = grad_a of lambda_c
            for (int cmp = 0; cmp < 3; ++cmp) {
                auto g = sp.grad(a.c[cmp]);
                for (int ax = 0; ax < 3; ++ax) D[ax][cmp] = std::move(g[ax]);
            }
            for (size_t p = 0; p < sp.nnodes(); ++p) {
                double s = 0;
                for (int ax = 0; ax < 3; ++ax)
                    for (int cc = 0; cc < 3; ++cc)
                        s += sp.eth(p, ax) * D[ax][cc][p] * sp.eph(p, cc)
                           - sp.eph(p, ax) * D[ax][cc][p] * sp.eth(p, cc);
                out.c[0][p] = s;
            }
        }
    }
    return out;
}

inline FormField wedge(const FormField& a, const FormField& bfm) {
    const auto& b = a.b;
    require(same_backend(a.b, bfm.b), "wedge: backend mismatch");
    require(a.degree + bfm.degree <= b->dim, "wedge: degree overflow");
    FormField out(b, a.degree + bfm.degree);
    if (b->is_torus()) {
        auto at = index_tuples(b->dim, a.degree);
        auto bt = index_tuples(b->dim, bfm.degree);
        auto ot = index_tuples(b->dim, out.degree);
        for (size_t s = 0; s < at.size(); ++s)
            for (size_t t = 0; t < bt.size(); ++t) {
                std::vector<int> m = at[s];
                m.insert(m.end(), bt[t].begin(), bt[t].end());
                int sign = sort_sign(m);
                if (sign == 0) continue;
                int r = tuple_rank(ot, m);
                for (size_t p = 0; p < out.c[r].size(); ++p)
                    out.c[r][p] += sign * a.c[s][p] * bfm.c[t][p];
            }
    } else {
        if (a.degree == 0 || bfm.degree == 0) {
            const auto& sc = (a.degree == 0) ? a : bfm;
            const auto& other = (a.degree == 0) ? bfm : a;
            for (size_t k = 0; k < other.c.size(); ++k)
                for (size_t p = 0; p < out.c[k].size(); ++p) out.c[k][p] = sc.c[0][p] * other.c[k][p];
        } else {
            // 1 ∧ 1: sigma = a(e_th) b(e_ph) - a(e_ph) b(e_th)
            const auto& sp = *b->sphere;
            for (size_t p = 0; p < sp.nnodes(); ++p) {
                double a1 = 0, a2 = 0, b1 = 0, b2 = 0;
                for (int cc = 0; cc < 3; ++cc) {
                    a1 += a.c[cc][p] * sp.eth(p, cc);
                    a2 += a.c[cc][p] * sp.eph(p, cc);
                    b1 += bfm.c[cc][p] * sp.eth(p, cc);
                    b2 += bfm.c[cc][p] * sp.eph(p, cc);
                }
                out.c[0][p] = a1 * b2 - a2 * b1;
            }
        }
    }
    return out;
}

inline FormField contract(const VectorField& v, const FormField& a) {
    const auto& b = a.b;
    require(same_backend(v.b, a.b), "contract: backend mismatch");
    require(a.degree >= 1, "contract: degree must be >= 1");
    FormField out(b, a.degree - 1);
    if (b->is_torus()) {
        auto at = index_tuples(b->dim, a.degree);
        auto ot = index_tuples(b->dim, a.degree - 1);
        for (size_t s = 0; s < at.size(); ++s)
            for (size_t j = 0; j < at[s].size(); ++j) {
                std::vector<int> rest;
                for (size_t q = 0; q < at[s].size(); ++q)
                    if (q != j) rest.push_back(at[s][q]);
                int r = tuple_rank(ot, rest);
                double sign = (j % 2) ? -1.0 : 1.0;
                int ax = at[s][j];
                for (size_t p = 0; p < out.c[r].size(); ++p)
                    out.c[r][p] += sign * v.c[ax][p] * a.c[s][p];
            }
    } else {
        const auto& sp = *b->sphere;
        if (a.degree == 1) {
            for (size_t p = 0; p < sp.nnodes(); ++p) {
                double s = 0;
                for (int cc = 0; cc < 3; ++cc) s += a.c[cc][p] * v.c[cc][p];
                out.c[0][p] = s;
            }
        } else {
            // ι(v)(σ·area) = σ·(n × v)♭
            for (size_t p = 0; p < sp.nnodes(); ++p) {
                double n0 = sp.nx(p, 0), n1 = sp.nx(p, 1), n2 = sp.nx(p, 2);
                double v0 = v.c[0][p], v1 = v.c[1][p], v2 = v.c[2][p];
                double s = a.c[0][p];
                out.c[0][p] = s * (n1 * v2 - n2 * v1);
                out.c[1][p] = s * (n2 * v0 - n0 * v2);
                out.c[2][p] = s * (n0 * v1 - n1 * v0);
            }
        }
    }
    return out;
}

inline double integrate(const FormField& top) {
    require(top.is_top(), "integrate: degree must be 2n");
    return top.b->integrate_density(top.c[0]);
}

inline FormField lie_derivative(const VectorField& v, const FormField& a) {
    // Cartan: L_v = d ι(v) + ι(v) d
    FormField s1 = (a.degree >= 1) ? d(contract(v, a)) : FormField(a.b, 0);
    if (a.degree < a.b->dim) {
        FormField s2 = contract(v, d(a));
        for (size_t k = 0; k < s1.c.size(); ++k)
            for (size_t p = 0; p < s1.c[k].size(); ++p) s1.c[k][p] += s2.c[k][p];
    }
    return s1;
}

// ------------------------------------------------- reference covariant slots

// (∇_ref V)^i_a as an EndoField (row = output i, col = direction a).
inline EndoField ref_grad_vector(const VectorField& v) {
    const auto& b = v.b;
    EndoField out(b);
    int n = b->ncomp();
    std::vector<std::vector<Vec>> D(n);
    for (int i = 0; i < n; ++i) D[i] = partials(ScalarField(b, v.c[i]));
    if (b->is_torus()) {
        for (int i = 0; i < n; ++i)
            for (int a = 0; a < n; ++a) out.c[static_cast<size_t>(i) * n + a] = D[i][a];
    } else {
        const auto& sp = *b->sphere;
        for (size_t p = 0; p < sp.nnodes(); ++p) {
            double m[9], pm[9], P[9];
            for (int i = 0; i < 3; ++i)
                for (int a = 0; a < 3; ++a) m[i * 3 + a] = D[i][a][p];
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) P[i * 3 + j] = (i == j ? 1.0 : 0.0) - sp.nx(p, i) * sp.nx(p, j);
            sm::mul(3, P, m, pm);
            for (int i = 0; i < 9; ++i) out.c[i][p] = pm[i];
        }
    }
    return out;
}

// (∇_ref λ)_{ab} (row a = direction, col b), both slots tangential on the sphere.
inline EndoField ref_grad_oneform(const FormField& lam) {
    require(lam.degree == 1, "ref_grad_oneform: need a 1-form");
    const auto& b = lam.b;
    EndoField out(b);
    int n = b->ncomp();
    std::vector<std::vector<Vec>> D(n);
    for (int c = 0; c < n; ++c) D[c] = partials(ScalarField(b, lam.c[c]));
    if (b->is_torus()) {
        for (int a = 0; a < n; ++a)
            for (int c = 0; c < n; ++c) out.c[static_cast<size_t>(a) * n + c] = D[c][a];
    } else {
        const auto& sp = *b->sphere;
        for (size_t p = 0; p < sp.nnodes(); ++p) {
            double m[9], t[9], P[9];
            for (int a = 0; a < 3; ++a)
                for (int c = 0; c < 3; ++c) m[a * 3 + c] = D[c][a][p];
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) P[i * 3 + j] = (i == j ? 1.0 : 0.0) - sp.nx(p, i) * sp.nx(p, j);
            sm::mul(3, m, P, t);   // project value slot
            sm::mul(3, P, t, m);   // direction slot already tangential; keep canonical
            for (int i = 0; i < 9; ++i) out.c[i][p] = m[i];
        }
    }
    return out;
}

// Rank-3 field (∇_ref E): layout [(a*n + i)*n + j] = (∇_{e_a} E)^i_j.
inline std::vector<Vec> ref_grad_endo(const EndoField& E) {
    const auto& b = E.b;
    int n = b->ncomp();
    std::vector<Vec> out(static_cast<size_t>(n) * n * n);
    std::vector<std::vector<Vec>> D(static_cast<size_t>(n) * n);
    for (int i = 0; i < n * n; ++i) D[i] = partials(ScalarField(b, E.c[i]));
    if (b->is_torus()) {
        for (int a = 0; a < n; ++a)
            for (int ij = 0; ij < n * n; ++ij) out[static_cast<size_t>(a) * n * n + ij] = D[ij][a];
    } else {
        const auto& sp = *b->sphere;
        for (int a = 0; a < 3; ++a)
            for (int ij = 0; ij < 9; ++ij) out[static_cast<size_t>(a) * 9 + ij] = Vec(sp.nnodes(), 0.0);
        for (size_t p = 0; p < sp.nnodes(); ++p) {
            double P[9];
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) P[i * 3 + j] = (i == j ? 1.0 : 0.0) - sp.nx(p, i) * sp.nx(p, j);
            for (int a = 0; a < 3; ++a) {
                double m[9], t[9];
                for (int ij = 0; ij < 9; ++ij) m[ij] = D[ij][a][p];
                sm::mul(3, P, m, t);
                sm::mul(3, t, P, m);
                for (int ij = 0; ij < 9; ++ij) out[static_cast<size_t>(a) * 9 + ij][p] = m[ij];
            }
        }
    }
    return out;
}

// Tensor Lie derivative of an endomorphism: L_v E = ∇_v E - (∇v)E + E(∇v),
// with the reference connection (any torsion-free one gives the same result).
inline EndoField lie_derivative(const VectorField& v, const EndoField& E) {
    const auto& b = E.b;
    require(same_backend(v.b, E.b), "lie_derivative: backend mismatch");
    int n = b->ncomp();
    auto DE = ref_grad_endo(E);
    EndoField Dv = ref_grad_vector(v);
    EndoField out(b);
    size_t N = b->nnodes();
    for (size_t p = 0; p < N; ++p) {
        double e[16], dv[16], m[16], t1[16], t2[16];
        gather_endo(E, p, e);
        gather_endo(Dv, p, dv);
        sm::zero(n, m);
        for (int a = 0; a < n; ++a) {
            double va = v.c[a][p];
            if (va == 0) continue;
            for (int ij = 0; ij < n * n; ++ij) m[ij] += va * DE[static_cast<size_t>(a) * n * n + ij][p];
        }
        sm::mul(n, dv, e, t1);
        sm::mul(n, e, dv, t2);
        for (int ij = 0; ij < n * n; ++ij) m[ij] += t2[ij] - t1[ij];
        scatter_endo(out, p, m);
    }
    return out;
}

// --------------------------------------------------------- symplectic basics

inline FormField scalar_as_form(const ScalarField& f) {
    FormField out(f.b, 0);
    out.c[0] = f.v;
    return out;
}

inline ScalarField form_as_scalar(const FormField& f) {
    require(f.degree == 0, "form_as_scalar: degree must be 0");
    return ScalarField(f.b, f.c[0]);
}

inline ScalarField one_form_apply(const FormField& lam, const VectorField& v) {
    require(lam.degree == 1, "one_form_apply: degree must be 1");
    ScalarField out(lam.b);
    for (size_t a = 0; a < lam.c.size(); ++a)
        for (size_t p = 0; p < out.v.size(); ++p) out.v[p] += lam.c[a][p] * v.c[a][p];
    return out;
}

// α∘J for a 1-form: (α∘J)(u) = α(Ju), components (α∘J)_a = α_b J^b_a.
inline FormField compose_J(const FormField& lam, const EndoField& J) {
    require(lam.degree == 1, "compose_J: degree must be 1");
    FormField out(lam.b, 1);
    int n = J.n();
    for (int a = 0; a < n; ++a)
        for (int bb = 0; bb < n; ++bb) {
            const Vec& Jb = J.c[static_cast<size_t>(bb) * n + a];
            for (size_t p = 0; p < out.c[a].size(); ++p) out.c[a][p] += lam.c[bb][p] * Jb[p];
        }
    return out;
}

// Solve ι(v)ω = dH pointwise: v carries the Hamiltonian flow of H.
inline VectorField hamiltonian_vf(const ScalarField& H, const FormField& omega) {
    require(omega.degree == 2, "hamiltonian_vf: omega must be a 2-form");
    const auto& b = H.b;
    FormField dH = d(scalar_as_form(H));
    VectorField v(b);
    size_t N = b->nnodes();
    if (b->is_torus()) {
        int n = b->dim;
        for (size_t p = 0; p < N; ++p) {
            double Om[16], Oi[16], rhs[4], vv[4];
            gather_form2(omega, p, Om);
            require(sm::inverse(n, Om, Oi), "hamiltonian_vf: omega degenerate at a node");
            for (int a = 0; a < n; ++a) rhs[a] = dH.c[a][p];
            sm::matvec(n, Oi, rhs, vv);
            for (int a = 0; a < n; ++a) v.c[a][p] = -vv[a];
        }
    } else {
        // (ι(v)(σ·area))(u) = σ (n×v)·u  =>  v = -(1/σ) n × grad H
        const auto& sp = *b->sphere;
        for (size_t p = 0; p < N; ++p) {
            double s = omega.c[0][p];
            require(std::abs(s) > 1e-300, "hamiltonian_vf: omega degenerate at a node");
            double g0 = dH.c[0][p], g1 = dH.c[1][p], g2 = dH.c[2][p];
            double n0 = sp.nx(p, 0), n1 = sp.nx(p, 1), n2 = sp.nx(p, 2);
            v.c[0][p] = -(n1 * g2 - n2 * g1) / s;
            v.c[1][p] = -(n2 * g0 - n0 * g2) / s;
            v.c[2][p] = -(n0 * g1 - n1 * g0) / s;
        }
    }
    return v;
}

// Y with ι(Y)ρ = dα (the exact divergence-free field of a (2n-2)-form).
inline VectorField vf_from_alpha(const FormField& alpha, const FormField& rho) {
    const auto& b = alpha.b;
    require(alpha.degree == b->dim - 2, "vf_from_alpha: alpha must have degree 2n-2");
    require(rho.is_top(), "vf_from_alpha: rho must be a volume form");
    FormField da = d(alpha);
    VectorField Y(b);
    const Vec& r = volume_density(rho);
    size_t N = b->nnodes();
    if (b->is_torus()) {
        int n = b->dim;
        auto ot = index_tuples(n, n - 1);
        // ι(Y)(r dx^{0..n-1}) over the tuple missing axis i equals (-1)^i Y^i r
        for (int i = 0; i < n; ++i) {
            std::vector<int> rest;
            for (int a = 0; a < n; ++a)
                if (a != i) rest.push_back(a);
            int rk = tuple_rank(ot, rest);
            double sign = (i % 2) ? -1.0 : 1.0;
            for (size_t p = 0; p < N; ++p) {
                require(r[p] > 0, "vf_from_alpha: rho not positive");
                Y.c[i][p] = sign * da.c[rk][p] / r[p];
            }
        }
    } else {
        // ι(Y)(r·area) = r (n×Y)♭ = dα  =>  Y = -(1/r) n × grad α
        const auto& sp = *b->sphere;
        for (size_t p = 0; p < N; ++p) {
            require(r[p] > 0, "vf_from_alpha: rho not positive");
            double g0 = da.c[0][p], g1 = da.c[1][p], g2 = da.c[2][p];
            double n0 = sp.nx(p, 0), n1 = sp.nx(p, 1), n2 = sp.nx(p, 2);
            Y.c[0][p] = -(n1 * g2 - n2 * g1) / r[p];
            Y.c[1][p] = -(n2 * g0 - n0 * g2) / r[p];
            Y.c[2][p] = -(n0 * g1 - n1 * g0) / r[p];
        }
    }
    return Y;
}

inline ScalarField poisson_bracket(const ScalarField& F, const ScalarField& G, const FormField& omega) {
    // {F,G} = ω(v_F,v_G) = (ι(v_F)ω)(v_G) = dF(v_G)
    VectorField vG = hamiltonian_vf(G, omega);
    FormField dF = d(scalar_as_form(F));
    return one_form_apply(dF, vG);
}

// Riemannian metric ½(ω(u,Jv) + ω(v,Ju)) as a pointwise symmetric matrix.
inline void gather_metric(const FormField& omega, const EndoField& J, size_t p, double* G) {
    int n = J.n();
    double Om[16], Jm[16], OJ[16];
    gather_form2(omega, p, Om);
    gather_endo(J, p, Jm);
    sm::mul(n, Om, Jm, OJ);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) G[i * n + j] = 0.5 * (OJ[i * n + j] + OJ[j * n + i]);
}

// Pointwise g-adjoint of an endomorphism, g = ½(ω(·,J·)+ω(J·,·)).
inline EndoField adjoint_endo(const EndoField& e, const FormField& omega, const EndoField& J) {
    const auto& b = e.b;
    EndoField out(b);
    size_t N = b->nnodes();
    if (b->is_torus()) {
        int n = b->ncomp();
        for (size_t p = 0; p < N; ++p) {
            double G[16], Gi[16], E[16], Et[16], t[16], res[16];
            gather_metric(omega, J, p, G);
            require(sm::inverse(n, G, Gi), "adjoint_endo: metric degenerate (tameness violated)");
            gather_endo(e, p, E);
            sm::transpose(n, E, Et);
            sm::mul(n, Gi, Et, t);
            sm::mul(n, t, G, res);
            scatter_endo(out, p, res);
        }
    } else {
        const auto& sp = *b->sphere;
        for (size_t p = 0; p < N; ++p) {
            // reduce to the 2x2 tangent block in the (e_th, e_ph) frame
            double F[6];  // 3x2 frame
            for (int i = 0; i < 3; ++i) { F[i * 2 + 0] = sp.eth(p, i); F[i * 2 + 1] = sp.eph(p, i); }
            double G[16], E[16];
            gather_metric(omega, J, p, G);
            gather_endo(e, p, E);
            double G2[4] = {0, 0, 0, 0}, E2[4] = {0, 0, 0, 0};
            for (int a = 0; a < 2; ++a)
                for (int bb2 = 0; bb2 < 2; ++bb2)
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j) {
                            G2[a * 2 + bb2] += F[i * 2 + a] * G[i * 3 + j] * F[j * 2 + bb2];
                            E2[a * 2 + bb2] += F[i * 2 + a] * E[i * 3 + j] * F[j * 2 + bb2];
                        }
            double Gi[4], Et[4], t[4], R2[4];
            require(sm::inverse(2, G2, Gi), "adjoint_endo: metric degenerate (tameness violated)");
            sm::transpose(2, E2, Et);
            sm::mul(2, Gi, Et, t);
            sm::mul(2, t, G2, R2);
            double R[9];
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    double s = 0;
                    for (int a = 0; a < 2; ++a)
                        for (int bb2 = 0; bb2 < 2; ++bb2) s += F[i * 2 + a] * R2[a * 2 + bb2] * F[j * 2 + bb2];
                    R[i * 3 + j] = s;
                }
            scatter_endo(out, p, R);
        }
    }
    return out;
}

inline ScalarField trace_product(const EndoField& A, const EndoField& B) {
    ScalarField out(A.b);
    int n = A.n();
    size_t N = A.b->nnodes();
    for (size_t p = 0; p < N; ++p) {
        double a[16], bm[16];
        gather_endo(A, p, a);
        gather_endo(B, p, bm);
        out.v[p] = sm::trace_mul(n, a, bm);
    }
    return out;
}

inline ScalarField trace_product(const EndoField& A, const EndoField& B, const EndoField& C) {
    ScalarField out(A.b);
    int n = A.n();
    size_t N = A.b->nnodes();
    for (size_t p = 0; p < N; ++p) {
        double a[16], bm[16], cm[16], t[16];
        gather_endo(A, p, a);
        gather_endo(B, p, bm);
        gather_endo(C, p, cm);
        sm::mul(n, a, bm, t);
        out.v[p] = sm::trace_mul(n, t, cm);
    }
    return out;
}

inline EndoField endo_mul(const EndoField& A, const EndoField& B) {
    EndoField out(A.b);
    int n = A.n();
    size_t N = A.b->nnodes();
    for (size_t p = 0; p < N; ++p) {
        double a[16], bm[16], cm[16];
        gather_endo(A, p, a);
        gather_endo(B, p, bm);
        sm::mul(n, a, bm, cm);
        scatter_endo(out, p, cm);
    }
    return out;
}

inline VectorField apply_endo(const EndoField& E, const VectorField& v) {
    VectorField out(v.b);
    int n = E.n();
    size_t N = v.b->nnodes();
    for (size_t p = 0; p < N; ++p) {
        double m[16], x[4], y[4];
        gather_endo(E, p, m);
        for (int i = 0; i < n; ++i) x[i] = v.c[i][p];
        sm::matvec(n, m, x, y);
        for (int i = 0; i < n; ++i) out.c[i][p] = y[i];
    }
    return out;
}

// ½ ∫ tr(Ĵ1 J Ĵ2) ρ — the base symplectic pairing.
inline double omega_rho_pair(const EndoField& J1, const EndoField& J2,
                             const EndoField& J, const FormField& rho) {
    require(same_backend(J1.b, J2.b) && same_backend(J1.b, J.b), "omega_rho_pair: backend mismatch");
    ScalarField t = trace_product(J1, endo_mul(J, J2));
    Vec dens(t.v.size());
    const Vec& r = volume_density(rho);
    for (size_t p = 0; p < dens.size(); ++p) dens[p] = 0.5 * t.v[p] * r[p];
    return J.b->integrate_density(dens);
}

// divergence f_v = d(ι(v)ρ)/ρ
inline ScalarField divergence(const VectorField& v, const FormField& rho) {
    FormField num = d(contract(v, rho));
    ScalarField out(v.b);
    const Vec& r = volume_density(rho);
    for (size_t p = 0; p < out.v.size(); ++p) out.v[p] = num.c[0][p] / r[p];
    return out;
}

inline double mean_against(const ScalarField& f, const FormField& rho) {
    Vec dens(f.v.size());
    const Vec& r = volume_density(rho);
    for (size_t p = 0; p < dens.size(); ++p) dens[p] = f.v[p] * r[p];
    double tot = f.b->integrate_density(r);
    return f.b->integrate_density(dens) / tot;
}

inline ScalarField remove_mean(const ScalarField& f, const FormField& rho) {
    double m = mean_against(f, rho);
    return map_scalar(f, [m](double x) { return x - m; });
}

inline double l2_norm_density(const ScalarField& f, const Vec& dens) {
    Vec v(f.v.size());
    for (size_t p = 0; p < v.size(); ++p) v[p] = f.v[p] * f.v[p] * dens[p];
    return std::sqrt(f.b->integrate_density(v));
}

// Exact spectral d*d-inverse for the reference metric: mean-zero u with
// d*d u = rhs. The torus symbol is |k|², the sphere symbol l(l+1).
inline ScalarField poisson_solve_reference(const ScalarField& rhs) {
    const auto& b = rhs.b;
    double mean = b->integrate_density(rhs.v) / b->integrate_density(Vec(b->nnodes(), 1.0));
    double scale = std::max(1.0, linf(rhs.v));
    require(std::abs(mean) <= 1e-10 * scale, "poisson_solve: rhs has nonzero mean");
    if (b->is_torus()) {
        auto m = b->torus->to_modes(rhs.v);
        int n = b->torus->n(), dm = b->dim;
        int idx[4];
        for (size_t i = 0; i < m.size(); ++i) {
            size_t t = i;
            for (int a = dm - 1; a >= 0; --a) { idx[a] = static_cast<int>(t % n); t /= n; }
            double k2 = 0;
            bool nyq = false;
            for (int a = 0; a < dm; ++a) {
                int k = b->torus->wavenumber(idx[a]);
                if (idx[a] == n / 2) nyq = true;
                k2 += static_cast<double>(k) * k;
            }
            if (k2 == 0 || nyq) m[i] = 0;
            else m[i] /= k2;
        }
        return ScalarField(b, b->torus->from_modes(m));
    }
    return ScalarField(b, b->sphere->poisson(rhs.v));
}

inline ScalarField laplacian_reference(const ScalarField& f) {
    const auto& b = f.b;
    if (b->is_torus()) {
        ScalarField out(b);
        for (int a = 0; a < b->dim; ++a) {
            Vec d2 = b->torus->deriv(b->torus->deriv(f.v, a), a);
            for (size_t p = 0; p < out.v.size(); ++p) out.v[p] -= d2[p];
        }
        return out;
    }
    return ScalarField(b, b->sphere->laplacian(f.v));
}

// ----------------------------------------------------------- torus pullbacks

struct AffineMap {
    int dim = 2;
    int A[16] = {1, 0, 0, 1};   // row-major integer lattice matrix
    double b[4] = {0, 0, 0, 0};

    int det() const {
        double m[16];
        for (int i = 0; i < dim * dim; ++i) m[i] = A[i];
        if (dim == 2) return static_cast<int>(std::lround(m[0] * m[3] - m[1] * m[2]));
        // 4x4 cofactor expansion; integer entries, exact in doubles
        double det = 0;
        for (int c = 0; c < 4; ++c) {
            double sub[9];
            int r = 0;
            for (int i = 1; i < 4; ++i) {
                int cc = 0;
                for (int j = 0; j < 4; ++j) {
                    if (j == c) continue;
                    sub[r * 3 + cc] = m[i * 4 + j];
                    ++cc;
                }
                ++r;
            }
            double d3 = sub[0] * (sub[4] * sub[8] - sub[5] * sub[7])
                      - sub[1] * (sub[3] * sub[8] - sub[5] * sub[6])
                      + sub[2] * (sub[3] * sub[7] - sub[4] * sub[6]);
            det += ((c % 2) ? -1.0 : 1.0) * m[c] * d3;
        }
        return static_cast<int>(std::lround(det));
    }

    void inverse(double* Ai) const {
        double m[16];
        for (int i = 0; i < dim * dim; ++i) m[i] = A[i];
        require(sm::inverse(dim, m, Ai), "AffineMap: singular matrix");
    }
};

inline ScalarField pullback(const ScalarField& f, const AffineMap& phi) {
    require(f.b->is_torus(), "pullback: torus fields only");
    require(std::abs(phi.det()) == 1, "pullback: map does not preserve the lattice");
    return ScalarField(f.b, f.b->torus->compose_affine(f.v, phi.A, phi.b));
}

inline VectorField pullback(const VectorField& v, const AffineMap& phi) {
    require(v.b->is_torus(), "pullback: torus fields only");
    require(std::abs(phi.det()) == 1, "pullback: map does not preserve the lattice");
    int n = v.b->dim;
    double Ai[16];
    phi.inverse(Ai);
    std::vector<Vec> comp(n);
    for (int i = 0; i < n; ++i) comp[i] = v.b->torus->compose_affine(v.c[i], phi.A, phi.b);
    VectorField out(v.b);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (size_t p = 0; p < out.c[i].size(); ++p) out.c[i][p] += Ai[i * n + j] * comp[j][p];
    return out;
}

inline EndoField pullback(const EndoField& E, const AffineMap& phi) {
    require(E.b->is_torus(), "pullback: torus fields only");
    require(std::abs(phi.det()) == 1, "pullback: map does not preserve the lattice");
    int n = E.b->dim;
    double Ai[16];
    phi.inverse(Ai);
    std::vector<Vec> comp(static_cast<size_t>(n) * n);
    for (int i = 0; i < n * n; ++i) comp[i] = E.b->torus->compose_affine(E.c[i], phi.A, phi.b);
    EndoField out(E.b);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            Vec& o = out.c[static_cast<size_t>(i) * n + j];
            for (int k = 0; k < n; ++k)
                for (int l = 0; l < n; ++l) {
                    double f = Ai[i * n + k] * phi.A[l * n + j];
                    if (f == 0) continue;
                    const Vec& src = comp[static_cast<size_t>(k) * n + l];
                    for (size_t p = 0; p < o.size(); ++p) o[p] += f * src[p];
                }
        }
    return out;
}

inline FormField pullback(const FormField& a, const AffineMap& phi) {
    require(a.b->is_torus(), "pullback: torus fields only");
    require(std::abs(phi.det()) == 1, "pullback: map does not preserve the lattice");
    int n = a.b->dim, k = a.degree;
    auto tuples = index_tuples(n, k);
    std::vector<Vec> comp(tuples.size());
    for (size_t s = 0; s < tuples.size(); ++s) comp[s] = a.b->torus->compose_affine(a.c[s], phi.A, phi.b);
    FormField out(a.b, k);
    if (k == 0) { out.c[0] = comp[0]; return out; }
    // (φ*α)_{J} = Σ_I α_I(φx) det(A[I,J])
    for (size_t so = 0; so < tuples.size(); ++so)
        for (size_t si = 0; si < tuples.size(); ++si) {
            // minor of A with rows tuples[si], cols tuples[so]
            double sub[16];
            for (int r = 0; r < k; ++r)
                for (int c = 0; c < k; ++c) sub[r * k + c] = phi.A[tuples[si][r] * n + tuples[so][c]];
            double det = 1;
            if (k == 1) det = sub[0];
            else if (k == 2) det = sub[0] * sub[3] - sub[1] * sub[2];
            else if (k == 3) det = sub[0] * (sub[4] * sub[8] - sub[5] * sub[7])
                                 - sub[1] * (sub[3] * sub[8] - sub[5] * sub[6])
                                 + sub[2] * (sub[3] * sub[7] - sub[4] * sub[6]);
            else {
                double m4[16];
                sm::copy(4, sub, m4);
                det = 0;
                for (int c = 0; c < 4; ++c) {
                    double s3[9];
                    int r = 0;
                    for (int i = 1; i < 4; ++i) {
                        int cc = 0;
                        for (int j = 0; j < 4; ++j) {
                            if (j == c) continue;
                            s3[r * 3 + cc] = m4[i * 4 + j];
                            ++cc;
                        }
                        ++r;
                    }
                    double d3 = s3[0] * (s3[4] * s3[8] - s3[5] * s3[7])
                              - s3[1] * (s3[3] * s3[8] - s3[5] * s3[6])
                              + s3[2] * (s3[3] * s3[7] - s3[4] * s3[6]);
                    det += ((c % 2) ? -1.0 : 1.0) * m4[c] * d3;
                }
            }
            if (det == 0) continue;
            for (size_t p = 0; p < out.c[so].size(); ++p) out.c[so][p] += det * comp[si][p];
        }
    return out;
}

} // namespace kml
