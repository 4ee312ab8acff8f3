#pragma once

// Executable residual checks for the moment-map identities and their
// companions. Every check evaluates both sides through independent code paths
// and reports scale-normalized L∞/L² residuals.

#include "solvers.hpp"

namespace kml {

struct ResidualReport {
    std::string id;
    std::string backend;
    std::uint64_t seed = 0;
    double linf = 0;      // scale-normalized
    double l2 = 0;        // scale-normalized
    double scale = 1;
    double tol = 0;
    bool pass = false;
    double runtime_sec = 0;
    std::vector<std::pair<std::string, std::string>> inputs;  // name -> digest

    static ResidualReport make(std::string id, const BackendPtr& b, double raw_linf,
                               double raw_l2, double scale, double tol) {
        ResidualReport r;
        r.id = std::move(id);
        r.backend = to_string(b->kind);
        r.scale = std::max(scale, 1e-14);
        r.linf = raw_linf / r.scale;
        r.l2 = raw_l2 / r.scale;
        r.tol = tol;
        r.pass = r.linf <= tol;
        return r;
    }
    void add_input(const std::string& name, const std::vector<Vec>& comps) {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& c : comps) h = fnv1a(c, h);
        inputs.emplace_back(name, hex64(h));
    }
};

namespace detail {

inline double field_linf(const FormField& f) { return max_abs_comp(f.c); }

inline double form_l2(const FormField& f, const BackendPtr& b) {
    Vec dens(b->nnodes(), 0.0);
    for (const auto& c : f.c)
        for (size_t p = 0; p < c.size(); ++p) dens[p] += c[p] * c[p];
    return std::sqrt(b->integrate_density(dens));
}

inline double endo_l2(const EndoField& e) {
    Vec dens(e.b->nnodes(), 0.0);
    for (const auto& c : e.c)
        for (size_t p = 0; p < c.size(); ++p) dens[p] += c[p] * c[p];
    return std::sqrt(e.b->integrate_density(dens));
}

// ω̂(u,v) - ω̂(Ju,Jv) - ω(Ĵu,Jv) - ω(Ju,Ĵv) as a pointwise matrix residual
inline double tangency_residual(const FormField& omega, const EndoField& J,
                                const FormField& what, const EndoField& Jhat) {
    int n = J.n();
    double worst = 0;
    for (size_t p = 0; p < J.b->nnodes(); ++p) {
        double W[16], Om[16], Jm[16], Hm[16], t1[16], t2[16], lhs[16], rhs[16];
        gather_form2(what, p, W);
        gather_form2(omega, p, Om);
        gather_endo(J, p, Jm);
        gather_endo(Jhat, p, Hm);
        double Jt[16], Ht[16];
        sm::transpose(n, Jm, Jt);
        sm::transpose(n, Hm, Ht);
        // lhs = W - J^T W J
        sm::mul(n, Jt, W, t1);
        sm::mul(n, t1, Jm, t2);
        for (int i = 0; i < n * n; ++i) lhs[i] = W[i] - t2[i];
        // rhs = Ĵ^T Ω J + J^T Ω Ĵ
        sm::mul(n, Ht, Om, t1);
        sm::mul(n, t1, Jm, rhs);
        sm::mul(n, Jt, Om, t1);
        sm::mul(n, t1, Hm, t2);
        for (int i = 0; i < n * n; ++i) rhs[i] += t2[i];
        for (int i = 0; i < n * n; ++i) worst = std::max(worst, std::abs(lhs[i] - rhs[i]));
    }
    return worst;
}

} // namespace detail

// ------------------------------------------------------------- Ricci moment

// ∫ 2 Ric-hat(J,Ĵ) ∧ α  =  Ω_ρ(Ĵ, L_{Y_α} J)
inline ResidualReport check_ricci_moment(const EndoField& J, const EndoField& Jhat,
                                         const FormField& alpha, const FormField& rho,
                                         double tol = 1e-7, double fd_step = 1e-4) {
    const auto& b = J.b;
    FormField rhat = ric_hat(rho, J, Jhat, RicHatMode::finite_difference, fd_step);
    double lhs = integrate(wedge(scaled(2.0, rhat), alpha));
    VectorField Y = vf_from_alpha(alpha, rho);
    EndoField LYJ = lie_derivative(Y, J);
    double rhs = omega_rho_pair(Jhat, LYJ, J, rho);
    double scale = std::max({std::abs(lhs), std::abs(rhs),
                             max_abs_comp(Jhat.c) * detail::field_linf(d(alpha)), 1e-12});
    ResidualReport r = ResidualReport::make("ricci-moment", b, std::abs(lhs - rhs),
                                            std::abs(lhs - rhs), scale, tol);
    r.add_input("Jhat", Jhat.c);
    r.add_input("alpha", alpha.c);
    return r;
}

// --------------------------------------------------------------- Λ identities

// dΛ = 2 Ric-hat; ∫Λ∧ι(v)ρ = ½∫tr(ĴJL_vJ)ρ; Λ(J, L_vJ) = 2ι(v)Ric - df_v∘J + df_{Jv}
inline std::vector<ResidualReport> check_lambda_identities(const EndoField& J, const EndoField& Jhat,
                                                           const VectorField& v, const FormField& rho,
                                                           double tol = 1e-7, double fd_step = 1e-4) {
    const auto& b = J.b;
    CurvatureContext ctx = build_volume_connection(rho);
    std::vector<ResidualReport> out;

    {  // exactness
        FormField lam = Lambda_rho(J, Jhat, ctx);
        FormField dlam = d(lam);
        FormField rhat = ric_hat(rho, J, Jhat, RicHatMode::finite_difference, fd_step);
        double worst = 0;
        for (size_t k = 0; k < dlam.c.size(); ++k)
            for (size_t p = 0; p < dlam.c[k].size(); ++p)
                worst = std::max(worst, std::abs(dlam.c[k][p] - 2 * rhat.c[k][p]));
        double scale = std::max({detail::field_linf(dlam), 2 * detail::field_linf(rhat), 1e-12});
        out.push_back(ResidualReport::make("lambda-exactness", b, worst, worst, scale, tol));
    }
    {  // pairing
        FormField lam = Lambda_rho(J, Jhat, ctx);
        double lhs = integrate(wedge(lam, contract(v, rho)));
        double rhs = 0.5 * b->integrate_density([&] {
            ScalarField t = trace_product(Jhat, endo_mul(J, lie_derivative(v, J)));
            Vec dens(t.v.size());
            const Vec& r = volume_density(rho);
            for (size_t p = 0; p < dens.size(); ++p) dens[p] = t.v[p] * r[p];
            return dens;
        }());
        double scale = std::max({std::abs(lhs), std::abs(rhs),
                                 max_abs_comp(Jhat.c) * max_abs_comp(v.c), 1e-12});
        out.push_back(ResidualReport::make("lambda-pairing", b, std::abs(lhs - rhs),
                                           std::abs(lhs - rhs), scale, tol));
    }
    {  // Lie-direction formula
        EndoField LvJ = lie_derivative(v, J);
        FormField lhs = Lambda_rho(J, LvJ, ctx);
        FormField ric = ricci_form(ctx, J);
        ScalarField fv = divergence(v, rho);
        ScalarField fJv = divergence(apply_endo(J, v), rho);
        FormField rhs = contract(v, ric);
        for (auto& c : rhs.c)
            for (auto& x : c) x *= 2.0;
        FormField dfvJ = compose_J(d(scalar_as_form(fv)), J);
        FormField dfJv = d(scalar_as_form(fJv));
        for (size_t k = 0; k < rhs.c.size(); ++k)
            for (size_t p = 0; p < rhs.c[k].size(); ++p)
                rhs.c[k][p] += -dfvJ.c[k][p] + dfJv.c[k][p];
        double worst = 0;
        for (size_t k = 0; k < lhs.c.size(); ++k)
            for (size_t p = 0; p < lhs.c[k].size(); ++p)
                worst = std::max(worst, std::abs(lhs.c[k][p] - rhs.c[k][p]));
        double scale = std::max({detail::field_linf(lhs), detail::field_linf(rhs), 1e-12});
        out.push_back(ResidualReport::make("lambda-lie", b, worst, worst, scale, tol));
    }
    return out;
}

// Λ is independent of the admissible connection.
inline ResidualReport check_lambda_independence(const EndoField& J, const EndoField& Jhat,
                                                const FormField& rho, Rng& rng, double tol = 1e-9) {
    CurvatureContext ctx = build_volume_connection(rho);
    ConnectionField T = random_tracefree_deviation(J.b, 2, 0.2, rng);
    FormField l1 = Lambda_rho(J, Jhat, ctx);
    FormField l2 = Lambda_rho(J, Jhat, with_extra_deviation(ctx, T));
    double worst = 0;
    for (size_t k = 0; k < l1.c.size(); ++k)
        for (size_t p = 0; p < l1.c[k].size(); ++p)
            worst = std::max(worst, std::abs(l1.c[k][p] - l2.c[k][p]));
    double scale = std::max(detail::field_linf(l1), 1.0);
    return ResidualReport::make("lambda-independence", J.b, worst, worst, scale, tol);
}

// Weak-form checks standing in for the formal-adjoint identity on Kähler
// scenes with the reference Levi-Civita connection:
//   (a) L_X J = 2 J ∂̄_J X, ∂̄_J X = anti-linear part of ∇X;
//   (b) ∫ Λ_ρ(J,Ĵ)(v) ρ = -∫ tr(Ĵ ∂̄_J v) ρ for Hamiltonian test fields v.
inline std::vector<ResidualReport> check_lambda_adjoint_weak(const EndoField& J, const EndoField& Jhat,
                                                             const FormField& rho,
                                                             const std::vector<VectorField>& tests,
                                                             double tol = 1e-8) {
    const auto& b = J.b;
    CurvatureContext ctx = build_volume_connection(rho);
    FormField lam = Lambda_rho(J, Jhat, ctx);
    std::vector<ResidualReport> out;
    int n = b->ncomp();
    double worst_a = 0, scale_a = 1e-12, worst_b = 0, scale_b = 1e-12;
    for (const auto& X : tests) {
        EndoField LXJ = lie_derivative(X, J);
        EndoField DX = ref_grad_vector(X);
        // ∂̄_J X = ½(∇X + J(∇X)J)
        EndoField dbar(b);
        for (size_t p = 0; p < b->nnodes(); ++p) {
            double t[16], jm[16], t1[16], t2[16];
            gather_endo(DX, p, t);
            gather_endo(J, p, jm);
            sm::mul(n, jm, t, t1);
            sm::mul(n, t1, jm, t2);
            for (int i = 0; i < n * n; ++i) t2[i] = 0.5 * (t[i] + t2[i]);
            scatter_endo(dbar, p, t2);
        }
        EndoField twice = endo_mul(J, dbar);
        double w = 0;
        for (size_t k = 0; k < LXJ.c.size(); ++k)
            for (size_t p = 0; p < LXJ.c[k].size(); ++p)
                w = std::max(w, std::abs(LXJ.c[k][p] - 2 * twice.c[k][p]));
        worst_a = std::max(worst_a, w);
        scale_a = std::max(scale_a, max_abs_comp(LXJ.c));

        double lhs = integrate(wedge(lam, contract(X, rho)));
        ScalarField tr = trace_product(Jhat, dbar);
        Vec dens(tr.v.size());
        const Vec& r = volume_density(rho);
        for (size_t p = 0; p < dens.size(); ++p) dens[p] = tr.v[p] * r[p];
        double rhs = -b->integrate_density(dens);
        worst_b = std::max(worst_b, std::abs(lhs - rhs));
        scale_b = std::max({scale_b, std::abs(lhs), std::abs(rhs)});
    }
    out.push_back(ResidualReport::make("lambda-adjoint-weak-gauge", b, worst_a, worst_a, scale_a, tol));
    out.push_back(ResidualReport::make("lambda-adjoint-weak-pairing", b, worst_b, worst_b, scale_b, tol));
    return out;
}

// --------------------------------------------------------- SE / product form

// Lift ω̂ ∈ T_ω S_{a,ρ} to λ̂ with dλ̂ = ω̂ and λ̂∧ω^{n-1} exact (torus4).
inline FormField lefschetz_lift(const FormField& what, const FormField& omega) {
    const auto& b = what.b;
    require(b->is_torus() && b->dim == 4, "lefschetz_lift: torus4 only");
    FormField lam0 = flat_codiff(flat_poisson_formwise(what));
    // fix the harmonic (constant) part so the wedge with ω is exact
    FormField wedge0 = wedge(lam0, omega);
    auto triples = index_tuples(4, 3);
    double vol = b->integrate_density(Vec(b->nnodes(), 1.0));
    double m0[4];
    for (size_t t = 0; t < triples.size(); ++t) m0[t] = b->integrate_density(wedge0.c[t]) / vol;
    // M[t][a]: zero mode of (e_a)♭ ∧ ω over triple t
    double M[16];
    for (int a = 0; a < 4; ++a) {
        FormField ea(b, 1);
        ea.c[a].assign(b->nnodes(), 1.0);
        FormField we = wedge(ea, omega);
        for (size_t t = 0; t < triples.size(); ++t)
            M[t * 4 + a] = b->integrate_density(we.c[t]) / vol;
    }
    double Mi[16], c[4];
    require(sm::inverse(4, M, Mi), "lefschetz_lift: Lefschetz solve singular");
    sm::matvec(4, Mi, m0, c);
    FormField lam = lam0;
    for (int a = 0; a < 4; ++a)
        for (size_t p = 0; p < lam.c[a].size(); ++p) lam.c[a][p] -= c[a] * 1.0;
    return lam;
}

// Exact 2-form tangent to the volume-constrained space: dβ corrected through a
// potential so that ω̂ ∧ ω^{n-1} = 0 (the correction solve uses the standard
// compatible structure, which keeps the operator symmetric positive).
inline FormField make_tangent_what(const FormField& omega, const FormField& beta,
                                   double tol = 1e-11, int maxit = 500) {
    const auto& b = omega.b;
    require(b->is_torus() && b->dim == 4, "make_tangent_what: torus4 only");
    EndoField J0 = standard_J(b);
    FormField db = d(beta);
    FormField mism = wedge(db, omega);
    ScalarField rhs(b, mism.c[0]);
    Vec w = reference_weights(b);
    ScalarOp A = [&](const ScalarField& h) {
        FormField dh = d(scalar_as_form(h));
        FormField ddc = d(compose_J(dh, J0));
        FormField t = wedge(ddc, omega);
        return ScalarField(b, t.c[0]);
    };
    ScalarOp M = [](const ScalarField& r) {
        // the constant-coefficient symbol is a multiple of |k|²
        ScalarField s = poisson_solve_reference(remove_mean_ref(r));
        return map_scalar(s, [](double x) { return 0.5 * x; });
    };
    KrylovResult res = conjugate_gradient(A, remove_mean_ref(rhs), M, w, tol, maxit);
    require(res.converged, "make_tangent_what: correction solve failed");
    FormField corr = d(compose_J(d(scalar_as_form(res.x)), J0));
    FormField out = db;
    for (size_t k = 0; k < out.c.size(); ++k)
        for (size_t p = 0; p < out.c[k].size(); ++p) out.c[k][p] -= corr.c[k][p];
    return out;
}

// Ω_{ω,J}((ω̂1,Ĵ1),(ω̂2,Ĵ2)) = ½∫tr(Ĵ1JĴ2)ω^n/n! - (2/ħ)∫λ̂1∧λ̂2∧ω^{n-1}/(n-1)!
inline double product_form_pair(const FormField& omega, const EndoField& J,
                                const FormField& what1, const EndoField& Jhat1,
                                const FormField& what2, const EndoField& Jhat2, double hbar) {
    FormField rho = volume_form_of(omega);
    double term1 = omega_rho_pair(Jhat1, Jhat2, J, rho);
    FormField l1 = lefschetz_lift(what1, omega);
    FormField l2 = lefschetz_lift(what2, omega);
    double term2 = integrate(wedge(wedge(l1, l2), omega));
    return term1 - (2.0 / hbar) * term2;
}

inline ResidualReport check_se_moment(const FormField& omega, const EndoField& J,
                                      const FormField& what, const EndoField& Jhat,
                                      const FormField& alpha, double hbar,
                                      double tol = 1e-6, double fd_step = 1e-4) {
    const auto& b = omega.b;
    FormField rho = volume_form_of(omega);
    FormField rhat = ric_hat(rho, J, Jhat, RicHatMode::finite_difference, fd_step);
    FormField integrand = rhat;
    for (size_t k = 0; k < integrand.c.size(); ++k)
        for (size_t p = 0; p < integrand.c[k].size(); ++p)
            integrand.c[k][p] = 2.0 * (rhat.c[k][p] - what.c[k][p] / hbar);
    double lhs = integrate(wedge(integrand, alpha));

    VectorField Y = vf_from_alpha(alpha, rho);
    FormField LYw = d(contract(Y, omega));
    EndoField LYJ = lie_derivative(Y, J);
    double rhs = product_form_pair(omega, J, what, Jhat, LYw, LYJ, hbar);
    double scale = std::max({std::abs(lhs), std::abs(rhs),
                             (max_abs_comp(Jhat.c) + detail::field_linf(what)) *
                                 (1.0 + detail::field_linf(d(alpha))), 1e-12});
    ResidualReport r = ResidualReport::make("se-moment", b, std::abs(lhs - rhs),
                                            std::abs(lhs - rhs), scale, tol);
    return r;
}

inline ResidualReport check_tangency_compatible(const FormField& omega, const EndoField& J,
                                                const FormField& what, const EndoField& Jhat,
                                                double tol = 1e-8) {
    double worst = detail::tangency_residual(omega, J, what, Jhat);
    double scale = std::max({detail::field_linf(what), max_abs_comp(Jhat.c), 1.0});
    return ResidualReport::make("compatible-tangency", J.b, worst, worst, scale, tol);
}

// ------------------------------------------------------------ scalar moment

inline ScalarField scalar_hat(const FormField& omega, const EndoField& J, const EndoField& Jhat,
                              double fd_step = 1e-4, bool richardson = true) {
    auto fd = [&](double h) {
        ScalarField Sp = scalar_curvature(omega, retract(J, Jhat, h));
        ScalarField Sm = scalar_curvature(omega, retract(J, Jhat, -h));
        ScalarField out(omega.b);
        for (size_t p = 0; p < out.v.size(); ++p) out.v[p] = (Sp.v[p] - Sm.v[p]) / (2 * h);
        return out;
    };
    ScalarField D1 = fd(fd_step);
    if (!richardson) return D1;
    ScalarField D2 = fd(fd_step / 2);
    for (size_t p = 0; p < D1.v.size(); ++p) D1.v[p] = (4 * D2.v[p] - D1.v[p]) / 3;
    return D1;
}

// ∫ Ŝ(J,Ĵ) H ρ = Ω_ω(Ĵ, L_{v_H} J)
inline ResidualReport check_scalar_moment(const FormField& omega, const EndoField& J,
                                          const EndoField& Jhat, const ScalarField& H,
                                          double tol = 1e-6, double fd_step = 1e-4) {
    const auto& b = omega.b;
    FormField rho = volume_form_of(omega);
    ScalarField Shat = scalar_hat(omega, J, Jhat, fd_step);
    Vec dens(Shat.v.size());
    const Vec& r = volume_density(rho);
    for (size_t p = 0; p < dens.size(); ++p) dens[p] = Shat.v[p] * H.v[p] * r[p];
    double lhs = b->integrate_density(dens);
    VectorField vH = hamiltonian_vf(H, omega);
    double rhs = omega_rho_pair(Jhat, lie_derivative(vH, J), J, rho);
    double scale = std::max({std::abs(lhs), std::abs(rhs),
                             max_abs_comp(Jhat.c) * linf(H.v), 1e-12});
    return ResidualReport::make("scalar-moment", b, std::abs(lhs - rhs), std::abs(lhs - rhs),
                                scale, tol);
}

// -------------------------------------------------------------- Weitzenböck

// ¼‖L_XJ+(L_XJ)*‖² = ½‖L_XJ‖² + ∫(f_X² + f_{JX}² - 2Ric(X,JX))ρ on Kähler scenes
inline ResidualReport check_weitzenboeck(const FormField& omega, const EndoField& J,
                                         const VectorField& X, double tol = 1e-6) {
    const auto& b = omega.b;
    FormField rho = volume_form_of(omega);
    const Vec& r = volume_density(rho);
    EndoField LXJ = lie_derivative(X, J);
    EndoField LXJs = adjoint_endo(LXJ, omega, J);
    EndoField sum = lin(1.0, LXJ, 1.0, LXJs);
    // ‖A‖² = ∫ tr(A* A) ρ
    auto l2sq = [&](const EndoField& A) {
        EndoField As = adjoint_endo(A, omega, J);
        ScalarField t = trace_product(As, A);
        Vec dens(t.v.size());
        for (size_t p = 0; p < dens.size(); ++p) dens[p] = t.v[p] * r[p];
        return b->integrate_density(dens);
    };
    double lhs = 0.25 * l2sq(sum);
    ScalarField fX = divergence(X, rho);
    ScalarField fJX = divergence(apply_endo(J, X), rho);
    FormField ric = ricci_form(rho, J);
    VectorField JX = apply_endo(J, X);
    Vec dens(b->nnodes());
    for (size_t p = 0; p < dens.size(); ++p) {
        double Rm[16], xv[4], jv[4];
        gather_form2(ric, p, Rm);
        int n = b->ncomp();
        for (int i = 0; i < n; ++i) { xv[i] = X.c[i][p]; jv[i] = JX.c[i][p]; }
        double rv[4];
        sm::matvec(n, Rm, jv, rv);
        double ricXJX = 0;
        for (int i = 0; i < n; ++i) ricXJX += xv[i] * rv[i];
        dens[p] = (fX.v[p] * fX.v[p] + fJX.v[p] * fJX.v[p] - 2 * ricXJX) * r[p];
    }
    double rhs = 0.5 * l2sq(LXJ) + b->integrate_density(dens);
    double scale = std::max({std::abs(lhs), std::abs(rhs), 0.5 * l2sq(LXJ), 1e-12});
    return ResidualReport::make("weitzenboeck", b, std::abs(lhs - rhs), std::abs(lhs - rhs),
                                scale, tol);
}

// ------------------------------------------------- fourth-order operator (§ scalar)

// 𝐋F = Ŝ(J, J L_{v_F} J), through the finite-difference scalar linearization
inline ScalarField scalar_L_operator(const EndoField& J, const FormField& omega,
                                     const ScalarField& F, double fd_step = 1e-4,
                                     bool richardson = true) {
    VectorField vF = hamiltonian_vf(F, omega);
    EndoField W = endo_mul(J, lie_derivative(vF, J));
    return scalar_hat(omega, J, W, fd_step, richardson);
}

// ∫(𝐋F)Gρ = ½∫tr((L_{v_F}J)(L_{v_G}J))ρ and the symmetry it implies
inline std::vector<ResidualReport> check_LS2(const EndoField& J, const FormField& omega,
                                             const ScalarField& F, const ScalarField& G,
                                             double tol = 1e-6, double fd_step = 1e-4) {
    const auto& b = omega.b;
    FormField rho = volume_form_of(omega);
    const Vec& r = volume_density(rho);
    ScalarField LF = scalar_L_operator(J, omega, F, fd_step);
    ScalarField LG = scalar_L_operator(J, omega, G, fd_step);
    auto pair_against = [&](const ScalarField& A, const ScalarField& Bf) {
        Vec dens(A.v.size());
        for (size_t p = 0; p < dens.size(); ++p) dens[p] = A.v[p] * Bf.v[p] * r[p];
        return b->integrate_density(dens);
    };
    double lhs = pair_against(LF, G);
    EndoField LvF = lie_derivative(hamiltonian_vf(F, omega), J);
    EndoField LvG = lie_derivative(hamiltonian_vf(G, omega), J);
    ScalarField tr = trace_product(LvF, LvG);
    Vec dens(tr.v.size());
    for (size_t p = 0; p < dens.size(); ++p) dens[p] = 0.5 * tr.v[p] * r[p];
    double rhs = b->integrate_density(dens);
    double sym = pair_against(F, LG);
    double scale = std::max({std::abs(lhs), std::abs(rhs), std::abs(sym), 1e-12});
    std::vector<ResidualReport> out;
    out.push_back(ResidualReport::make("lichnerowicz-pairing", b, std::abs(lhs - rhs),
                                       std::abs(lhs - rhs), scale, tol));
    out.push_back(ResidualReport::make("lichnerowicz-symmetry", b, std::abs(lhs - sym),
                                       std::abs(lhs - sym), scale, tol));
    return out;
}

// prop-style projection: H with Ŝ(J, Ĵ - J L_{v_H} J) = 0, via CG on 𝐋 with a
// measured round-symbol preconditioner.
struct HarmonicProjection {
    ScalarField H;
    double residual = 0;
    int iterations = 0;
};

inline HarmonicProjection harmonic_projection(const EndoField& J, const FormField& omega,
                                              const EndoField& Jhat, double fd_step = 1e-4,
                                              double tol = 1e-8, int maxit = 200) {
    const auto& b = omega.b;
    require(!b->is_torus(), "harmonic_projection: sphere scenes only");
    const auto& sp = *b->sphere;
    FormField rho = volume_form_of(omega);
    ScalarField rhs = scalar_hat(omega, J, Jhat, fd_step);
    rhs = remove_mean(rhs, rho);

    // measure the round symbol of 𝐋 once: c_l = ⟨𝐋 Y_l0, Y_l0⟩ at the round scene
    EndoField Jround = standard_J(b);
    FormField wround = standard_omega(b);
    int lcap = sp.L();
    Vec symbol(lcap + 1, 1.0);
    for (int l = 1; l <= lcap; ++l) {
        ScalarField Y(b, sp.harmonic(l, 0));
        ScalarField LY = scalar_L_operator(Jround, wround, Y, fd_step, false);
        Vec dens(LY.v.size());
        for (size_t p = 0; p < dens.size(); ++p) dens[p] = LY.v[p] * Y.v[p];
        symbol[l] = b->integrate_density(dens);
    }
    ScalarOp precond = [&](const ScalarField& f) {
        Vec a = sp.analyze(f.v, lcap);
        a[0] = 0;
        for (int l = 1; l <= lcap; ++l) {
            double s = (std::abs(symbol[l]) > 1e-6) ? symbol[l] : 1.0;
            for (int m = -l; m <= l; ++m) a[SphereGrid::coeff_index(l, m)] /= s;
        }
        return ScalarField(b, sp.synthesize(a, lcap));
    };
    // Richardson inside the operator: the O(h²) linearization error would
    // otherwise dominate the projection residual
    ScalarOp A = [&](const ScalarField& f) {
        ScalarField Lf = scalar_L_operator(J, omega, f, fd_step, true);
        return remove_mean(Lf, rho);
    };
    Vec w = reference_weights(b);
    KrylovResult res = conjugate_gradient(A, rhs, precond, w, tol, maxit);
    HarmonicProjection hp;
    hp.H = res.x;
    hp.iterations = res.iterations;
    // a-posteriori in weak form through the exact pairing route:
    // ∫ Ŝ(J, corr) Y ρ = Ω_ω(corr, L_{v_Y} J), free of finite-difference noise
    VectorField vH = hamiltonian_vf(hp.H, omega);
    EndoField corr = lin(1.0, Jhat, -1.0, endo_mul(J, lie_derivative(vH, J)));
    double worst = 0;
    double scale = std::max(1.0, detail::endo_l2(corr));
    for (int l = 1; l <= std::min(4, sp.L()); ++l)
        for (int m = -l; m <= l; ++m) {
            ScalarField Y(b, sp.harmonic(l, m));
            VectorField vY = hamiltonian_vf(Y, omega);
            double v = omega_rho_pair(corr, lie_derivative(vY, J), J, rho);
            worst = std::max(worst, std::abs(v));
        }
    hp.residual = worst / scale;
    return hp;
}

// ---------------------------------------------------------------- Matsushima

inline std::vector<ResidualReport> check_matsushima(const FormField& omega, const EndoField& J,
                                                    const ScalarField& F, const ScalarField& G,
                                                    double tol = 1e-6, double fd_step = 1e-4) {
    const auto& b = omega.b;
    FormField rho = volume_form_of(omega);
    const Vec& r = volume_density(rho);
    VectorField vF = hamiltonian_vf(F, omega);
    VectorField vG = hamiltonian_vf(G, omega);
    EndoField LF = lie_derivative(vF, J);
    EndoField LG = lie_derivative(vG, J);
    double lhs = omega_rho_pair(LF, LG, J, rho);
    ScalarField S = scalar_curvature(omega, J);
    ScalarField br = poisson_bracket(F, G, omega);
    Vec dens(S.v.size());
    for (size_t p = 0; p < dens.size(); ++p) dens[p] = S.v[p] * br.v[p] * r[p];
    double rhs = b->integrate_density(dens);
    double scale = std::max({std::abs(lhs), std::abs(rhs), detail::endo_l2(LF) * detail::endo_l2(LG), 1e-12});
    std::vector<ResidualReport> out;
    out.push_back(ResidualReport::make("matsushima-pairing", b, std::abs(lhs - rhs),
                                       std::abs(lhs - rhs), scale, tol));

    ScalarField Shat = scalar_hat(omega, J, LF, fd_step);
    ScalarField brSF = poisson_bracket(S, F, omega);
    double worst = 0;
    double sc = std::max({linf(Shat.v), linf(brSF.v), linf(S.v) * linf(F.v), 1e-12});
    for (size_t p = 0; p < Shat.v.size(); ++p)
        worst = std::max(worst, std::abs(Shat.v[p] - brSF.v[p]));
    out.push_back(ResidualReport::make("matsushima-transport", b, worst, worst, sc, tol));
    return out;
}

} // namespace kml
