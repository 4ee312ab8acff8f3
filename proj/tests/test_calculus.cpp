// Exterior calculus and pointwise algebra across both backends.

#include <catch2/catch_amalgamated.hpp>
#include <kml/scenes.hpp>

using namespace kml;

namespace {
double form_linf(const FormField& f) { return max_abs_comp(f.c); }
}

TEST_CASE("d, wedge, contract obey the graded identities (torus2)") {
    auto b = Backend::make(BackendKind::torus2, 16);
    Rng rng(11);

    ScalarField H = random_scalar(b, 4, rng);
    FormField dH = d(scalar_as_form(H));
    REQUIRE(form_linf(d(dH)) < 1e-12 * std::max(1.0, form_linf(dH)));

    // H = sin x -> cos x dx
    const auto& g = *b->torus;
    ScalarField s(b);
    int idx[4];
    for (size_t p = 0; p < s.v.size(); ++p) {
        g.node_indices(p, idx);
        s.v[p] = std::sin(g.coord(idx[0]));
    }
    FormField ds = d(scalar_as_form(s));
    double err = 0;
    for (size_t p = 0; p < ds.c[0].size(); ++p) {
        g.node_indices(p, idx);
        err = std::max(err, std::abs(ds.c[0][p] - std::cos(g.coord(idx[0]))));
        err = std::max(err, std::abs(ds.c[1][p]));
    }
    REQUIRE(err < 1e-12);

    // a ∧ a = 0 and graded antisymmetry
    FormField a = d(scalar_as_form(random_scalar(b, 3, rng)));
    FormField bb = d(scalar_as_form(random_scalar(b, 3, rng)));
    REQUIRE(form_linf(wedge(a, a)) < 1e-13);
    FormField ab = wedge(a, bb), ba = wedge(bb, a);
    double anti = 0;
    for (size_t p = 0; p < ab.c[0].size(); ++p) anti = std::max(anti, std::abs(ab.c[0][p] + ba.c[0][p]));
    REQUIRE(anti < 1e-13);

    // ι(∂x)(dx∧dy) = dy
    FormField w = standard_omega(b);
    VectorField ex(b);
    ex.c[0].assign(b->nnodes(), 1.0);
    FormField iw = contract(ex, w);
    REQUIRE(linf(iw.c[0]) < 1e-14);
    for (size_t p = 0; p < iw.c[1].size(); ++p) REQUIRE(iw.c[1][p] == Catch::Approx(1.0));

    // ι(v)ι(v)σ = 0 on torus4
    auto b4 = Backend::make(BackendKind::torus4, 6);
    Rng rng4(5);
    VectorField v4 = random_vector(b4, 2, 1.0, rng4);
    FormField w4 = wedge(d(scalar_as_form(random_scalar(b4, 2, rng4))),
                         d(scalar_as_form(random_scalar(b4, 2, rng4))));
    FormField one = contract(v4, w4);
    REQUIRE(form_linf(contract(v4, one)) < 1e-12);

    // graded antisymmetry of 1-forms on torus4
    FormField a4 = d(scalar_as_form(random_scalar(b4, 2, rng4)));
    FormField b4f = d(scalar_as_form(random_scalar(b4, 2, rng4)));
    FormField s1 = wedge(a4, b4f), s2 = wedge(b4f, a4);
    double r = 0;
    for (size_t k = 0; k < s1.c.size(); ++k)
        for (size_t p = 0; p < s1.c[k].size(); ++p) r = std::max(r, std::abs(s1.c[k][p] + s2.c[k][p]));
    REQUIRE(r < 1e-12);

    REQUIRE_THROWS_AS(wedge(w, w), error);  // degree overflow on T^2
}

TEST_CASE("Stokes and Cartan (both backends)") {
    for (auto kind : {BackendKind::torus2, BackendKind::sphere}) {
        auto b = Backend::make(kind, 16);
        Rng rng(23);
        ScalarField F = random_scalar(b, 4, rng);
        ScalarField G = random_scalar(b, 4, rng);
        FormField one = wedge(d(scalar_as_form(F)), scalar_as_form(G));
        // ∫ d(anything) = 0
        REQUIRE(std::abs(integrate(d(one))) < 1e-10 * std::max(1.0, form_linf(one)));

        // L_v ω = d ι(v) ω for closed ω
        FormField w = standard_omega(b);
        VectorField v = random_vector(b, 3, 1.0, rng);
        FormField lhs = lie_derivative(v, w);
        FormField rhs = d(contract(v, w));
        double err = 0;
        for (size_t k = 0; k < lhs.c.size(); ++k)
            for (size_t p = 0; p < lhs.c[k].size(); ++p)
                err = std::max(err, std::abs(lhs.c[k][p] - rhs.c[k][p]));
        REQUIRE(err < 1e-9);
    }
}

TEST_CASE("hamiltonian fields and Poisson brackets") {
    auto b = Backend::make(BackendKind::torus2, 16);
    FormField w = standard_omega(b);
    const auto& g = *b->torus;

    // H = sin x: ι(v)ω = dH must hold to 1e-10
    ScalarField H(b);
    int idx[4];
    for (size_t p = 0; p < H.v.size(); ++p) {
        g.node_indices(p, idx);
        H.v[p] = std::sin(g.coord(idx[0]));
    }
    VectorField vH = hamiltonian_vf(H, w);
    FormField resid = contract(vH, w);
    FormField dH = d(scalar_as_form(H));
    double err = 0;
    for (size_t k = 0; k < resid.c.size(); ++k)
        for (size_t p = 0; p < resid.c[k].size(); ++p)
            err = std::max(err, std::abs(resid.c[k][p] - dH.c[k][p]));
    REQUIRE(err < 1e-10);
    // v = -cos x ∂_y for ω = dx∧dy with ι(v)ω = dH
    for (size_t p = 0; p < H.v.size(); ++p) {
        g.node_indices(p, idx);
        REQUIRE(vH.c[0][p] == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(vH.c[1][p] == Catch::Approx(-std::cos(g.coord(idx[0]))).margin(1e-12));
    }

    // {H,H} = 0; antisymmetry; Jacobi
    Rng rng(3);
    ScalarField F = random_scalar(b, 3, rng), G = random_scalar(b, 3, rng), K = random_scalar(b, 3, rng);
    REQUIRE(linf(poisson_bracket(F, F, w).v) < 1e-11);
    ScalarField fg = poisson_bracket(F, G, w), gf = poisson_bracket(G, F, w);
    double anti = 0;
    for (size_t p = 0; p < fg.v.size(); ++p) anti = std::max(anti, std::abs(fg.v[p] + gf.v[p]));
    REQUIRE(anti < 1e-11);
    ScalarField j1 = poisson_bracket(poisson_bracket(F, G, w), K, w);
    ScalarField j2 = poisson_bracket(poisson_bracket(G, K, w), F, w);
    ScalarField j3 = poisson_bracket(poisson_bracket(K, F, w), G, w);
    double jac = 0;
    for (size_t p = 0; p < j1.v.size(); ++p)
        jac = std::max(jac, std::abs(j1.v[p] + j2.v[p] + j3.v[p]));
    REQUIRE(jac < 1e-9);
}

TEST_CASE("sphere bracket of degree-1 harmonics closes the rotation algebra") {
    auto b = Backend::make(BackendKind::sphere, 16);
    const auto& sp = *b->sphere;
    FormField w = standard_omega(b);
    ScalarField Yz(b, sp.harmonic(1, 0));   // ∝ z
    ScalarField Yx(b, sp.harmonic(1, 1));   // ∝ x
    ScalarField Yy(b, sp.harmonic(1, -1));  // ∝ y
    ScalarField br = poisson_bracket(Yz, Yx, w);
    // {Y_z, Y_x} = sqrt(3/4π) Y_y under ι(v_H)ω = dH and the round area form
    double c = std::sqrt(3.0 / (4.0 * kPi));
    double err = 0;
    for (size_t p = 0; p < br.v.size(); ++p) err = std::max(err, std::abs(br.v[p] - c * Yy.v[p]));
    REQUIRE(err < 1e-10);
}

TEST_CASE("vf_from_alpha produces the exact divergence-free field") {
    auto b = Backend::make(BackendKind::torus2, 16);
    FormField rho = reference_volume(b);
    const auto& g = *b->torus;
    // α = sin x (0-form on T²): ι(Y)ρ = d sin x = cos x dx
    FormField alpha(b, 0);
    int idx[4];
    for (size_t p = 0; p < alpha.c[0].size(); ++p) {
        g.node_indices(p, idx);
        alpha.c[0][p] = std::sin(g.coord(idx[0]));
    }
    VectorField Y = vf_from_alpha(alpha, rho);
    FormField check = contract(Y, rho);
    FormField da = d(alpha);
    double err = 0;
    for (size_t k = 0; k < check.c.size(); ++k)
        for (size_t p = 0; p < check.c[k].size(); ++p)
            err = std::max(err, std::abs(check.c[k][p] - da.c[k][p]));
    REQUIRE(err < 1e-10);
    // d(ι(Y)ρ) = 0 always
    REQUIRE(form_linf(d(check)) < 1e-11);

    // constant α gives the zero field
    FormField c0(b, 0);
    c0.c[0].assign(b->nnodes(), 2.5);
    VectorField Y0 = vf_from_alpha(c0, rho);
    REQUIRE(max_abs_comp(Y0.c) < 1e-12);
}

TEST_CASE("adjoint involution and metric symmetry") {
    for (auto kind : {BackendKind::torus2, BackendKind::sphere}) {
        auto b = Backend::make(kind, 16);
        Rng rng(17);
        FormField w = standard_omega(b);
        EndoField J0 = standard_J(b);
        EndoField J = random_compatible_J(w, J0, 3, 0.2, rng);
        REQUIRE(acs_residual(J) < 1e-11);
        REQUIRE(compatibility_residual(w, J) < 1e-10);
        REQUIRE(tameness_margin(w, J) > 0);

        // J* = -J for compatible J
        EndoField Jad = adjoint_endo(J, w, J);
        double err = 0;
        for (size_t k = 0; k < Jad.c.size(); ++k)
            for (size_t p = 0; p < Jad.c[k].size(); ++p)
                err = std::max(err, std::abs(Jad.c[k][p] + J.c[k][p]));
        REQUIRE(err < 1e-10);

        // (e*)* = e and the defining pairing ⟨e u, v⟩ = ⟨u, e* v⟩
        EndoField e = random_endo(b, 3, 1.0, rng);
        EndoField es = adjoint_endo(e, w, J);
        EndoField ess = adjoint_endo(es, w, J);
        err = 0;
        for (size_t k = 0; k < e.c.size(); ++k)
            for (size_t p = 0; p < e.c[k].size(); ++p)
                err = std::max(err, std::abs(ess.c[k][p] - e.c[k][p]));
        REQUIRE(err < 1e-10);

        VectorField u = random_vector(b, 3, 1.0, rng), v = random_vector(b, 3, 1.0, rng);
        int n = b->ncomp();
        double perr = 0;
        for (size_t p = 0; p < b->nnodes(); ++p) {
            double G[16], em[16], esm[16], uu[4], vv[4], eu[4], esv[4], gu[4], gv[4];
            gather_metric(w, J, p, G);
            gather_endo(e, p, em);
            gather_endo(es, p, esm);
            for (int i = 0; i < n; ++i) { uu[i] = u.c[i][p]; vv[i] = v.c[i][p]; }
            sm::matvec(n, em, uu, eu);
            sm::matvec(n, esm, vv, esv);
            sm::matvec(n, G, vv, gv);
            sm::matvec(n, G, esv, gu);
            double lhs = 0, rhs = 0;
            for (int i = 0; i < n; ++i) { lhs += eu[i] * gv[i]; rhs += uu[i] * gu[i]; }
            perr = std::max(perr, std::abs(lhs - rhs));
        }
        REQUIRE(perr < 1e-10);

        // identity endo is self-adjoint
        EndoField id = tangent_identity(b);
        EndoField ids = adjoint_endo(id, w, J);
        err = 0;
        for (size_t k = 0; k < id.c.size(); ++k)
            for (size_t p = 0; p < id.c[k].size(); ++p)
                err = std::max(err, std::abs(ids.c[k][p] - id.c[k][p]));
        REQUIRE(err < 1e-10);
    }
}

TEST_CASE("omega_rho_pair: antisymmetry, oracle value, translation invariance") {
    auto b = Backend::make(BackendKind::torus2, 16);
    FormField rho = reference_volume(b);
    TorusOracleScene sc;
    sc.J1hat[0] = 1; sc.J1hat[3] = -1;            // diag(1,-1)
    sc.J2hat[1] = 1; sc.J2hat[2] = 1;             // antidiag(1,1)
    sc.validate();
    REQUIRE(sc.pairing_omega_rho() == Catch::Approx(-kTau * kTau));

    EndoField J = constant_endo(b, sc.J);
    EndoField J1 = constant_endo(b, sc.J1hat);
    EndoField J2 = constant_endo(b, sc.J2hat);
    REQUIRE(omega_rho_pair(J1, J2, J, rho) == Catch::Approx(-kTau * kTau).epsilon(1e-12));
    REQUIRE(omega_rho_pair(J2, J1, J, rho) == Catch::Approx(kTau * kTau).epsilon(1e-12));
    REQUIRE(std::abs(omega_rho_pair(J1, J1, J, rho)) < 1e-12);

    // scaling ρ scales the pairing
    FormField rho2 = scaled(2.0, rho);
    REQUIRE(omega_rho_pair(J1, J2, J, rho2) == Catch::Approx(-2 * kTau * kTau).epsilon(1e-12));

    // pairing invariant under pullback of both perturbations by a translation
    Rng rng(9);
    EndoField Jc = random_conjugated_J(standard_J(b), 3, 0.1, rng);
    EndoField P1 = random_perturbation(Jc, 3, 1.0, rng, false);
    EndoField P2 = random_perturbation(Jc, 3, 1.0, rng, false);
    double base = omega_rho_pair(P1, P2, Jc, rho);
    AffineMap tr;
    tr.dim = 2;
    tr.b[0] = 1.0;
    tr.b[1] = -0.5;
    double moved = omega_rho_pair(pullback(P1, tr), pullback(P2, tr), pullback(Jc, tr), rho);
    REQUIRE(moved == Catch::Approx(base).epsilon(1e-11));
}

TEST_CASE("lie derivative of J along Hamiltonian fields is g-symmetric") {
    auto b = Backend::make(BackendKind::sphere, 16);
    Rng rng(31);
    FormField w = standard_omega(b);
    EndoField J = random_compatible_J(w, standard_J(b), 3, 0.15, rng);
    ScalarField F = random_scalar(b, 3, rng);
    VectorField vF = hamiltonian_vf(F, w);
    EndoField LJ = lie_derivative(vF, J);
    EndoField LJs = adjoint_endo(LJ, w, J);
    double err = 0, scale = std::max(1.0, max_abs_comp(LJ.c));
    for (size_t k = 0; k < LJ.c.size(); ++k)
        for (size_t p = 0; p < LJ.c[k].size(); ++p)
            err = std::max(err, std::abs(LJ.c[k][p] - LJs.c[k][p]));
    REQUIRE(err / scale < 1e-8);

    // constant v, constant J on the torus: L_v J = 0
    auto bt = Backend::make(BackendKind::torus2, 16);
    VectorField cv(bt);
    cv.c[0].assign(bt->nnodes(), 1.0);
    cv.c[1].assign(bt->nnodes(), -2.0);
    EndoField LJ0 = lie_derivative(cv, standard_J(bt));
    REQUIRE(max_abs_comp(LJ0.c) < 1e-13);
}
