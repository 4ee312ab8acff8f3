#pragma once

// Fano-sphere objects: the Kähler–Ricci potential Θ and normalized volume ρ_J,
// the Donaldson symplectic form and metric, its moment map, and the energy
// functionals with their gradients.

#include "decomposition.hpp"

namespace kml {

struct FanoScene : ThetaScene {
    double ric_residual = 0;   // ‖Ric_{ρ_J,J} - ω‖∞ from an independent recomputation
    double mass_residual = 0;  // |∫ρ_J - 1|
};

// Solve ½ d(d log Θ ∘ J) = ω - Ric_{ω,J}, normalize ∫Θω = 1.
inline FanoScene solve_theta(const EndoField& J, const FormField& omega,
                             double tol = 1e-11, int maxit = 500) {
    const auto& b = omega.b;
    require(!b->is_torus(), "solve_theta: sphere scenes only");
    FanoScene sc;
    sc.b = b;
    sc.omega = omega;
    sc.J = J;
    sc.V = integrate(omega);

    FormField ric = ricci_form(omega, J);
    // consistency: the right side must integrate to zero (Fano class)
    double classgap = integrate(omega) - integrate(ric);
    require(std::abs(classgap) < 1e-8 * std::max(1.0, sc.V),
            "solve_theta: right side is not exact (curvature inconsistency)");
    ScalarField s(b);
    for (size_t p = 0; p < s.v.size(); ++p) s.v[p] = 2.0 * (omega.c[0][p] - ric.c[0][p]);
    KrylovResult res = solve_ddc(s, J, tol, maxit);
    require(res.converged, "solve_theta: potential solve failed");

    Vec eu(b->nnodes());
    for (size_t p = 0; p < eu.size(); ++p) eu[p] = std::exp(res.x.v[p]);
    Vec dens(eu.size());
    for (size_t p = 0; p < dens.size(); ++p) dens[p] = eu[p] * omega.c[0][p];
    double mass = b->integrate_density(dens);
    sc.theta = ScalarField(b);
    for (size_t p = 0; p < eu.size(); ++p) sc.theta.v[p] = eu[p] / mass;
    sc.rhoJ = FormField(b, 2);
    for (size_t p = 0; p < eu.size(); ++p) sc.rhoJ.c[0][p] = sc.theta.v[p] * omega.c[0][p];

    FormField ric2 = ricci_form(sc.rhoJ, J);  // independent route for the invariant
    double worst = 0;
    for (size_t p = 0; p < ric2.c[0].size(); ++p)
        worst = std::max(worst, std::abs(ric2.c[0][p] - omega.c[0][p]));
    sc.ric_residual = worst;
    sc.mass_residual = std::abs(integrate(sc.rhoJ) - 1.0);
    return sc;
}

// --------------------------------------------------------- Donaldson form

struct DonaldsonPair {
    double value = 0;
    SplitResult s1, s2;
};

inline DonaldsonPair donaldson_form_full(const EndoField& J1, const EndoField& J2,
                                         const FanoScene& sc) {
    CurvatureContext ctx = build_volume_connection(sc.rhoJ);
    DonaldsonPair out;
    out.s1 = split_one_form(Lambda_rho(sc.J, J1, ctx), sc.J, sc.rhoJ);
    out.s2 = split_one_form(Lambda_rho(sc.J, J2, ctx), sc.J, sc.rhoJ);
    ScalarField tr = trace_product(J1, endo_mul(sc.J, J2));
    const Vec& r = volume_density(sc.rhoJ);
    Vec dens(tr.v.size());
    for (size_t p = 0; p < dens.size(); ++p)
        dens[p] = (0.5 * tr.v[p] - out.s1.f.v[p] * out.s2.g.v[p] + out.s1.g.v[p] * out.s2.f.v[p]) * r[p];
    out.value = sc.b->integrate_density(dens);
    return out;
}

inline double donaldson_form(const EndoField& J1, const EndoField& J2, const FanoScene& sc) {
    return donaldson_form_full(J1, J2, sc).value;
}

// ⟨Ĵ1, Ĵ2⟩ = Ω^D(Ĵ1, -J Ĵ2)
inline double donaldson_metric(const EndoField& J1, const EndoField& J2, const FanoScene& sc) {
    EndoField mJ2 = scaled(-1.0, endo_mul(sc.J, J2));
    return donaldson_form(J1, mJ2, sc);
}

// ⟨μ(J), H⟩ = 2∫H(ρ/V - ρ_J)
inline double moment_mu(const FanoScene& sc, const ScalarField& H) {
    const Vec& r = volume_density(sc.rhoJ);
    Vec dens(H.v.size());
    for (size_t p = 0; p < dens.size(); ++p)
        dens[p] = 2.0 * H.v[p] * (sc.omega.c[0][p] / sc.V - r[p]);
    return sc.b->integrate_density(dens);
}

// Three-route agreement: Ω^D(Ĵ, L_{v_H}J) = -2∫Hf ρ_J = d/dt ⟨μ(J_t), H⟩.
inline ResidualReport check_don_moment(const FanoScene& sc, const EndoField& Jhat,
                                       const ScalarField& H, double tol = 1e-6,
                                       double fd_step = 1e-4) {
    VectorField vH = hamiltonian_vf(H, sc.omega);
    EndoField LH = lie_derivative(vH, sc.J);
    DonaldsonPair full = donaldson_form_full(Jhat, LH, sc);
    double r1 = full.value;

    const Vec& r = volume_density(sc.rhoJ);
    Vec dens(H.v.size());
    for (size_t p = 0; p < dens.size(); ++p) dens[p] = -2.0 * H.v[p] * full.s1.f.v[p] * r[p];
    double r2 = sc.b->integrate_density(dens);

    auto mu_at = [&](double t) {
        EndoField Jt = retract(sc.J, Jhat, t);
        FanoScene st = solve_theta(Jt, sc.omega);
        return moment_mu(st, H);
    };
    double r3 = (mu_at(fd_step) - mu_at(-fd_step)) / (2 * fd_step);
    double r3b = (mu_at(fd_step / 2) - mu_at(-fd_step / 2)) / fd_step;
    r3 = (4 * r3b - r3) / 3;

    double worst = std::max({std::abs(r1 - r2), std::abs(r1 - r3), std::abs(r2 - r3)});
    double scale = std::max({std::abs(r1), std::abs(r2), std::abs(r3),
                             max_abs_comp(Jhat.c) * linf(H.v), 1e-12});
    return ResidualReport::make("donaldson-moment", sc.b, worst, worst, scale, tol);
}

// Θ̂ = fΘ along any tangent direction.
inline ResidualReport check_theta_hat(const FanoScene& sc, const EndoField& Jhat,
                                      double tol = 1e-6, double fd_step = 1e-4) {
    auto theta_at = [&](double t) {
        return solve_theta(retract(sc.J, Jhat, t), sc.omega).theta;
    };
    ScalarField tp = theta_at(fd_step), tm = theta_at(-fd_step);
    ScalarField tp2 = theta_at(fd_step / 2), tm2 = theta_at(-fd_step / 2);
    CurvatureContext ctx = build_volume_connection(sc.rhoJ);
    SplitResult split = split_one_form(Lambda_rho(sc.J, Jhat, ctx), sc.J, sc.rhoJ);
    double worst = 0, scale = std::max(linf(sc.theta.v) * max_abs_comp(Jhat.c), 1e-12);
    for (size_t p = 0; p < sc.theta.v.size(); ++p) {
        double d1 = (tp.v[p] - tm.v[p]) / (2 * fd_step);
        double d2 = (tp2.v[p] - tm2.v[p]) / fd_step;
        double fd = (4 * d2 - d1) / 3;
        worst = std::max(worst, std::abs(fd - split.f.v[p] * sc.theta.v[p]));
    }
    return ResidualReport::make("theta-linearization", sc.b, worst, worst, scale, tol);
}

// ------------------------------------------------------- energy functionals

inline double energy_E(const FanoScene& sc) {
    Vec dens(sc.theta.v.size());
    for (size_t p = 0; p < dens.size(); ++p) {
        double d = 1.0 / sc.V - sc.theta.v[p];
        dens[p] = 0.5 * d * d * sc.omega.c[0][p];
    }
    return sc.b->integrate_density(dens);
}

inline EndoField grad_E(const FanoScene& sc) {
    VectorField v = hamiltonian_vf(sc.theta, sc.omega);
    EndoField LvJ = lie_derivative(v, sc.J);
    return scaled(-0.5, endo_mul(sc.J, LvJ));
}

inline double he_H_omega(const FanoScene& sc) {
    Vec dens(sc.theta.v.size());
    for (size_t p = 0; p < dens.size(); ++p) {
        require(sc.theta.v[p] > 0, "he_H_omega: theta not positive");
        dens[p] = std::log(sc.V * sc.theta.v[p]) * sc.theta.v[p] * sc.omega.c[0][p];
    }
    return sc.b->integrate_density(dens);
}

inline EndoField grad_H(const FanoScene& sc) {
    ScalarField logT = map_scalar(sc.theta, [](double x) { return std::log(x); });
    VectorField v = hamiltonian_vf(logT, sc.omega);
    EndoField LvJ = lie_derivative(v, sc.J);
    return scaled(-0.5, endo_mul(sc.J, LvJ));
}

// directional-derivative test dF(Ĵ) = ⟨Ĵ, grad⟩ through the Donaldson metric
inline ResidualReport check_gradient(const FanoScene& sc, const EndoField& Jhat,
                                     bool he_functional, double tol = 1e-5,
                                     double fd_step = 1e-4) {
    auto value_at = [&](double t) {
        FanoScene st = solve_theta(retract(sc.J, Jhat, t), sc.omega);
        return he_functional ? he_H_omega(st) : energy_E(st);
    };
    double d1 = (value_at(fd_step) - value_at(-fd_step)) / (2 * fd_step);
    double d2 = (value_at(fd_step / 2) - value_at(-fd_step / 2)) / fd_step;
    double fd = (4 * d2 - d1) / 3;
    EndoField g = he_functional ? grad_H(sc) : grad_E(sc);
    double pairing = donaldson_metric(Jhat, g, sc);
    double scale = std::max({std::abs(fd), std::abs(pairing), 1e-10});
    return ResidualReport::make(he_functional ? "he-gradient" : "energy-gradient", sc.b,
                                std::abs(fd - pairing), std::abs(fd - pairing), scale, tol);
}

// -------------------------------------------------- closedness (fd Stokes)

// Cyclic finite-difference exterior derivative of Ω^D over a three-parameter
// family of compatible structures.
inline double donaldson_closedness(const std::function<EndoField(double, double, double)>& family,
                                   const FormField& omega, double step) {
    auto tangent = [&](double r, double s, double t, int slot) {
        double dr = (slot == 0) ? step : 0, ds = (slot == 1) ? step : 0, dt = (slot == 2) ? step : 0;
        EndoField Jp = family(r + dr, s + ds, t + dt);
        EndoField Jm = family(r - dr, s - ds, t - dt);
        return scaled(1.0 / (2 * step), lin(1.0, Jp, -1.0, Jm));
    };
    auto W = [&](double r, double s, double t, int a, int bslot) {
        EndoField J = family(r, s, t);
        FanoScene sc = solve_theta(J, omega);
        return donaldson_form(tangent(r, s, t, a), tangent(r, s, t, bslot), sc);
    };
    auto dW = [&](int a, int bslot, int cslot) {
        // ∂_a [W(∂_b, ∂_c)] by central differences at the origin
        double pr[3] = {0, 0, 0}, mr[3] = {0, 0, 0};
        pr[a] = step;
        mr[a] = -step;
        return (W(pr[0], pr[1], pr[2], bslot, cslot) - W(mr[0], mr[1], mr[2], bslot, cslot)) / (2 * step);
    };
    return dW(0, 1, 2) - dW(1, 0, 2) + dW(2, 0, 1);
}

} // namespace kml
