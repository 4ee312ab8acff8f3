#pragma once

// Almost complex structures, their perturbations, and the pointwise
// retraction J_t = (J + tĴ)(-(J + tĴ)²)^{-1/2} used by every path
// linearization. For anticommuting Ĵ the retraction keeps J_t² = -1 exactly;
// if Ĵ is additionally g-symmetric and J is ω-compatible, J_t stays
// ω-compatible for all t.

#include "calculus.hpp"

namespace kml {

struct ACStruct {
    EndoField J;
    // optional compatible/tame reference form (empty c means unset)
    FormField omega;
    bool has_omega = false;
};

struct Perturbation {
    EndoField Jhat;
    bool symmetric = false;
};

// tangential identity: I on the torus, the projector P = I - nn^T on the sphere
inline void gather_tangent_identity(const BackendPtr& b, size_t p, double* m) {
    int n = b->ncomp();
    sm::ident(n, m);
    if (!b->is_torus()) {
        const auto& sp = *b->sphere;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) m[i * 3 + j] -= sp.nx(p, i) * sp.nx(p, j);
    }
}

inline EndoField tangent_identity(const BackendPtr& b) {
    EndoField out(b);
    int n = b->ncomp();
    for (size_t p = 0; p < b->nnodes(); ++p) {
        double m[16];
        gather_tangent_identity(b, p, m);
        for (int i = 0; i < n * n; ++i) out.c[i][p] = m[i];
    }
    return out;
}

// ‖J² + Id‖∞ over nodes (Id acting on the tangent bundle)
inline double acs_residual(const EndoField& J) {
    const auto& b = J.b;
    int n = J.n();
    double worst = 0;
    for (size_t p = 0; p < b->nnodes(); ++p) {
        double m[16], m2[16], id[16];
        gather_endo(J, p, m);
        sm::mul(n, m, m, m2);
        gather_tangent_identity(b, p, id);
        for (int i = 0; i < n * n; ++i) worst = std::max(worst, std::abs(m2[i] + id[i]));
    }
    return worst;
}

inline double anticommute_residual(const EndoField& J, const EndoField& Jhat) {
    int n = J.n();
    double worst = 0;
    for (size_t p = 0; p < J.b->nnodes(); ++p) {
        double a[16], h[16], t1[16], t2[16];
        gather_endo(J, p, a);
        gather_endo(Jhat, p, h);
        sm::mul(n, h, a, t1);
        sm::mul(n, a, h, t2);
        for (int i = 0; i < n * n; ++i) worst = std::max(worst, std::abs(t1[i] + t2[i]));
    }
    return worst;
}

// minimum over nodes of the smallest eigenvalue of ½(ωJ + (ωJ)^T); > 0 ⟺ tame
inline double tameness_margin(const FormField& omega, const EndoField& J) {
    const auto& b = J.b;
    double worst = 1e300;
    for (size_t p = 0; p < b->nnodes(); ++p) {
        double G[16];
        gather_metric(omega, J, p, G);
        if (b->is_torus()) {
            worst = std::min(worst, sm::min_eig_sym(b->dim, G));
        } else {
            const auto& sp = *b->sphere;
            double G2[4] = {0, 0, 0, 0};
            for (int a = 0; a < 2; ++a)
                for (int c = 0; c < 2; ++c)
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j) {
                            double fa = (a == 0) ? sp.eth(p, i) : sp.eph(p, i);
                            double fc = (c == 0) ? sp.eth(p, j) : sp.eph(p, j);
                            G2[a * 2 + c] += fa * G[i * 3 + j] * fc;
                        }
            worst = std::min(worst, sm::min_eig_sym(2, G2));
        }
    }
    return worst;
}

// ‖ω(J·,J·) - ω(·,·)‖∞
inline double compatibility_residual(const FormField& omega, const EndoField& J) {
    int n = J.n();
    double worst = 0;
    for (size_t p = 0; p < J.b->nnodes(); ++p) {
        double Om[16], Jm[16], Jt[16], t[16], r[16];
        gather_form2(omega, p, Om);
        gather_endo(J, p, Jm);
        sm::transpose(n, Jm, Jt);
        sm::mul(n, Jt, Om, t);
        sm::mul(n, t, Jm, r);
        for (int i = 0; i < n * n; ++i) worst = std::max(worst, std::abs(r[i] - Om[i]));
    }
    return worst;
}

// (J + tĴ)(-(J + tĴ)²)^{-1/2}, pointwise. On the sphere the normal direction
// is padded with the identity before the inverse square root.
inline EndoField retract(const EndoField& J, const EndoField& Jhat, double t) {
    const auto& b = J.b;
    int n = J.n();
    EndoField out(b);
    for (size_t p = 0; p < b->nnodes(); ++p) {
        double K[16], K2[16], Am[16], Q[16], R[16], id[16];
        gather_endo(J, p, K);
        gather_endo(Jhat, p, Am);
        for (int i = 0; i < n * n; ++i) K[i] += t * Am[i];
        sm::mul(n, K, K, K2);
        gather_tangent_identity(b, p, id);
        // -K² has spectrum near one on the tangent bundle (but is not a
        // symmetric matrix in coordinates); pad the normal with +1
        for (int i = 0; i < n * n; ++i) Am[i] = -K2[i];
        if (!b->is_torus()) {
            const auto& sp = *b->sphere;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) Am[i * 3 + j] += sp.nx(p, i) * sp.nx(p, j);
        }
        sm::principal_inv_sqrt(n, Am, Q);
        sm::mul(n, K, Q, R);
        scatter_endo(out, p, R);
    }
    return out;
}

// project an arbitrary endomorphism field onto {A : AJ + JA = 0}
inline EndoField anticommuting_part(const EndoField& E, const EndoField& J) {
    EndoField JEJ = endo_mul(J, endo_mul(E, J));
    return lin(0.5, E, 0.5, JEJ);
}

inline EndoField symmetric_part(const EndoField& E, const FormField& omega, const EndoField& J) {
    EndoField Es = adjoint_endo(E, omega, J);
    return lin(0.5, E, 0.5, Es);
}

// Compatible structure from ω and an SPD bilinear candidate G0 (pointwise
// polar construction). Output satisfies J² = -1 and ω(J·,J·) = ω exactly.
inline EndoField compatible_from_metric(const FormField& omega, const EndoField& G0) {
    const auto& b = omega.b;
    require(b->is_torus(), "compatible_from_metric: torus backend only");
    int n = b->ncomp();
    EndoField out(b);
    for (size_t p = 0; p < b->nnodes(); ++p) {
        double G[16], Om[16], Gh[16], Ghi[16], At[16], A2[16], Pm[16], Jt[16], t1[16], t2[16];
        gather_endo(G0, p, G);
        gather_form2(omega, p, Om);
        sm::sym_func(n, G, Gh, [](double x) {
            require(x > 0, "compatible_from_metric: candidate not positive");
            return std::sqrt(x);
        });
        sm::sym_func(n, G, Ghi, [](double x) { return 1.0 / std::sqrt(x); });
        // Ã = G^{-1/2} Ω G^{-1/2} is antisymmetric
        sm::mul(n, Ghi, Om, t1);
        sm::mul(n, t1, Ghi, At);
        sm::mul(n, At, At, A2);
        for (int i = 0; i < n * n; ++i) A2[i] = -A2[i];
        sm::inv_sqrt_spd(n, A2, Pm);
        sm::mul(n, At, Pm, Jt);  // orthogonal, J̃² = -1
        // J = -G^{-1/2} J̃ G^{1/2} is the tame-compatible sign
        sm::mul(n, Ghi, Jt, t1);
        sm::mul(n, t1, Gh, t2);
        for (int i = 0; i < n * n; ++i) t2[i] = -t2[i];
        scatter_endo(out, p, t2);
    }
    return out;
}

} // namespace kml
