#pragma once

// Seeded scene builders: standard structures on each backend, band-limited
// random fields with decaying spectra, compatible/tame almost complex
// structures, perturbations, and the constant-coefficient torus oracle.
// Generator bands stay well below the grid band so that products of scene
// fields remain exactly representable.

#include "curvature.hpp"

#include <random>

namespace kml {

// Deterministic RNG wrapper (fixed bit-to-double mapping, no library
// distribution objects).
struct Rng {
    std::mt19937_64 eng;
    explicit Rng(std::uint64_t seed) : eng(seed) {}
    double uniform() { return (eng() >> 11) * 0x1.0p-53; }     // [0,1)
    double sym() { return 2.0 * uniform() - 1.0; }             // [-1,1)
    double normal() {
        double u1 = std::max(uniform(), 1e-300), u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTau * u2);
    }
};

// ------------------------------------------------------ standard structures

inline FormField reference_volume(const BackendPtr& b) {
    FormField rho(b, b->dim);
    rho.c[0].assign(b->nnodes(), 1.0);
    return rho;
}

// torus: dx0∧dx1 (+ dx2∧dx3); sphere: the round area form
inline FormField standard_omega(const BackendPtr& b) {
    FormField w(b, 2);
    if (!b->is_torus()) {
        w.c[0].assign(b->nnodes(), 1.0);
        return w;
    }
    auto pairs = index_tuples(b->dim, 2);
    for (size_t t = 0; t < pairs.size(); ++t)
        if ((pairs[t][0] == 0 && pairs[t][1] == 1) || (pairs[t][0] == 2 && pairs[t][1] == 3))
            w.c[t].assign(b->nnodes(), 1.0);
    return w;
}

inline EndoField constant_endo(const BackendPtr& b, const double* m) {
    EndoField E(b);
    int n = b->ncomp();
    for (int i = 0; i < n * n; ++i) E.c[i].assign(b->nnodes(), m[i]);
    return E;
}

// torus: block-diagonal rotation J0; sphere: v ↦ n × v
inline EndoField standard_J(const BackendPtr& b) {
    if (b->is_torus()) {
        double m[16] = {0};
        int n = b->dim;
        for (int blk = 0; blk < n / 2; ++blk) {
            m[(2 * blk + 0) * n + (2 * blk + 1)] = -1;
            m[(2 * blk + 1) * n + (2 * blk + 0)] = 1;
        }
        return constant_endo(b, m);
    }
    EndoField J(b);
    const auto& sp = *b->sphere;
    for (size_t p = 0; p < sp.nnodes(); ++p) {
        double n0 = sp.nx(p, 0), n1 = sp.nx(p, 1), n2 = sp.nx(p, 2);
        double cx[9] = {0, -n2, n1, n2, 0, -n0, -n1, n0, 0};
        for (int i = 0; i < 9; ++i) J.c[i][p] = cx[i];
    }
    return J;
}

// --------------------------------------------------------------- random data

// Band-limited random scalar with a 4^{-|k|} decaying spectrum.
inline ScalarField random_scalar(const BackendPtr& b, int genband, Rng& rng) {
    if (b->is_torus()) {
        std::vector<std::pair<std::array<int, 4>, Cpx>> modes;
        int g = genband;
        std::array<int, 4> k{0, 0, 0, 0};
        std::vector<std::array<int, 4>> all;
        if (b->dim == 2) {
            for (k[0] = -g; k[0] <= g; ++k[0])
                for (k[1] = -g; k[1] <= g; ++k[1]) all.push_back(k);
        } else {
            for (k[0] = -g; k[0] <= g; ++k[0])
                for (k[1] = -g; k[1] <= g; ++k[1])
                    for (k[2] = -g; k[2] <= g; ++k[2])
                        for (k[3] = -g; k[3] <= g; ++k[3]) all.push_back(k);
        }
        for (const auto& kk : all) {
            int kinf = 0;
            for (int a = 0; a < b->dim; ++a) kinf = std::max(kinf, std::abs(kk[a]));
            double amp = std::pow(4.0, -kinf);
            // keep one representative per ±k pair
            bool lead = false;
            for (int a = 0; a < b->dim; ++a) {
                if (kk[a] > 0) { lead = true; break; }
                if (kk[a] < 0) break;
            }
            if (!lead && kinf > 0) continue;
            modes.push_back({kk, Cpx(amp * rng.normal(), kinf == 0 ? 0.0 : amp * rng.normal())});
        }
        return ScalarField(b, b->torus->field_from_modes(modes));
    }
    const auto& sp = *b->sphere;
    Vec a(sp.ncoeff(genband), 0.0);
    for (int l = 0; l <= genband; ++l)
        for (int m = -l; m <= l; ++m) a[SphereGrid::coeff_index(l, m)] = std::pow(4.0, -l) * rng.normal();
    return ScalarField(b, sp.synthesize(a, genband));
}

inline ScalarField random_scalar_amp(const BackendPtr& b, int genband, double amp, Rng& rng) {
    ScalarField f = random_scalar(b, genband, rng);
    double s = linf(f.v);
    return map_scalar(f, [amp, s](double x) { return (s > 0) ? amp * x / s : 0.0; });
}

inline EndoField random_endo(const BackendPtr& b, int genband, double amp, Rng& rng) {
    EndoField E(b);
    int n = b->ncomp();
    for (int i = 0; i < n * n; ++i) E.c[i] = random_scalar_amp(b, genband, amp, rng).v;
    if (!b->is_torus()) {
        // project both slots tangentially
        const auto& sp = *b->sphere;
        for (size_t p = 0; p < sp.nnodes(); ++p) {
            double m[9], P[9], t[9];
            gather_endo(E, p, m);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) P[i * 3 + j] = (i == j ? 1.0 : 0.0) - sp.nx(p, i) * sp.nx(p, j);
            sm::mul(3, P, m, t);
            sm::mul(3, t, P, m);
            scatter_endo(E, p, m);
        }
    }
    return E;
}

inline VectorField random_vector(const BackendPtr& b, int genband, double amp, Rng& rng) {
    VectorField v(b);
    for (auto& comp : v.c) comp = random_scalar_amp(b, genband, amp, rng).v;
    if (!b->is_torus()) {
        const auto& sp = *b->sphere;
        for (size_t p = 0; p < sp.nnodes(); ++p) {
            double dot = 0;
            for (int c = 0; c < 3; ++c) dot += v.c[c][p] * sp.nx(p, c);
            for (int c = 0; c < 3; ++c) v.c[c][p] -= dot * sp.nx(p, c);
        }
    }
    return v;
}

// ρ = e^f ρ_ref with a random band-limited f
inline FormField random_volume(const BackendPtr& b, int genband, double amp, Rng& rng) {
    ScalarField f = random_scalar_amp(b, genband, amp, rng);
    FormField rho(b, b->dim);
    for (size_t p = 0; p < rho.c[0].size(); ++p) rho.c[0][p] = std::exp(f.v[p]);
    return rho;
}

// Anticommuting (optionally g-symmetric) perturbation at J.
inline EndoField random_perturbation(const EndoField& J, int genband, double amp, Rng& rng,
                                     bool symmetric, const FormField* omega = nullptr) {
    EndoField E = random_endo(J.b, genband, 1.0, rng);
    EndoField A = anticommuting_part(E, J);
    if (symmetric) {
        require(omega != nullptr, "random_perturbation: symmetric part needs omega");
        A = symmetric_part(A, *omega, J);
    }
    double s = max_abs_comp(A.c);
    return scaled(s > 0 ? amp / s : 0.0, A);
}

// Compatible J reached from J0 by the retraction through a random symmetric
// perturbation; exactly compatible with omega at every node.
inline EndoField random_compatible_J(const FormField& omega, const EndoField& J0,
                                     int genband, double amp, Rng& rng) {
    EndoField Jhat = random_perturbation(J0, genband, amp, rng, true, &omega);
    return retract(J0, Jhat, 1.0);
}

// Conjugated structure T J0 T^{-1} (orientation-compatible, generally not
// tame): exact J² = -1.
inline EndoField random_conjugated_J(const EndoField& J0, int genband, double amp, Rng& rng) {
    const auto& b = J0.b;
    require(b->is_torus(), "random_conjugated_J: torus backend only");
    int n = b->ncomp();
    EndoField T = random_endo(b, genband, amp, rng);
    for (int i = 0; i < n; ++i)
        for (size_t p = 0; p < T.c[0].size(); ++p) T.c[static_cast<size_t>(i) * n + i][p] += 1.0;
    EndoField out(b);
    for (size_t p = 0; p < b->nnodes(); ++p) {
        double t[16], ti[16], j0[16], x[16], r[16];
        gather_endo(T, p, t);
        require(sm::inverse(n, t, ti), "random_conjugated_J: conjugator singular");
        gather_endo(J0, p, j0);
        sm::mul(n, t, j0, x);
        sm::mul(n, x, ti, r);
        scatter_endo(out, p, r);
    }
    return out;
}

// Random symmetric trace-free modification of a connection: adding it to any
// torsion-free ρ-preserving connection yields another admissible one.
inline ConnectionField random_tracefree_deviation(const BackendPtr& b, int genband, double amp, Rng& rng) {
    ConnectionField T(b);
    int n = b->ncomp();
    // symmetric random components
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                Vec v = random_scalar_amp(b, genband, amp, rng).v;
                for (size_t p = 0; p < v.size(); ++p) {
                    T.set(p, k, i, j, v[p]);
                    T.set(p, k, j, i, v[p]);
                }
            }
    size_t N = b->nnodes();
    for (size_t p = 0; p < N; ++p) {
        double id[16];
        gather_tangent_identity(b, p, id);
        if (!b->is_torus()) {
            // project every slot tangentially first
            double t3[27];
            for (int k = 0; k < 3; ++k)
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) {
                        double s = 0;
                        for (int a = 0; a < 3; ++a)
                            for (int c = 0; c < 3; ++c)
                                for (int e = 0; e < 3; ++e)
                                    s += id[k * 3 + a] * T.get(p, a, c, e) * id[c * 3 + i] * id[e * 3 + j];
                        t3[(k * 3 + i) * 3 + j] = s;
                    }
            for (int k = 0; k < 3; ++k)
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) T.set(p, k, i, j, t3[(k * 3 + i) * 3 + j]);
        }
        // subtract the pure-trace part: c_j = T^m_{mj}
        double cvec[4];
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int m = 0; m < n; ++m) s += T.get(p, m, m, j);
            cvec[j] = s;
        }
        double denom = b->dim + 1.0;
        for (int k = 0; k < n; ++k)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    double corr = (id[k * n + i] * cvec[j] + id[k * n + j] * cvec[i]) / denom;
                    T.set(p, k, i, j, T.get(p, k, i, j) - corr);
                }
    }
    return T;
}

inline CurvatureContext with_extra_deviation(const CurvatureContext& ctx, const ConnectionField& T) {
    CurvatureContext out = ctx;
    for (size_t c = 0; c < out.S.c.size(); ++c)
        for (size_t p = 0; p < out.S.c[c].size(); ++p) out.S.c[c][p] += T.c[c][p];
    return out;
}

// ------------------------------------------------- compatible polar projection

// Nearest ω-compatible structure built from a tame candidate K: take the
// metric candidate G = ½(ΩK + (ΩK)^T) and return the polar complex structure
// of (Ω, G).
inline EndoField compatible_polar(const FormField& omega, const EndoField& K) {
    const auto& b = omega.b;
    EndoField out(b);
    auto polar2 = [](int n, const double* Om, const double* G, double* Jout) {
        double Gh[16], Ghi[16], At[16], A2[16], Pm[16], Jt[16], t1[16];
        sm::sym_func(n, G, Gh, [](double x) {
            require(x > 0, "compatible_polar: candidate metric not positive");
            return std::sqrt(x);
        });
        sm::sym_func(n, G, Ghi, [](double x) { return 1.0 / std::sqrt(x); });
        sm::mul(n, Ghi, Om, t1);
        sm::mul(n, t1, Ghi, At);
        sm::mul(n, At, At, A2);
        for (int i = 0; i < n * n; ++i) A2[i] = -A2[i];
        sm::inv_sqrt_spd(n, A2, Pm);
        sm::mul(n, At, Pm, Jt);
        sm::mul(n, Ghi, Jt, t1);
        sm::mul(n, t1, Gh, Jout);
        for (int i = 0; i < n * n; ++i) Jout[i] = -Jout[i];
    };
    if (b->is_torus()) {
        int n = b->ncomp();
        for (size_t p = 0; p < b->nnodes(); ++p) {
            double Om[16], G[16], Jm[16];
            gather_form2(omega, p, Om);
            gather_metric(omega, K, p, G);
            polar2(n, Om, G, Jm);
            scatter_endo(out, p, Jm);
        }
    } else {
        const auto& sp = *b->sphere;
        for (size_t p = 0; p < sp.nnodes(); ++p) {
            double Om[16], G[16], K3[16], F[6];
            gather_form2(omega, p, Om);
            gather_metric(omega, K, p, G);
            gather_endo(K, p, K3);
            (void)K3;
            for (int i = 0; i < 3; ++i) { F[i * 2 + 0] = sp.eth(p, i); F[i * 2 + 1] = sp.eph(p, i); }
            double Om2[4] = {0, 0, 0, 0}, G2[4] = {0, 0, 0, 0};
            for (int a = 0; a < 2; ++a)
                for (int c = 0; c < 2; ++c)
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j) {
                            Om2[a * 2 + c] += F[i * 2 + a] * Om[i * 3 + j] * F[j * 2 + c];
                            G2[a * 2 + c] += F[i * 2 + a] * G[i * 3 + j] * F[j * 2 + c];
                        }
            double J2[4];
            polar2(2, Om2, G2, J2);
            double Jm[9];
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    double s = 0;
                    for (int a = 0; a < 2; ++a)
                        for (int c = 0; c < 2; ++c) s += F[i * 2 + a] * J2[a * 2 + c] * F[j * 2 + c];
                    Jm[i * 3 + j] = s;
                }
            scatter_endo(out, p, Jm);
        }
    }
    return out;
}

// -------------------------------------------- Hamiltonian transport of J

// φ_t^* J for the time-t Hamiltonian flow of H: integrates ∂_s K = L_{v_H} K
// by RK4 and re-projects onto the ω-compatible locus.
inline EndoField transport_by_hamiltonian(const EndoField& J, const ScalarField& H,
                                          const FormField& omega, double t, int nsteps = 0) {
    if (t == 0.0) return J;
    VectorField v = hamiltonian_vf(H, omega);
    if (nsteps <= 0) nsteps = std::max(16, static_cast<int>(std::ceil(std::abs(t) / 0.02)));
    double dt = t / nsteps;
    EndoField K = J;
    for (int s = 0; s < nsteps; ++s) {
        EndoField k1 = lie_derivative(v, K);
        EndoField k2 = lie_derivative(v, lin(1.0, K, 0.5 * dt, k1));
        EndoField k3 = lie_derivative(v, lin(1.0, K, 0.5 * dt, k2));
        EndoField k4 = lie_derivative(v, lin(1.0, K, dt, k3));
        for (size_t c = 0; c < K.c.size(); ++c)
            for (size_t p = 0; p < K.c[c].size(); ++p)
                K.c[c][p] += dt / 6.0 * (k1.c[c][p] + 2 * k2.c[c][p] + 2 * k3.c[c][p] + k4.c[c][p]);
    }
    return compatible_polar(omega, K);
}

// --------------------------------------------------- constant-data oracle

// Constant-coefficient torus scene; pairings evaluated by pure matrix algebra.
struct TorusOracleScene {
    int dim = 2;
    double omega[16] = {0, 1, -1, 0};  // bilinear Ω_{ij}; dx∧dy has Ω_{01} = 1
    double J[16] = {0, -1, 1, 0};
    double J1hat[16] = {0};
    double J2hat[16] = {0};
    double rho_scale = 1.0;

    void validate() const {
        int n = dim;
        double j2[16], id[16], t1[16], t2[16];
        sm::mul(n, J, J, j2);
        sm::ident(n, id);
        for (int i = 0; i < n * n; ++i)
            require(std::abs(j2[i] + id[i]) < 1e-12, "oracle scene: J^2 != -1");
        sm::mul(n, J1hat, J, t1);
        sm::mul(n, J, J1hat, t2);
        for (int i = 0; i < n * n; ++i)
            require(std::abs(t1[i] + t2[i]) < 1e-12, "oracle scene: J1hat does not anticommute");
        sm::mul(n, J2hat, J, t1);
        sm::mul(n, J, J2hat, t2);
        for (int i = 0; i < n * n; ++i)
            require(std::abs(t1[i] + t2[i]) < 1e-12, "oracle scene: J2hat does not anticommute");
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                require(std::abs(omega[i * n + j] + omega[j * n + i]) < 1e-12,
                        "oracle scene: omega not antisymmetric");
    }

    // Ω_ρ = ½ tr(J1 J J2) · ρ_scale · (2π)^dim; for constant scenes the one-form
    // Λ vanishes, so the Weil–Petersson value coincides with Ω_ρ.
    double pairing_omega_rho() const {
        double t1[16], t2[16];
        sm::mul(dim, J1hat, J, t1);
        sm::mul(dim, t1, J2hat, t2);
        return 0.5 * sm::trace(dim, t2) * rho_scale * std::pow(kTau, dim);
    }
    double pairing_wp() const { return pairing_omega_rho(); }
};

} // namespace kml
