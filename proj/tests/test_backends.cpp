// Spectral backend sanity: round trips, derivative symbols, quadrature.

#include <catch2/catch_amalgamated.hpp>
#include <kml/fields.hpp>
#include <kml/calculus.hpp>

#include <random>

using namespace kml;

namespace {

ScalarField torus_sin(const BackendPtr& b, int axis, int k = 1) {
    ScalarField f(b);
    const auto& g = *b->torus;
    int idx[4];
    for (size_t p = 0; p < g.nnodes(); ++p) {
        g.node_indices(p, idx);
        f.v[p] = std::sin(k * g.coord(idx[axis]));
    }
    return f;
}

} // namespace

TEST_CASE("torus transform round trip and derivative symbol") {
    auto b = Backend::make(BackendKind::torus2, 16);
    const auto& g = *b->torus;

    // random 20-mode field round-trips through the spectrum
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(-1, 1);
    std::vector<std::pair<std::array<int, 4>, Cpx>> modes;
    for (int t = 0; t < 20; ++t) {
        std::array<int, 4> k{int(rng() % 9) - 4, int(rng() % 9) - 4, 0, 0};
        modes.push_back({k, Cpx(U(rng), U(rng))});
    }
    Vec f = g.field_from_modes(modes);
    Vec f2 = g.from_modes(g.to_modes(f));
    double err = 0;
    for (size_t p = 0; p < f.size(); ++p) err = std::max(err, std::abs(f[p] - f2[p]));
    REQUIRE(err < 1e-12);

    // d/dx sin(x) = cos(x)
    ScalarField s = torus_sin(b, 0);
    Vec ds = g.deriv(s.v, 0);
    int idx[4];
    err = 0;
    for (size_t p = 0; p < ds.size(); ++p) {
        g.node_indices(p, idx);
        err = std::max(err, std::abs(ds[p] - std::cos(g.coord(idx[0]))));
    }
    REQUIRE(err < 1e-12);

    // derivative of e^{ikx} has symbol ik: check via mode 3
    ScalarField s3 = torus_sin(b, 1, 3);
    Vec d3 = g.deriv(s3.v, 1);
    err = 0;
    for (size_t p = 0; p < d3.size(); ++p) {
        g.node_indices(p, idx);
        err = std::max(err, std::abs(d3[p] - 3 * std::cos(3 * g.coord(idx[1]))));
    }
    REQUIRE(err < 1e-12);

    // flat volume of the 2-torus with periods 2π
    FormField vol(b, 2);
    vol.c[0].assign(b->nnodes(), 1.0);
    REQUIRE(integrate(vol) == Catch::Approx(kTau * kTau).epsilon(1e-13));

    // out-of-band mode request must throw
    std::array<int, 4> bad{17, 0, 0, 0};
    REQUIRE_THROWS_AS(g.field_from_modes({{bad, Cpx(1, 0)}}), error);
}

TEST_CASE("torus pullback is exact on modes") {
    auto b = Backend::make(BackendKind::torus2, 16);
    const auto& g = *b->torus;
    ScalarField s = torus_sin(b, 0);

    AffineMap tr;  // translation by (π, 0): sin(x+π) = -sin x
    tr.dim = 2;
    tr.b[0] = kPi;
    ScalarField st = pullback(s, tr);
    double err = 0;
    for (size_t p = 0; p < st.v.size(); ++p) err = std::max(err, std::abs(st.v[p] + s.v[p]));
    REQUIRE(err < 1e-12);

    // shear preserves the flat volume exactly
    AffineMap sh;
    sh.dim = 2;
    sh.A[0] = 1; sh.A[1] = 1; sh.A[2] = 0; sh.A[3] = 1;
    FormField vol(b, 2);
    vol.c[0].assign(b->nnodes(), 1.0);
    FormField vsh = pullback(vol, sh);
    err = 0;
    for (size_t p = 0; p < vsh.c[0].size(); ++p) err = std::max(err, std::abs(vsh.c[0][p] - 1.0));
    REQUIRE(err < 1e-12);

    (void)g;
}

TEST_CASE("sphere harmonics: orthonormality, eigenvalues, quadrature") {
    auto b = Backend::make(BackendKind::sphere, 16);
    const auto& sp = *b->sphere;

    // area = 4π
    REQUIRE(sp.integrate(Vec(sp.nnodes(), 1.0)) == Catch::Approx(4 * kPi).epsilon(1e-13));

    // Y00 constant 1/sqrt(4π)
    Vec y00 = sp.harmonic(0, 0);
    for (size_t p = 0; p < y00.size(); ++p)
        REQUIRE(y00[p] == Catch::Approx(1.0 / std::sqrt(4 * kPi)).epsilon(1e-12));

    // orthonormality over a selection of pairs
    for (auto [l, m] : {std::pair{1, 0}, {1, 1}, {2, -1}, {3, 2}, {5, -4}, {8, 8}}) {
        Vec y = sp.harmonic(l, m);
        Vec y2(y.size());
        for (size_t p = 0; p < y.size(); ++p) y2[p] = y[p] * y[p];
        REQUIRE(sp.integrate(y2) == Catch::Approx(1.0).epsilon(1e-11));
        Vec cross(y.size());
        for (size_t p = 0; p < y.size(); ++p) cross[p] = y[p] * y00[p];
        REQUIRE(std::abs(sp.integrate(cross)) < 1e-12);
    }

    // analysis returns the unit coefficient
    Vec y32 = sp.harmonic(3, 2);
    Vec a = sp.analyze(y32, 6);
    for (int l = 0; l <= 6; ++l)
        for (int m = -l; m <= l; ++m) {
            double expect = (l == 3 && m == 2) ? 1.0 : 0.0;
            REQUIRE(a[SphereGrid::coeff_index(l, m)] == Catch::Approx(expect).margin(1e-12));
        }

    // Laplacian eigenvalue l(l+1): d*d Y1m = 2 Y1m
    Vec y1 = sp.harmonic(1, -1);
    Vec lap = sp.laplacian(y1);
    double err = 0;
    for (size_t p = 0; p < lap.size(); ++p) err = std::max(err, std::abs(lap[p] - 2 * y1[p]));
    REQUIRE(err < 1e-10);

    // tangential gradient: |grad z|^2 = 1 - z^2
    Vec z(sp.nnodes());
    for (size_t p = 0; p < z.size(); ++p) z[p] = sp.nx(p, 2);
    auto g = sp.grad(z);
    err = 0;
    for (size_t p = 0; p < z.size(); ++p) {
        double g2 = g[0][p] * g[0][p] + g[1][p] * g[1][p] + g[2][p] * g[2][p];
        err = std::max(err, std::abs(g2 - (1 - z[p] * z[p])));
    }
    REQUIRE(err < 1e-11);

    // Poisson: rhs = 2 Y1m -> u = Y1m
    Vec rhs(y1.size());
    for (size_t p = 0; p < rhs.size(); ++p) rhs[p] = 2 * y1[p];
    Vec u = sp.poisson(rhs);
    err = 0;
    for (size_t p = 0; p < u.size(); ++p) err = std::max(err, std::abs(u[p] - y1[p]));
    REQUIRE(err < 1e-11);
}

TEST_CASE("poisson_solve reference symbols") {
    auto b = Backend::make(BackendKind::torus2, 16);
    ScalarField rhs = torus_sin(b, 0);  // cos x has |k|^2 = 1... use sin x, same
    ScalarField u = poisson_solve_reference(rhs);
    double err = 0;
    for (size_t p = 0; p < u.v.size(); ++p) err = std::max(err, std::abs(u.v[p] - rhs.v[p]));
    REQUIRE(err < 1e-12);

    ScalarField zero(b);
    ScalarField u0 = poisson_solve_reference(zero);
    REQUIRE(linf(u0.v) < 1e-14);

    ScalarField bad(b, 1.0);
    REQUIRE_THROWS_AS(poisson_solve_reference(bad), error);

    // poisson ∘ laplacian = identity on mean-zero fields
    ScalarField f = torus_sin(b, 1, 2);
    ScalarField lf = laplacian_reference(f);
    ScalarField back = poisson_solve_reference(lf);
    err = 0;
    for (size_t p = 0; p < back.v.size(); ++p) err = std::max(err, std::abs(back.v[p] - f.v[p]));
    REQUIRE(err < 1e-9);
}
