#pragma once

// Spherical-harmonic machinery on the round unit sphere. Scalars live on a
// Gauss–Legendre (colatitude) × uniform (longitude) grid; tangent tensors are
// stored in ambient R^3 components. Nodes never touch the poles, so the local
// frame (e_theta, e_phi, n) is available pointwise everywhere.
//
// Real basis: Y_{l,0} = K_{l0},  Y_{l,m>0} = √2 K_{lm} cos(mφ),
// Y_{l,-m} = √2 K_{lm} sin(mφ), with K the orthonormal associated Legendre
// functions (no Condon–Shortley phase). Coefficient index: l² + l + m.

#include "common.hpp"

#include <complex>
#include <memory>
#include <mutex>
#include <fftw3.h>

namespace kml {

class SphereGrid {
public:
    explicit SphereGrid(int L) : L_(L) {
        require(L >= 2, "SphereGrid: band limit too small");
        ntheta_ = (3 * L) / 2 + 4;
        nphi_ = nice_even(2 * ntheta_);
        lmax_ = std::min(ntheta_ - 1, nphi_ / 2 - 1);
        nnodes_ = static_cast<size_t>(ntheta_) * nphi_;
        gauss_legendre();
        build_tables();
        build_frames();
        make_plans();
    }
    ~SphereGrid() {
        std::lock_guard<std::mutex> lk(planner_mutex());
        fftw_destroy_plan(r2c_);
        fftw_destroy_plan(c2r_);
    }
    SphereGrid(const SphereGrid&) = delete;
    SphereGrid& operator=(const SphereGrid&) = delete;

    int L() const { return L_; }
    int lmax() const { return lmax_; }
    int ntheta() const { return ntheta_; }
    int nphi() const { return nphi_; }
    size_t nnodes() const { return nnodes_; }

    size_t node(int i, int j) const { return static_cast<size_t>(i) * nphi_ + j; }
    double theta(int i) const { return theta_[i]; }
    double phi(int j) const { return kTau * j / nphi_; }

    // quadrature weight of node(i,j) for integration against the round area form
    double weight(int i) const { return wx_[i] * kTau / nphi_; }
    const Vec& node_weights() const { return wnode_; }

    double integrate(const Vec& v) const {
        require(v.size() == nnodes_, "integrate: size mismatch");
        double s = 0;
        for (size_t p = 0; p < nnodes_; ++p) s += wnode_[p] * v[p];
        return s;
    }

    // ambient frame components at node(i,j); c = 0,1,2
    double nx(size_t p, int c) const { return frame_[3 * p + c]; }
    double eth(size_t p, int c) const { return frame_th_[3 * p + c]; }
    double eph(size_t p, int c) const { return frame_ph_[3 * p + c]; }
    double sin_theta(size_t p) const { return st_node_[p]; }

    static int coeff_index(int l, int m) { return l * l + l + m; }
    int ncoeff(int lan) const { return (lan + 1) * (lan + 1); }

    // grid values -> real SH coefficients up to degree lan (exact for band-limited input)
    Vec analyze(const Vec& vals, int lan) const {
        require(lan <= lmax_, "analyze: degree beyond analysis band");
        require(vals.size() == nnodes_, "analyze: size mismatch");
        const int nc = nphi_ / 2 + 1;
        std::vector<double> in(vals);
        std::vector<std::complex<double>> H(static_cast<size_t>(ntheta_) * nc);
        fftw_execute_dft_r2c(r2c_, in.data(), reinterpret_cast<fftw_complex*>(H.data()));
        Vec a(ncoeff(lan), 0.0);
        const double inv_nphi = 1.0 / nphi_;
        for (int m = 0; m <= lan; ++m) {
            const double fc = (m == 0) ? kTau : std::sqrt(2.0) * kPi;
            for (int l = m; l <= lan; ++l) {
                const double* Krow = &ktab_[tri(l, m) * ntheta_];
                double sc = 0, ss = 0;
                for (int i = 0; i < ntheta_; ++i) {
                    const auto& h = H[static_cast<size_t>(i) * nc + m];
                    double cm = (m == 0 ? 1.0 : 2.0) * h.real() * inv_nphi;
                    double sm = -2.0 * h.imag() * inv_nphi;
                    sc += wx_[i] * Krow[i] * cm;
                    if (m > 0) ss += wx_[i] * Krow[i] * sm;
                }
                a[coeff_index(l, m)] = fc * sc;
                if (m > 0) a[coeff_index(l, -m)] = fc * ss;
            }
        }
        return a;
    }

    // coefficients -> grid values; tables: 0 = K, 1 = dK/dθ
    Vec synthesize(const Vec& a, int lan, int table = 0) const {
        require(lan <= lmax_, "synthesize: degree beyond analysis band");
        const int nc = nphi_ / 2 + 1;
        std::vector<std::complex<double>> H(static_cast<size_t>(ntheta_) * nc, {0, 0});
        const Vec& tab = (table == 0) ? ktab_ : dktab_;
        for (int m = 0; m <= lan; ++m) {
            for (int i = 0; i < ntheta_; ++i) {
                double gc = 0, gs = 0;
                for (int l = m; l <= lan; ++l) {
                    double K = tab[tri(l, m) * ntheta_ + i];
                    double sf = (m == 0) ? 1.0 : std::sqrt(2.0);
                    gc += a[coeff_index(l, m)] * sf * K;
                    if (m > 0) gs += a[coeff_index(l, -m)] * sf * K;
                }
                H[static_cast<size_t>(i) * nc + m] = {m == 0 ? gc : 0.5 * gc, m == 0 ? 0.0 : -0.5 * gs};
            }
        }
        Vec out(nnodes_);
        fftw_execute_dft_c2r(c2r_, reinterpret_cast<fftw_complex*>(H.data()), out.data());
        return out;
    }

    // values of (1/sinθ)·∂φ f from coefficients
    Vec synthesize_dphi_over_sin(const Vec& a, int lan) const {
        require(lan <= lmax_, "synthesize: degree beyond analysis band");
        const int nc = nphi_ / 2 + 1;
        std::vector<std::complex<double>> H(static_cast<size_t>(ntheta_) * nc, {0, 0});
        for (int m = 1; m <= lan; ++m) {
            for (int i = 0; i < ntheta_; ++i) {
                double gc = 0, gs = 0;  // target cos / sin amplitudes
                for (int l = m; l <= lan; ++l) {
                    double K = ktab_[tri(l, m) * ntheta_ + i] / st_[i];
                    double sf = std::sqrt(2.0);
                    gc += m * a[coeff_index(l, -m)] * sf * K;
                    gs -= m * a[coeff_index(l, m)] * sf * K;
                }
                H[static_cast<size_t>(i) * nc + m] = {0.5 * gc, -0.5 * gs};
            }
        }
        Vec out(nnodes_);
        fftw_execute_dft_c2r(c2r_, reinterpret_cast<fftw_complex*>(H.data()), out.data());
        return out;
    }

    // Tangential gradient of a scalar, ambient components (covector = vector here).
    std::array<Vec, 3> grad(const Vec& vals) const {
        Vec a = analyze(vals, lmax_);
        Vec ft = synthesize(a, lmax_, 1);
        Vec fp = synthesize_dphi_over_sin(a, lmax_);
        std::array<Vec, 3> g{Vec(nnodes_), Vec(nnodes_), Vec(nnodes_)};
        for (size_t p = 0; p < nnodes_; ++p)
            for (int c = 0; c < 3; ++c)
                g[c][p] = ft[p] * frame_th_[3 * p + c] + fp[p] * frame_ph_[3 * p + c];
        return g;
    }

    // Single real harmonic on the grid.
    Vec harmonic(int l, int m) const {
        require(l <= lmax_ && std::abs(m) <= l, "harmonic: bad (l,m)");
        Vec a(ncoeff(l), 0.0);
        a[coeff_index(l, m)] = 1.0;
        return synthesize(a, l);
    }

    Vec bandlimit(const Vec& vals, int K) const {
        Vec a = analyze(vals, std::min(K, lmax_));
        return synthesize(a, std::min(K, lmax_));
    }

    // Δ = d*d (positive); eigenvalue l(l+1)
    Vec laplacian(const Vec& vals) const {
        Vec a = analyze(vals, lmax_);
        for (int l = 0; l <= lmax_; ++l)
            for (int m = -l; m <= l; ++m) a[coeff_index(l, m)] *= l * (l + 1.0);
        return synthesize(a, lmax_);
    }

    // Mean-zero u with Δu = rhs (rhs mean removed).
    Vec poisson(const Vec& rhs) const {
        Vec a = analyze(rhs, lmax_);
        a[0] = 0;
        for (int l = 1; l <= lmax_; ++l)
            for (int m = -l; m <= l; ++m) a[coeff_index(l, m)] /= l * (l + 1.0);
        return synthesize(a, lmax_);
    }

private:
    static int nice_even(int m) {
        int s = std::max(m, 8);
        for (;; ++s) {
            int t = s;
            while (t % 2 == 0) t /= 2;
            while (t % 3 == 0) t /= 3;
            while (t % 5 == 0) t /= 5;
            if (t == 1 && s % 2 == 0) return s;
        }
    }
    static std::mutex& planner_mutex() {
        static std::mutex m;
        return m;
    }
    size_t tri(int l, int m) const { return static_cast<size_t>(l) * (l + 1) / 2 + m; }

    void gauss_legendre() {
        int n = ntheta_;
        x_.assign(n, 0.0);
        wx_.assign(n, 0.0);
        for (int i = 0; i < n; ++i) {
            // Newton from the Chebyshev-like initial guess
            double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = x;
                for (int l = 2; l <= n; ++l) {
                    double p2 = ((2 * l - 1) * x * p1 - (l - 1) * p0) / l;
                    p0 = p1; p1 = p2;
                }
                double dp = n * (x * p1 - p0) / (x * x - 1.0);
                double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-15) break;
            }
            double p0 = 1.0, p1 = x;
            for (int l = 2; l <= n; ++l) {
                double p2 = ((2 * l - 1) * x * p1 - (l - 1) * p0) / l;
                p0 = p1; p1 = p2;
            }
            double dp = n * (x * p1 - p0) / (x * x - 1.0);
            x_[i] = x;  // descending in x = ascending in θ
            wx_[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        theta_.assign(n, 0.0);
        st_.assign(n, 0.0);
        for (int i = 0; i < n; ++i) {
            theta_[i] = std::acos(x_[i]);
            st_[i] = std::sin(theta_[i]);
        }
    }

    void build_tables() {
        size_t ntri = tri(lmax_, lmax_) + 1;
        ktab_.assign(ntri * ntheta_, 0.0);
        dktab_.assign(ntri * ntheta_, 0.0);
        for (int i = 0; i < ntheta_; ++i) {
            double x = x_[i], st = st_[i];
            // diagonal K_mm
            Vec kmm(lmax_ + 1);
            kmm[0] = std::sqrt(1.0 / (4.0 * kPi));
            for (int m = 1; m <= lmax_; ++m)
                kmm[m] = kmm[m - 1] * st * std::sqrt((2.0 * m + 1.0) / (2.0 * m));
            for (int m = 0; m <= lmax_; ++m) {
                double km2 = 0.0, km1 = kmm[m];
                ktab_[tri(m, m) * ntheta_ + i] = km1;
                for (int l = m + 1; l <= lmax_; ++l) {
                    double al = std::sqrt((4.0 * l * l - 1.0) / (static_cast<double>(l) * l - m * m));
                    double bl = std::sqrt(((l - 1.0) * (l - 1.0) - m * m) / (4.0 * (l - 1.0) * (l - 1.0) - 1.0));
                    double k = al * (x * km1 - bl * km2);
                    ktab_[tri(l, m) * ntheta_ + i] = k;
                    km2 = km1; km1 = k;
                }
                for (int l = m; l <= lmax_; ++l) {
                    double K = ktab_[tri(l, m) * ntheta_ + i];
                    double Km1 = (l > m) ? ktab_[tri(l - 1, m) * ntheta_ + i] : 0.0;
                    double e = (l > m) ? std::sqrt((static_cast<double>(l) * l - m * m) * (2.0 * l + 1.0) / (2.0 * l - 1.0)) : 0.0;
                    dktab_[tri(l, m) * ntheta_ + i] = (l * x * K - e * Km1) / st;
                }
            }
        }
    }

    void build_frames() {
        frame_.assign(3 * nnodes_, 0.0);
        frame_th_.assign(3 * nnodes_, 0.0);
        frame_ph_.assign(3 * nnodes_, 0.0);
        st_node_.assign(nnodes_, 0.0);
        wnode_.assign(nnodes_, 0.0);
        for (int i = 0; i < ntheta_; ++i) {
            double ct = x_[i], st = st_[i];
            for (int j = 0; j < nphi_; ++j) {
                double ph = phi(j), cp = std::cos(ph), sp = std::sin(ph);
                size_t p = node(i, j);
                frame_[3 * p + 0] = st * cp; frame_[3 * p + 1] = st * sp; frame_[3 * p + 2] = ct;
                frame_th_[3 * p + 0] = ct * cp; frame_th_[3 * p + 1] = ct * sp; frame_th_[3 * p + 2] = -st;
                frame_ph_[3 * p + 0] = -sp; frame_ph_[3 * p + 1] = cp; frame_ph_[3 * p + 2] = 0;
                st_node_[p] = st;
                wnode_[p] = weight(i);
            }
        }
    }

    void make_plans() {
        std::lock_guard<std::mutex> lk(planner_mutex());
        const int nc = nphi_ / 2 + 1;
        std::vector<double> rbuf(nnodes_);
        std::vector<std::complex<double>> cbuf(static_cast<size_t>(ntheta_) * nc);
        int n[] = {nphi_};
        r2c_ = fftw_plan_many_dft_r2c(1, n, ntheta_, rbuf.data(), nullptr, 1, nphi_,
                                      reinterpret_cast<fftw_complex*>(cbuf.data()), nullptr, 1, nc,
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
        c2r_ = fftw_plan_many_dft_c2r(1, n, ntheta_, reinterpret_cast<fftw_complex*>(cbuf.data()),
                                      nullptr, 1, nc, rbuf.data(), nullptr, 1, nphi_,
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
        require(r2c_ && c2r_, "SphereGrid: FFTW planning failed");
    }

    int L_, ntheta_, nphi_, lmax_;
    size_t nnodes_;
    Vec x_, wx_, theta_, st_;
    Vec ktab_, dktab_;           // (tri(l,m), i) tables
    Vec frame_, frame_th_, frame_ph_, st_node_, wnode_;
    fftw_plan r2c_ = nullptr, c2r_ = nullptr;
};

} // namespace kml
