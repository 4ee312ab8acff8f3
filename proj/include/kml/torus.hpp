#pragma once

// Fourier-spectral machinery on (R/2πZ)^d, d = 2 or 4. Fields are stored as
// values on a uniform grid whose Nyquist band comfortably exceeds the declared
// band limit, so products of band-limited inputs remain exact on the grid.
// Derivatives act through the full-grid trigonometric interpolant.

#include "common.hpp"

#include <complex>
#include <memory>
#include <mutex>
#include <fftw3.h>

namespace kml {

using Cpx = std::complex<double>;

class TorusGrid {
public:
    TorusGrid(int dim, int band)
        : dim_(dim), band_(band) {
        require(dim == 2 || dim == 4, "TorusGrid: dim must be 2 or 4");
        require(band >= 1, "TorusGrid: band must be positive");
        n_ = (dim == 2) ? nice_size(3 * band) : nice_size(2 * band);
        nnodes_ = 1;
        for (int a = 0; a < dim; ++a) nnodes_ *= static_cast<size_t>(n_);
        make_plans();
    }
    ~TorusGrid() {
        std::lock_guard<std::mutex> lk(planner_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
    }
    TorusGrid(const TorusGrid&) = delete;
    TorusGrid& operator=(const TorusGrid&) = delete;

    int dim() const { return dim_; }
    int band() const { return band_; }
    int n() const { return n_; }
    size_t nnodes() const { return nnodes_; }
    int nyquist() const { return n_ / 2 - 1; }  // largest safely representable mode
    double cell_volume() const { return std::pow(kTau / n_, dim_); }

    // node -> per-axis indices
    void node_indices(size_t node, int* idx) const {
        for (int a = dim_ - 1; a >= 0; --a) { idx[a] = static_cast<int>(node % n_); node /= n_; }
    }
    double coord(int axis_index) const { return kTau * axis_index / n_; }

    // Grid values -> full complex spectrum, normalized so that
    // f(x) = sum_k c[k] exp(i k·x) with k wrapped to (-n/2, n/2].
    std::vector<Cpx> to_modes(const Vec& vals) const {
        require(vals.size() == nnodes_, "to_modes: size mismatch");
        std::vector<Cpx> in(nnodes_), out(nnodes_);
        for (size_t i = 0; i < nnodes_; ++i) in[i] = vals[i];
        exec(fwd_, in.data(), out.data());
        double s = 1.0 / static_cast<double>(nnodes_);
        for (auto& c : out) c *= s;
        return out;
    }

    Vec from_modes(const std::vector<Cpx>& modes) const {
        require(modes.size() == nnodes_, "from_modes: size mismatch");
        std::vector<Cpx> in(modes), out(nnodes_);
        exec(bwd_, in.data(), out.data());
        Vec vals(nnodes_);
        for (size_t i = 0; i < nnodes_; ++i) vals[i] = out[i].real();
        return vals;
    }

    // Wrapped wavenumber of a spectrum index along one axis.
    int wavenumber(int mi) const { return (mi <= n_ / 2) ? mi : mi - n_; }

    // d/dx_axis through the trigonometric interpolant (Nyquist line dropped).
    Vec deriv(const Vec& vals, int axis) const {
        auto m = to_modes(vals);
        apply_ik(m, axis);
        return from_modes(m);
    }

    // Remove every mode with any |k_a| > K.
    Vec bandlimit(const Vec& vals, int K) const {
        auto m = to_modes(vals);
        int idx[4];
        for (size_t i = 0; i < nnodes_; ++i) {
            size_t t = i;
            for (int a = dim_ - 1; a >= 0; --a) { idx[a] = static_cast<int>(t % n_); t /= n_; }
            for (int a = 0; a < dim_; ++a) {
                int k = wavenumber(idx[a]);
                if (std::abs(k) > K || idx[a] == n_ / 2) { m[i] = 0; break; }
            }
        }
        return from_modes(m);
    }

    // Flat index of an integer mode vector, components wrapped mod n.
    size_t mode_index(const int* k) const {
        size_t id = 0;
        for (int a = 0; a < dim_; ++a) {
            int mi = ((k[a] % n_) + n_) % n_;
            id = id * n_ + static_cast<size_t>(mi);
        }
        return id;
    }

    // Real field from a sparse mode map: pairs (k, c) meaning c·e^{ik·x}; the
    // conjugate mode is added automatically to keep the field real.
    Vec field_from_modes(const std::vector<std::pair<std::array<int,4>, Cpx>>& modes) const {
        std::vector<Cpx> spec(nnodes_, Cpx(0, 0));
        for (const auto& [k, c] : modes) {
            for (int a = 0; a < dim_; ++a)
                require(std::abs(k[a]) <= band_, "field_from_modes: mode outside band limit");
            int kp[4], km[4];
            bool zero = true;
            for (int a = 0; a < dim_; ++a) { kp[a] = k[a]; km[a] = -k[a]; zero = zero && k[a] == 0; }
            spec[mode_index(kp)] += c;
            if (!zero) spec[mode_index(km)] += std::conj(c);
        }
        return from_modes(spec);
    }

    // f ∘ (x -> Ax + b), exact in spectral space. A integer with |det| = 1.
    // Modes at roundoff level are dropped; a significant mode sheared past the
    // grid band is an error.
    Vec compose_affine(const Vec& vals, const int* A, const double* b) const {
        auto m = to_modes(vals);
        double peak = 0;
        for (const auto& c : m) peak = std::max(peak, std::abs(c));
        const double negligible = 1e-13 * std::max(peak, 1e-300);
        std::vector<Cpx> out(nnodes_, Cpx(0, 0));
        int idx[4];
        for (size_t i = 0; i < nnodes_; ++i) {
            if (std::abs(m[i]) <= negligible) continue;
            size_t t = i;
            for (int a = dim_ - 1; a >= 0; --a) { idx[a] = static_cast<int>(t % n_); t /= n_; }
            int k[4], kk[4];
            double kb = 0;
            for (int a = 0; a < dim_; ++a) { k[a] = wavenumber(idx[a]); kb += k[a] * b[a]; }
            for (int a = 0; a < dim_; ++a) {
                long s = 0;
                for (int c = 0; c < dim_; ++c) s += static_cast<long>(A[c * dim_ + a]) * k[c];
                require(std::abs(s) <= nyquist(), "compose_affine: sheared mode exceeds grid band");
                kk[a] = static_cast<int>(s);
            }
            out[mode_index(kk)] += m[i] * std::exp(Cpx(0, kb));
        }
        return from_modes(out);
    }

private:
    static int nice_size(int m) {
        // smallest 2^a·3^b·5^c ≥ max(m, 8)
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
    void make_plans() {
        std::lock_guard<std::mutex> lk(planner_mutex());
        std::vector<Cpx> a(nnodes_), bvec(nnodes_);
        int dims[4] = {n_, n_, n_, n_};
        fwd_ = fftw_plan_dft(dim_, dims,
                             reinterpret_cast<fftw_complex*>(a.data()),
                             reinterpret_cast<fftw_complex*>(bvec.data()),
                             FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
        bwd_ = fftw_plan_dft(dim_, dims,
                             reinterpret_cast<fftw_complex*>(a.data()),
                             reinterpret_cast<fftw_complex*>(bvec.data()),
                             FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
        require(fwd_ && bwd_, "TorusGrid: FFTW planning failed");
    }
    static void exec(fftw_plan p, Cpx* in, Cpx* out) {
        fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(in), reinterpret_cast<fftw_complex*>(out));
    }
    void apply_ik(std::vector<Cpx>& m, int axis) const {
        int idx[4];
        for (size_t i = 0; i < nnodes_; ++i) {
            size_t t = i;
            for (int a = dim_ - 1; a >= 0; --a) { idx[a] = static_cast<int>(t % n_); t /= n_; }
            if (idx[axis] == n_ / 2) { m[i] = 0; continue; }
            m[i] *= Cpx(0, wavenumber(idx[axis]));
        }
    }

    int dim_, band_, n_;
    size_t nnodes_;
    fftw_plan fwd_ = nullptr, bwd_ = nullptr;
};

} // namespace kml
