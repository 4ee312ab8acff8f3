#pragma once

// Backend handle + band-limited tensor fields. Component conventions:
//   torus:  coordinate frame; VectorField = v^i, EndoField = E^i_j (row i =
//           output), FormField(k) = components over sorted index tuples.
//   sphere: ambient R^3 components with tangential projection; a 2-form is a
//           scalar multiple of the round area form; a TM-valued 2-form is
//           area ⊗ (vector field).

#include "common.hpp"
#include "torus.hpp"
#include "sphere.hpp"

#include <memory>

namespace kml {

enum class BackendKind { torus2, torus4, sphere };

inline const char* to_string(BackendKind k) {
    switch (k) {
        case BackendKind::torus2: return "torus2";
        case BackendKind::torus4: return "torus4";
        default: return "sphere";
    }
}

struct Backend;
using BackendPtr = std::shared_ptr<const Backend>;

struct Backend {
    BackendKind kind;
    int dim;    // real dimension 2n
    int band;   // torus: max Fourier mode per axis; sphere: SH degree L
    std::shared_ptr<const TorusGrid> torus;
    std::shared_ptr<const SphereGrid> sphere;

    static BackendPtr make(BackendKind k, int resolution) {
        auto b = std::make_shared<Backend>();
        b->kind = k;
        b->band = resolution;
        if (k == BackendKind::sphere) {
            b->dim = 2;
            b->sphere = std::make_shared<SphereGrid>(resolution);
        } else {
            b->dim = (k == BackendKind::torus2) ? 2 : 4;
            b->torus = std::make_shared<TorusGrid>(b->dim, resolution);
        }
        return b;
    }

    bool is_torus() const { return kind != BackendKind::sphere; }
    size_t nnodes() const { return is_torus() ? torus->nnodes() : sphere->nnodes(); }
    // components used for vectors / endomorphism rows
    int ncomp() const { return is_torus() ? dim : 3; }

    double quad_weight(size_t p) const {
        return is_torus() ? torus->cell_volume() : sphere->node_weights()[p];
    }
    // integral of a density against the reference volume form
    double integrate_density(const Vec& v) const {
        if (is_torus()) {
            double s = 0;
            for (double x : v) s += x;
            return s * torus->cell_volume();
        }
        return sphere->integrate(v);
    }
};

inline bool same_backend(const BackendPtr& a, const BackendPtr& b) { return a.get() == b.get(); }

// ---------------------------------------------------------------------------

struct ScalarField {
    BackendPtr b;
    Vec v;

    ScalarField() = default;
    explicit ScalarField(BackendPtr bk, double fill = 0.0) : b(std::move(bk)), v(b->nnodes(), fill) {}
    ScalarField(BackendPtr bk, Vec vals) : b(std::move(bk)), v(std::move(vals)) {
        require(v.size() == b->nnodes(), "ScalarField: size mismatch");
    }
    size_t size() const { return v.size(); }
};

struct VectorField {
    BackendPtr b;
    std::vector<Vec> c;  // ncomp() components

    VectorField() = default;
    explicit VectorField(BackendPtr bk) : b(std::move(bk)), c(b->ncomp(), Vec(b->nnodes(), 0.0)) {}
};

struct FormField {
    BackendPtr b;
    int degree = 0;
    std::vector<Vec> c;

    FormField() = default;
    FormField(BackendPtr bk, int k) : b(std::move(bk)), degree(k) {
        require(k >= 0 && k <= b->dim, "FormField: bad degree");
        int nc = b->is_torus() ? binom(b->dim, k) : (k == 1 ? 3 : 1);
        c.assign(nc, Vec(b->nnodes(), 0.0));
    }
    bool is_top() const { return degree == b->dim; }
};

struct EndoField {
    BackendPtr b;
    std::vector<Vec> c;  // row-major ncomp x ncomp

    EndoField() = default;
    explicit EndoField(BackendPtr bk) : b(std::move(bk)) {
        int n = b->ncomp();
        c.assign(static_cast<size_t>(n) * n, Vec(b->nnodes(), 0.0));
    }
    int n() const { return b->ncomp(); }
    double get(size_t p, int i, int j) const { return c[static_cast<size_t>(i) * n() + j][p]; }
    void set(size_t p, int i, int j, double x) { c[static_cast<size_t>(i) * n() + j][p] = x; }
};

// TM-valued 2-form. torus: components [pair * ncomp + out] over sorted pairs;
// sphere: the single vector factor W in area ⊗ W.
struct TangentValued2Form {
    BackendPtr b;
    std::vector<Vec> c;

    TangentValued2Form() = default;
    explicit TangentValued2Form(BackendPtr bk) : b(std::move(bk)) {
        int nc = b->is_torus() ? binom(b->dim, 2) * b->dim : 3;
        c.assign(nc, Vec(b->nnodes(), 0.0));
    }
};

// Torsion-free connection, stored as the symmetric deviation S^k_{ij} from the
// backend reference connection (flat partials / round Levi-Civita):
// ∇ = ∇_ref + S. Components [k * n*n + i*n + j], symmetric in (i,j).
struct ConnectionField {
    BackendPtr b;
    std::vector<Vec> c;

    ConnectionField() = default;
    explicit ConnectionField(BackendPtr bk) : b(std::move(bk)) {
        int n = b->ncomp();
        c.assign(static_cast<size_t>(n) * n * n, Vec(b->nnodes(), 0.0));
    }
    int n() const { return b->ncomp(); }
    double get(size_t p, int k, int i, int j) const {
        int n_ = n();
        return c[(static_cast<size_t>(k) * n_ + i) * n_ + j][p];
    }
    void set(size_t p, int k, int i, int j, double x) {
        int n_ = n();
        c[(static_cast<size_t>(k) * n_ + i) * n_ + j][p] = x;
    }
};

// ---------------------------------------------------------------------------
// elementwise helpers

template <typename F>
ScalarField map_scalar(const ScalarField& a, F&& f) {
    ScalarField r(a.b);
    for (size_t p = 0; p < a.v.size(); ++p) r.v[p] = f(a.v[p]);
    return r;
}

inline ScalarField operator+(const ScalarField& a, const ScalarField& b) {
    ScalarField r(a.b);
    for (size_t p = 0; p < a.v.size(); ++p) r.v[p] = a.v[p] + b.v[p];
    return r;
}
inline ScalarField operator-(const ScalarField& a, const ScalarField& b) {
    ScalarField r(a.b);
    for (size_t p = 0; p < a.v.size(); ++p) r.v[p] = a.v[p] - b.v[p];
    return r;
}
inline ScalarField operator*(double s, const ScalarField& a) {
    ScalarField r(a.b);
    for (size_t p = 0; p < a.v.size(); ++p) r.v[p] = s * a.v[p];
    return r;
}
inline ScalarField operator*(const ScalarField& a, const ScalarField& b) {
    ScalarField r(a.b);
    for (size_t p = 0; p < a.v.size(); ++p) r.v[p] = a.v[p] * b.v[p];
    return r;
}

template <typename Field>
Field lin(double sa, const Field& a, double sb, const Field& b) {
    Field r = a;
    for (size_t k = 0; k < r.c.size(); ++k)
        for (size_t p = 0; p < r.c[k].size(); ++p) r.c[k][p] = sa * a.c[k][p] + sb * b.c[k][p];
    return r;
}

template <typename Field>
Field scaled(double s, const Field& a) {
    Field r = a;
    for (auto& comp : r.c)
        for (auto& x : comp) x *= s;
    return r;
}

inline double max_abs_comp(const std::vector<Vec>& c) {
    double m = 0;
    for (const auto& comp : c) m = std::max(m, linf(comp));
    return m;
}

} // namespace kml
