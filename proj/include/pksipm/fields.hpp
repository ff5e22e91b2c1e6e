#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "elliptic.hpp"
#include "error.hpp"
#include "field.hpp"

namespace pksipm {

struct Decomposition {
    std::vector<double> profile;  // row means
    ScalarField fluctuation;
    double mean = 0.0;
};

inline Decomposition decompose(const ScalarField& f) {
    const auto& m = *f.mask;
    Decomposition d;
    d.mean = exact_mean(f.values.data(), f.size());
    d.profile.resize(m.rows().size());
    d.fluctuation = ScalarField(f.mask);
    for (std::size_t r = 0; r < m.rows().size(); ++r) {
        const auto& row = m.rows()[r];
        const double* v = f.values.data() + row.offset;
        const double p = exact_mean(v, static_cast<std::size_t>(row.count));
        d.profile[r] = p;
        for (std::int32_t c = 0; c < row.count; ++c) d.fluctuation[row.offset + static_cast<std::size_t>(c)] = v[c] - p;
    }
    return d;
}

// The stratified component as a field on the mask.
inline ScalarField profile_field(const Decomposition& d) {
    const auto& m = *d.fluctuation.mask;
    ScalarField out(d.fluctuation.mask);
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = d.profile[m.row_of(i)];
    return out;
}

// ||fbar - f_M||_2^2 restricted to mask rows [r0, r1).
inline double stratified_l2sq(const Decomposition& d, std::size_t r0, std::size_t r1) {
    const auto& m = *d.fluctuation.mask;
    double s = 0.0;
    for (std::size_t r = r0; r < r1; ++r) {
        const double e = d.profile[r] - d.mean;
        s += static_cast<double>(m.rows()[r].count) * e * e;
    }
    return s * m.cell_area();
}

inline double stratified_l2sq(const Decomposition& d) { return stratified_l2sq(d, 0, d.profile.size()); }

inline double unstratified_l2sq(const Decomposition& d) {
    double s = 0.0;
    for (double v : d.fluctuation.values) s += v * v;
    return s * d.fluctuation.mask->cell_area();
}

inline double lp_norm_centered(const ScalarField& f, double center, double p) {
    double s = 0.0;
    for (double v : f.values) s += std::pow(std::abs(v - center), p);
    return std::pow(s * f.mask->cell_area(), 1.0 / p);
}

// Squared L2 norms of the face-difference derivatives (interior faces only).
inline double d1_face_l2sq(const ScalarField& f) {
    const auto& m = *f.mask;
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (auto e = m.east(i); e != GridMask::none) { const double d = f[static_cast<std::size_t>(e)] - f[i]; s += d * d; }
    return s;
}

inline double d2_face_l2sq(const ScalarField& f) {
    const auto& m = *f.mask;
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (auto n = m.north(i); n != GridMask::none) { const double d = f[static_cast<std::size_t>(n)] - f[i]; s += d * d; }
    return s;
}

struct NormBundle {
    double mean = 0.0;
    double l1 = 0.0;          // ||f - f_M||_1
    double l2sq = 0.0;        // Gamma
    double h1 = 0.0;          // ||grad f||_2
    double hminus1_d1 = 0.0;  // ||d1 f||_{H^-1_0}
    double lambda = 0.0;
    std::vector<double> sectional_l2sq;
    bool degenerate = false;
};

inline NormBundle norms(const ScalarField& f, const Decomposition& d, EllipticSolver& dirichlet) {
    const auto& m = *f.mask;
    NormBundle nb;
    nb.mean = d.mean;
    double l1 = 0.0, l2 = 0.0;
    for (double v : f.values) {
        const double e = v - d.mean;
        l1 += std::abs(e);
        l2 += e * e;
    }
    nb.l1 = l1 * m.cell_area();
    nb.l2sq = l2 * m.cell_area();
    nb.h1 = std::sqrt(grad_l2sq(f));
    nb.hminus1_d1 = hminus1_norm(dirichlet, d1(f));
    nb.sectional_l2sq.resize(m.rows().size());
    double smax = 0.0;
    for (std::size_t r = 0; r < m.rows().size(); ++r) {
        const auto& row = m.rows()[r];
        double s = 0.0;
        for (std::int32_t c = 0; c < row.count; ++c) {
            const double v = d.fluctuation[row.offset + static_cast<std::size_t>(c)];
            s += v * v;
        }
        nb.sectional_l2sq[r] = s * m.cell_size();
        smax = std::max(smax, nb.sectional_l2sq[r]);
    }
    if (nb.l2sq > 0.0) {
        nb.lambda = smax / std::pow(nb.l2sq, 1.5);
    } else {
        nb.degenerate = true;
        nb.lambda = 0.0;
    }
    return nb;
}

inline NormBundle norms(const ScalarField& f, EllipticSolver& dirichlet) { return norms(f, decompose(f), dirichlet); }

inline NormBundle norms(const ScalarField& f) {
    EllipticSolver s(f.mask, BC::dirichlet_zero);
    return norms(f, s);
}

struct Proportions {
    double stratified_frac = 0.0;
    double unstratified_frac = 0.0;
};

inline Proportions proportions(const Decomposition& d) {
    const double s = stratified_l2sq(d), u = unstratified_l2sq(d);
    const double gamma = s + u;
    if (!(gamma > 0.0)) throw DegenerateError("proportions undefined for a constant field");
    return {s / gamma, u / gamma};
}

}  // namespace pksipm
