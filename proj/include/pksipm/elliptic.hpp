#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "error.hpp"
#include "field.hpp"
#include "geometry.hpp"
#include "multigrid.hpp"

namespace pksipm {

enum class BC { dirichlet_zero, neumann_zero_flux };

inline const char* to_string(BC bc) { return bc == BC::dirichlet_zero ? "dirichlet_zero" : "neumann_zero_flux"; }

// Integer stencil K with -Laplacian = K / dx^2. A Dirichlet boundary face puts
// the zero at the face midpoint, which doubles the face weight.
inline CsrMatrix assemble_stiffness(const GridMask& m, BC bc) {
    CsrMatrix K;
    K.n = m.size();
    K.row_ptr.assign(K.n + 1, 0);
    K.col.reserve(5 * K.n);
    K.val.reserve(5 * K.n);
    for (std::size_t i = 0; i < K.n; ++i) {
        double diag = 0.0;
        std::int64_t nb[4];
        for (int d = 0; d < 4; ++d) {
            nb[d] = m.neighbour(i, d);
            if (nb[d] != GridMask::none) diag += 1.0;
            else if (bc == BC::dirichlet_zero) diag += 2.0;
        }
        // columns in increasing order: south, west, self, east, north
        const std::int64_t order[5] = {nb[3], nb[1], static_cast<std::int64_t>(i), nb[0], nb[2]};
        for (std::int64_t j : order) {
            if (j == GridMask::none) continue;
            K.col.push_back(static_cast<std::uint32_t>(j));
            K.val.push_back(j == static_cast<std::int64_t>(i) ? diag : -1.0);
        }
        K.row_ptr[i + 1] = K.col.size();
    }
    K.locate_diagonal();
    return K;
}

inline std::vector<std::pair<std::int64_t, std::int64_t>> cell_coords(const GridMask& m) {
    std::vector<std::pair<std::int64_t, std::int64_t>> xy(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) xy[i] = {m.col_of(i), static_cast<std::int64_t>(m.row_of(i))};
    return xy;
}

inline ScalarField laplacian(const ScalarField& f, BC bc) {
    const auto& m = *f.mask;
    const double inv = 1.0 / (m.cell_size() * m.cell_size());
    ScalarField out(f.mask);
    for (std::size_t i = 0; i < m.size(); ++i) {
        double s = 0.0;
        for (int d = 0; d < 4; ++d) {
            const auto j = m.neighbour(i, d);
            if (j != GridMask::none) s += f[static_cast<std::size_t>(j)] - f[i];
            else if (bc == BC::dirichlet_zero) s -= 2.0 * f[i];
        }
        out[i] = s * inv;
    }
    return out;
}

struct PoissonProblem {
    MaskPtr mask;
    ScalarField rhs;
    BC bc = BC::dirichlet_zero;
    double tol = 1e-10;
    int max_iter = 0;  // 0 selects 10 * sqrt(cell count)
    // Neumann only: remove the mean of rhs instead of rejecting it.
    bool project_mean = false;
};

struct PoissonSolution {
    ScalarField value;
    double residual = 0.0;
    int iterations = 0;
};

inline int default_max_iter(std::size_t n) {
    return std::max(50, static_cast<int>(std::ceil(10.0 * std::sqrt(static_cast<double>(n)))));
}

// Reusable solver for -Laplacian u = rhs (and for beta*u - alpha*Laplacian u = rhs)
// on one mask. Not thread-safe: each thread needs its own instance.
class EllipticSolver {
public:
    EllipticSolver(MaskPtr mask, BC bc)
        : mask_(std::move(mask)), bc_(bc), mg_(assemble_stiffness(*mask_, bc), cell_coords(*mask_)) {
        mg_.set_coefficients(0.0, 1.0, bc_ == BC::neumann_zero_flux);
    }

    const MaskPtr& mask() const { return mask_; }
    BC bc() const { return bc_; }

    // Solves (beta*I + alpha*K) x = b in stencil units; x holds the initial guess.
    CgResult solve_raw(const std::vector<double>& b, std::vector<double>& x, double beta, double alpha, double tol,
                       int max_iter) {
        const bool singular = (beta == 0.0 && bc_ == BC::neumann_zero_flux);
        if (beta != beta_ || alpha != alpha_) {
            mg_.set_coefficients(beta, alpha, singular);
            beta_ = beta;
            alpha_ = alpha;
        }
        const auto res = pcg(mg_, b, x, tol, max_iter, singular);
        ++stats_.solves;
        stats_.iterations += res.iterations;
        return res;
    }

    struct Stats {
        long solves = 0;
        long iterations = 0;
    };
    const Stats& stats() const { return stats_; }

    // -Laplacian u = rhs. guess (optional) warm-starts the iteration.
    PoissonSolution solve(const ScalarField& rhs, double tol = 1e-10, int max_iter = 0, bool project_mean = false,
                          const ScalarField* guess = nullptr) {
        if (rhs.mask != mask_ && !rhs.mask->same_layout(*mask_)) throw ShapeError("rhs lives on a different mask");
        const std::size_t n = mask_->size();
        std::vector<double> b = rhs.values;
        if (bc_ == BC::neumann_zero_flux) {
            double s = 0.0, a = 0.0;
            for (double v : b) { s += v; a += std::abs(v); }
            if (project_mean) {
                for (auto& v : b) v -= s / static_cast<double>(n);
            } else if (std::abs(s) > 1e-12 * a) {
                throw CompatibilityError("Neumann right-hand side is not mean-zero");
            }
        }
        const double h2 = mask_->cell_size() * mask_->cell_size();
        for (auto& v : b) v *= h2;
        std::vector<double> x = guess ? guess->values : std::vector<double>(n, 0.0);
        if (x.size() != n) throw ShapeError("initial guess has the wrong size");
        const int iters = max_iter > 0 ? max_iter : default_max_iter(n);
        const auto res = solve_raw(b, x, 0.0, 1.0, tol, iters);
        if (!res.converged) throw ConvergenceError("elliptic solve did not converge", res.residual, res.iterations);
        PoissonSolution sol{ScalarField(mask_, std::move(x)), res.residual, res.iterations};
        return sol;
    }

private:
    MaskPtr mask_;
    BC bc_;
    AggregationMultigrid mg_;
    double beta_ = 0.0, alpha_ = 1.0;
    Stats stats_;
};

inline PoissonSolution solve(const PoissonProblem& p) {
    if (!p.mask) throw ShapeError("problem has no mask");
    if (p.rhs.mask != p.mask && !p.rhs.mask->same_layout(*p.mask)) throw ShapeError("rhs lives on a different mask");
    EllipticSolver s(p.mask, p.bc);
    return s.solve(p.rhs, p.tol, p.max_iter, p.project_mean);
}

// ||g||_{H^-1_0} = sqrt(<g, (-Delta_D)^{-1} g>).
inline double hminus1_norm(EllipticSolver& dirichlet, const ScalarField& g, double tol = 1e-12) {
    if (dirichlet.bc() != BC::dirichlet_zero) throw ParameterError("hminus1_norm needs a Dirichlet solver");
    bool zero = true;
    for (double v : g.values) if (v != 0.0) { zero = false; break; }
    if (zero) return 0.0;
    const auto psi = dirichlet.solve(g, tol);
    return std::sqrt(std::max(0.0, inner(g, psi.value)));
}

inline double hminus1_norm(const MaskPtr& mask, const ScalarField& g, double tol = 1e-12) {
    EllipticSolver s(mask, BC::dirichlet_zero);
    return hminus1_norm(s, g, tol);
}

// Normal velocities on the east and north face of every cell; boundary faces
// carry exactly zero.
struct FaceVelocity {
    std::vector<double> east;
    std::vector<double> north;
};

// Stream function at the lower-left corner of cell (column k, mask row r):
// average of the four adjacent cells, zero when any of them lies outside.
inline double node_value(const GridMask& m, const std::vector<double>& psi, std::int64_t k, std::int64_t r) {
    const std::int64_t a = m.index(k - 1, r - 1), b = m.index(k, r - 1), c = m.index(k - 1, r), d = m.index(k, r);
    if (a == GridMask::none || b == GridMask::none || c == GridMask::none || d == GridMask::none) return 0.0;
    return 0.25 * (psi[static_cast<std::size_t>(a)] + psi[static_cast<std::size_t>(b)] +
                   psi[static_cast<std::size_t>(c)] + psi[static_cast<std::size_t>(d)]);
}

// u = curl-perp of psi evaluated on faces: u1 = -d2 psi, u2 = d1 psi.
inline FaceVelocity face_velocity_from_stream(const GridMask& m, const std::vector<double>& psi) {
    FaceVelocity u;
    u.east.assign(m.size(), 0.0);
    u.north.assign(m.size(), 0.0);
    const double inv = 1.0 / m.cell_size();
    for (std::size_t i = 0; i < m.size(); ++i) {
        const std::int64_t k = m.col_of(i), r = static_cast<std::int64_t>(m.row_of(i));
        if (m.east(i) != GridMask::none)
            u.east[i] = -(node_value(m, psi, k + 1, r + 1) - node_value(m, psi, k + 1, r)) * inv;
        if (m.north(i) != GridMask::none)
            u.north[i] = (node_value(m, psi, k + 1, r + 1) - node_value(m, psi, k, r + 1)) * inv;
    }
    return u;
}

inline FaceVelocity velocity_biot_savart(EllipticSolver& dirichlet, const ScalarField& rho, double g,
                                         double tol = 1e-10, std::vector<double>* psi_out = nullptr,
                                         const std::vector<double>* psi_guess = nullptr) {
    const auto& m = *rho.mask;
    if (g == 0.0) {
        if (psi_out) psi_out->assign(m.size(), 0.0);
        return FaceVelocity{std::vector<double>(m.size(), 0.0), std::vector<double>(m.size(), 0.0)};
    }
    ScalarField rhs = d1(rho);
    for (auto& v : rhs.values) v *= g;
    ScalarField guess;
    if (psi_guess && psi_guess->size() == m.size()) guess = ScalarField(rho.mask, *psi_guess);
    const auto psi = dirichlet.solve(rhs, tol, 0, false, guess.mask ? &guess : nullptr);
    if (psi_out) *psi_out = psi.value.values;
    return face_velocity_from_stream(m, psi.value.values);
}

inline FaceVelocity velocity_biot_savart(const MaskPtr& mask, const ScalarField& rho, double g, double tol = 1e-10) {
    EllipticSolver s(mask, BC::dirichlet_zero);
    return velocity_biot_savart(s, rho, g, tol);
}

// Net outflow of each cell, (sum of outward normal velocities) * dx.
inline std::vector<double> divergence(const GridMask& m, const FaceVelocity& u) {
    std::vector<double> div(m.size(), 0.0);
    const double dx = m.cell_size();
    for (std::size_t i = 0; i < m.size(); ++i) {
        div[i] += (u.east[i] + u.north[i]) * dx;
        if (auto w = m.west(i); w != GridMask::none) div[i] -= u.east[static_cast<std::size_t>(w)] * dx;
        if (auto s = m.south(i); s != GridMask::none) div[i] -= u.north[static_cast<std::size_t>(s)] * dx;
    }
    return div;
}

}  // namespace pksipm
