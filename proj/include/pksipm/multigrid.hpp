#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace pksipm {

struct CsrMatrix {
    std::size_t n = 0;
    std::vector<std::size_t> row_ptr{0};
    std::vector<std::uint32_t> col;
    std::vector<double> val;
    std::vector<std::size_t> diag_pos;

    void multiply(const double* x, double* y) const {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) s += val[p] * x[col[p]];
            y[i] = s;
        }
    }

    void locate_diagonal() {
        diag_pos.assign(n, static_cast<std::size_t>(-1));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p)
                if (col[p] == i) diag_pos[i] = p;
    }

    // Builds from unsorted triplets, summing duplicates.
    static CsrMatrix from_triplets(std::size_t n, std::vector<std::pair<std::pair<std::size_t, std::size_t>, double>> t) {
        std::sort(t.begin(), t.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        CsrMatrix m;
        m.n = n;
        m.row_ptr.assign(n + 1, 0);
        for (std::size_t k = 0; k < t.size();) {
            std::size_t e = k;
            double s = 0.0;
            while (e < t.size() && t[e].first == t[k].first) s += t[e++].second;
            m.col.push_back(static_cast<std::uint32_t>(t[k].first.second));
            m.val.push_back(s);
            ++m.row_ptr[t[k].first.first + 1];
            k = e;
        }
        for (std::size_t i = 0; i < n; ++i) m.row_ptr[i + 1] += m.row_ptr[i];
        m.locate_diagonal();
        return m;
    }
};

// Aggregation multigrid over a masked Cartesian grid. Each level keeps the
// Galerkin mass (diagonal) and stiffness parts separately so the operator
// beta*M + alpha*K can be re-weighted without rebuilding the hierarchy.
class AggregationMultigrid {
public:
    struct Level {
        CsrMatrix K;
        std::vector<double> M;   // diagonal mass: aggregate sizes
        CsrMatrix A;             // beta*M + alpha*K with K's pattern
        std::vector<double> inv_diag;
        std::vector<std::size_t> parent;  // fine index -> coarse index (empty on the coarsest level)
        std::size_t n_coarse = 0;
        mutable std::vector<double> x, b, r;
    };

    AggregationMultigrid() = default;

    // coords: (column, row) integer position of each fine unknown.
    AggregationMultigrid(CsrMatrix K0, const std::vector<std::pair<std::int64_t, std::int64_t>>& coords,
                         std::size_t coarsest = 160) {
        std::vector<std::pair<std::int64_t, std::int64_t>> xy = coords;
        Level lv;
        lv.K = std::move(K0);
        lv.M.assign(lv.K.n, 1.0);
        levels_.push_back(std::move(lv));
        while (levels_.back().K.n > coarsest) {
            auto& fine = levels_.back();
            std::unordered_map<std::int64_t, std::size_t> ids;
            std::vector<std::pair<std::int64_t, std::int64_t>> cxy;
            fine.parent.resize(fine.K.n);
            for (std::size_t i = 0; i < fine.K.n; ++i) {
                const std::int64_t cx = floor_div2(xy[i].first), cy = floor_div2(xy[i].second);
                const std::int64_t key = (cy << 32) ^ (cx & 0xffffffffLL);
                auto [it, fresh] = ids.try_emplace(key, cxy.size());
                if (fresh) cxy.emplace_back(cx, cy);
                fine.parent[i] = it->second;
            }
            const std::size_t nc = cxy.size();
            if (nc * 10 > fine.K.n * 9) {  // aggregation stalled
                fine.parent.clear();
                break;
            }
            fine.n_coarse = nc;
            Level coarse;
            std::vector<std::pair<std::pair<std::size_t, std::size_t>, double>> trip;
            trip.reserve(fine.K.val.size());
            for (std::size_t i = 0; i < fine.K.n; ++i)
                for (std::size_t p = fine.K.row_ptr[i]; p < fine.K.row_ptr[i + 1]; ++p)
                    trip.push_back({{fine.parent[i], fine.parent[fine.K.col[p]]}, fine.K.val[p]});
            for (std::size_t c = 0; c < nc; ++c) trip.push_back({{c, c}, 0.0});  // keep the diagonal in the pattern
            coarse.K = CsrMatrix::from_triplets(nc, std::move(trip));
            coarse.M.assign(nc, 0.0);
            for (std::size_t i = 0; i < fine.K.n; ++i) coarse.M[fine.parent[i]] += fine.M[i];
            levels_.push_back(std::move(coarse));
            xy = std::move(cxy);
        }
        for (auto& l : levels_) {
            l.x.assign(l.K.n, 0.0);
            l.b.assign(l.K.n, 0.0);
            l.r.assign(l.K.n, 0.0);
        }
    }

    // Sets A = beta*M + alpha*K on every level; singular marks a constant null space.
    void set_coefficients(double beta, double alpha, bool singular) {
        singular_ = singular;
        for (auto& l : levels_) {
            if (l.A.n != l.K.n) l.A = l.K;  // pattern is shared with K, only values change
            for (std::size_t p = 0; p < l.K.val.size(); ++p) l.A.val[p] = alpha * l.K.val[p];
            l.inv_diag.resize(l.A.n);
            for (std::size_t i = 0; i < l.A.n; ++i) {
                const double d = (l.A.val[l.A.diag_pos[i]] += beta * l.M[i]);
                l.inv_diag[i] = d != 0.0 ? 1.0 / d : 0.0;
            }
        }
        const auto& c = levels_.back().A;
        Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c.n), static_cast<Eigen::Index>(c.n));
        for (std::size_t i = 0; i < c.n; ++i)
            for (std::size_t p = c.row_ptr[i]; p < c.row_ptr[i + 1]; ++p)
                dense(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c.col[p])) += c.val[p];
        if (singular) {
            const double shift = dense.diagonal().mean() / static_cast<double>(c.n);
            dense.array() += shift;
        }
        coarse_ = Eigen::LLT<Eigen::MatrixXd>(dense);
        if (coarse_.info() != Eigen::Success) throw ConvergenceError("coarse multigrid factorization failed", 0.0, 0);
    }

    const CsrMatrix& op() const { return levels_.front().A; }
    std::size_t levels() const { return levels_.size(); }

    // z = B^{-1} r with one symmetric V-cycle.
    void apply(const double* r, double* z) const {
        auto& l0 = levels_.front();
        std::copy(r, r + l0.A.n, l0.b.begin());
        vcycle(0);
        std::copy(l0.x.begin(), l0.x.end(), z);
    }

private:
    static std::int64_t floor_div2(std::int64_t v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

    void vcycle(std::size_t k) const {
        const Level& l = levels_[k];
        const std::size_t n = l.A.n;
        if (k + 1 == levels_.size()) {
            Eigen::Map<const Eigen::VectorXd> b(l.b.data(), static_cast<Eigen::Index>(n));
            Eigen::VectorXd rhs = b;
            if (singular_) rhs.array() -= rhs.mean();
            Eigen::VectorXd x = coarse_.solve(rhs);
            if (singular_) x.array() -= x.mean();
            std::copy(x.data(), x.data() + n, l.x.begin());
            return;
        }
        std::fill(l.x.begin(), l.x.end(), 0.0);
        gauss_seidel(l, true);
        // residual, restricted
        l.A.multiply(l.x.data(), l.r.data());
        const Level& c = levels_[k + 1];
        std::fill(c.b.begin(), c.b.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) c.b[l.parent[i]] += l.b[i] - l.r[i];
        vcycle(k + 1);
        for (std::size_t i = 0; i < n; ++i) l.x[i] += kCoarseWeight * c.x[l.parent[i]];
        gauss_seidel(l, false);
    }

    static void gauss_seidel(const Level& l, bool forward) {
        const auto& A = l.A;
        const std::size_t n = A.n;
        const std::size_t* rp = A.row_ptr.data();
        const std::uint32_t* col = A.col.data();
        const double* val = A.val.data();
        const double* inv = l.inv_diag.data();
        double* x = l.x.data();
        const double* b = l.b.data();
        // full row product, then the diagonal term is restored by the update
        auto relax = [&](std::size_t i) {
            double s = b[i];
            for (std::size_t p = rp[i]; p < rp[i + 1]; ++p) s -= val[p] * x[col[p]];
            x[i] += s * inv[i];
        };
        for (int sweep = 0; sweep < kSweeps; ++sweep) {
            if (forward)
                for (std::size_t i = 0; i < n; ++i) relax(i);
            else
                for (std::size_t i = n; i-- > 0;) relax(i);
        }
    }

    // Unsmoothed aggregation underestimates the coarse correction; an
    // over-weighting in [1.5, 2] is the standard remedy.
    static constexpr double kCoarseWeight = 1.8;
    static constexpr int kSweeps = 2;

    std::vector<Level> levels_;
    Eigen::LLT<Eigen::MatrixXd> coarse_;
    bool singular_ = false;
};

struct CgResult {
    double residual = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Preconditioned CG on op(). For singular (Neumann) systems the iterates are
// kept orthogonal to constants.
inline CgResult pcg(const AggregationMultigrid& mg, const std::vector<double>& b, std::vector<double>& x, double tol,
                    int max_iter, bool singular) {
    const auto& A = mg.op();
    const std::size_t n = A.n;
    auto project = [&](std::vector<double>& v) {
        if (!singular) return;
        const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
        for (auto& e : v) e -= m;
    };
    auto dot = [n](const std::vector<double>& a, const std::vector<double>& c) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += a[i] * c[i];
        return s;
    };
    CgResult res;
    const double bnorm = std::sqrt(dot(b, b));
    if (bnorm == 0.0) {
        std::fill(x.begin(), x.end(), 0.0);
        res.converged = true;
        return res;
    }
    std::vector<double> r(n), z(n), p(n), q(n);
    A.multiply(x.data(), q.data());
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - q[i];
    project(r);
    double rnorm = std::sqrt(dot(r, r));
    if (rnorm <= tol * bnorm) {
        res.residual = rnorm / bnorm;
        res.converged = true;
        return res;
    }
    mg.apply(r.data(), z.data());
    project(z);
    p = z;
    double rz = dot(r, z);
    for (int it = 1; it <= max_iter; ++it) {
        A.multiply(p.data(), q.data());
        const double pq = dot(p, q);
        if (!(pq > 0.0)) break;
        const double alpha = rz / pq;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        project(r);
        rnorm = std::sqrt(dot(r, r));
        res.iterations = it;
        res.residual = rnorm / bnorm;
        if (rnorm <= tol * bnorm) {
            res.converged = true;
            break;
        }
        mg.apply(r.data(), z.data());
        project(z);
        const double rz_new = dot(r, z);
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    if (!res.converged) res.residual = rnorm / bnorm;
    project(x);
    return res;
}

}  // namespace pksipm
