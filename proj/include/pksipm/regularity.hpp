#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "elliptic.hpp"
#include "error.hpp"
#include "field.hpp"
#include "fields.hpp"
#include "pksipm.hpp"

namespace pksipm {

// Sampled (X, Y, Z) on increasing times. For a solver trace X is the variance,
// Y the squared gradient norm and Z the squared H^-1_0 norm of d1 rho.
struct OdeTrajectory {
    std::vector<double> times, X, Y, Z;

    std::size_t size() const { return times.size(); }

    void validate() const {
        const std::size_t n = times.size();
        if (X.size() != n || Y.size() != n || Z.size() != n) throw DataError("trajectory columns differ in length");
        if (n < 3) throw DataError("trajectory needs at least 3 samples");
        for (std::size_t i = 0; i < n; ++i) {
            if (!(X[i] >= 0.0) || !(Y[i] >= 0.0) || !(Z[i] >= 0.0))
                throw DataError("trajectory values must be nonnegative and finite");
            if (i > 0 && !(times[i] > times[i - 1])) throw DataError("trajectory times must increase strictly");
        }
    }

    static OdeTrajectory from_trace(const std::vector<TraceRow>& tr) {
        OdeTrajectory t;
        for (const auto& r : tr) {
            t.times.push_back(r.t);
            t.X.push_back(std::max(0.0, r.gamma));
            t.Y.push_back(std::max(0.0, r.grad_l2sq));
            t.Z.push_back(std::max(0.0, r.hminus1_d1_sq));
        }
        return t;
    }
};

struct OdeConstants {
    double a1 = 1.0, a2 = 1.0, a3 = 1.0, a4 = 1.0, a5 = 1.0;
    double p = 3.0 / 7.0, q = 4.0 / 987.0, r = 2.0 / 3.0, s = 3.0 / 8.0;

    void validate() const {
        for (double a : {a1, a2, a3, a4, a5})
            if (!(a > 0.0) || !std::isfinite(a)) throw ParameterError("constants a1..a5 must be positive and finite");
        if (!(p > 0.0 && p < 0.5)) throw ParameterError("p must lie in (0, 1/2)");
        if (!(q > 0.0 && q < 1.0)) throw ParameterError("q must lie in (0, 1)");
        if (!(r > 0.0 && r < 1.0)) throw ParameterError("r must lie in (0, 1)");
        if (!(s > 0.0 && s < 0.5)) throw ParameterError("s must lie in (0, 1/2)");
    }
};

struct BoundConstants {
    double A_star = 0.0;
    double B_star = 0.0;   // may overflow to inf; log_B_star stays finite
    double log_B_star = 0.0;
    double C2 = 0.0;       // e^B_star
    double C3 = 0.0;       // e^A_star
    // Lower bounds on A from each largeness condition, in proof order.
    std::array<double, 4> a_conditions{};
};

struct PremiseResult {
    bool holds = true;
    double margin = -std::numeric_limits<double>::infinity();  // worst lhs - rhs; > 0 means violated
    double at_time = 0.0;
    std::size_t checked = 0;  // sample points or windows examined
};

struct OdeVerdict {
    std::array<PremiseResult, 4> premises;
    BoundConstants bounds;
    bool premises_hold = false;
    bool conclusion_holds = false;
    bool probative = false;  // the conclusion only binds when every premise holds
    double sup_X = 0.0;
    double bound = 0.0;      // C2 * max(X(0), C3), possibly inf
    double log_bound = 0.0;
};

namespace detail {

// Maximal index runs [b, e) with X >= 1, at least two samples long.
inline std::vector<std::pair<std::size_t, std::size_t>> runs_above_one(const std::vector<double>& X) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t i = 0;
    while (i < X.size()) {
        if (X[i] < 1.0) { ++i; continue; }
        std::size_t j = i;
        while (j < X.size() && X[j] >= 1.0) ++j;
        if (j - i >= 2) out.emplace_back(i, j);
        i = j;
    }
    return out;
}

// Centred derivative at interior samples, one-sided at run ends. band is the
// discretisation allowance 3 |second difference| / dt.
struct Derivative {
    double value = 0.0;
    double band = 0.0;
};

inline Derivative derivative(const std::vector<double>& t, const std::vector<double>& X, std::size_t i, std::size_t b,
                             std::size_t e) {
    Derivative d;
    if (i > b && i + 1 < e) {
        const double h0 = t[i] - t[i - 1], h1 = t[i + 1] - t[i];
        d.value = (X[i + 1] - X[i - 1]) / (h0 + h1);
        const double second = X[i + 1] - 2.0 * X[i] + X[i - 1];
        d.band = 3.0 * std::abs(second) / (0.5 * (h0 + h1));
    } else if (i + 1 < e) {
        d.value = (X[i + 1] - X[i]) / (t[i + 1] - t[i]);
        if (i + 2 < e) d.band = 3.0 * std::abs(X[i + 2] - 2.0 * X[i + 1] + X[i]) / (t[i + 1] - t[i]);
    } else {
        d.value = (X[i] - X[i - 1]) / (t[i] - t[i - 1]);
        if (i >= b + 2) d.band = 3.0 * std::abs(X[i] - 2.0 * X[i - 1] + X[i - 2]) / (t[i] - t[i - 1]);
    }
    return d;
}

inline std::vector<double> cumulative_trapezoid(const std::vector<double>& t, const std::vector<double>& v,
                                                std::size_t b, std::size_t e) {
    std::vector<double> c(e - b, 0.0);
    for (std::size_t i = b + 1; i < e; ++i) c[i - b] = c[i - 1 - b] + 0.5 * (v[i] + v[i - 1]) * (t[i] - t[i - 1]);
    return c;
}

inline void note(PremiseResult& p, double excess, double t) {
    ++p.checked;
    if (excess > p.margin) {
        p.margin = excess;
        p.at_time = t;
    }
}

}  // namespace detail

inline std::array<PremiseResult, 4> check_premises(const OdeTrajectory& tr, const OdeConstants& k) {
    tr.validate();
    k.validate();
    std::array<PremiseResult, 4> out;
    const std::size_t n = tr.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double X = tr.X[i], Y = tr.Y[i], Z = tr.Z[i];
        detail::note(out[0], X - k.a1 * std::sqrt(Y), tr.times[i]);
        detail::note(out[1], X - (k.a2 * std::pow(Y, k.p) + k.a3 * std::pow(Z, k.q) * std::pow(Y, 0.5 * (1.0 - k.q))),
                     tr.times[i]);
    }
    for (auto [b, e] : detail::runs_above_one(tr.X)) {
        for (std::size_t i = b; i < e; ++i) {
            const auto d = detail::derivative(tr.times, tr.X, i, b, e);
            detail::note(out[2], d.value - (k.a4 * tr.X[i] * tr.X[i] - tr.Y[i]) - d.band, tr.times[i]);
        }
        std::vector<double> ys(e - b), xr(e - b);
        for (std::size_t i = b; i < e; ++i) {
            ys[i - b] = std::pow(tr.Y[i], k.s);
            xr[i - b] = std::pow(tr.X[i], k.r);
        }
        std::vector<double> tt(tr.times.begin() + static_cast<std::ptrdiff_t>(b),
                               tr.times.begin() + static_cast<std::ptrdiff_t>(e));
        const auto cz = detail::cumulative_trapezoid(tr.times, tr.Z, b, e);
        const auto cy = detail::cumulative_trapezoid(tt, ys, 0, e - b);
        const auto cx = detail::cumulative_trapezoid(tt, xr, 0, e - b);
        for (std::size_t i = 0; i < e - b; ++i)
            for (std::size_t j = i + 1; j < e - b; ++j) {
                const double lhs = cz[j] - cz[i];
                const double rhs = k.a5 * (1.0 + (cy[j] - cy[i]) + (cx[j] - cx[i]));
                detail::note(out[3], lhs - rhs, tt[j]);
            }
    }
    for (auto& p : out) p.holds = !(p.margin > 0.0);
    return out;
}

// Largeness conditions on A, each as a lower bound, evaluated in logs so that
// the 1/q power cannot overflow.
inline std::array<double, 4> a_lower_bounds(const OdeConstants& k) {
    const double theta = std::max(k.s, 0.5 * k.r);
    const double la1 = std::log(k.a1);
    const double log_K = std::log(2.0 * k.a1 * k.a3 * k.a4) / k.q + std::log(k.a5);
    return {
        la1 + std::log(2.0 * k.a1 * k.a2 * k.a4) / (1.0 - 2.0 * k.p),
        la1,
        (std::log(4.0) + log_K + std::log1p(std::pow(k.a1, k.r)) + (1.0 - 2.0 * theta) * la1) / (1.0 - 2.0 * theta),
        1.0,
    };
}

inline bool a_is_large_enough(const OdeConstants& k, double A) {
    for (double b : a_lower_bounds(k))
        if (A < b) return false;
    return true;
}

inline BoundConstants bound_constants(const OdeConstants& k) {
    k.validate();
    BoundConstants bc;
    bc.a_conditions = a_lower_bounds(k);
    // The predicate is monotone in A, so bisect between a failing and a passing value.
    double lo = 0.0, hi = 1.0;
    while (!a_is_large_enough(k, hi)) {
        lo = hi;
        hi *= 2.0;
    }
    while (hi - lo > 1e-9 * std::max(1.0, hi)) {
        const double mid = 0.5 * (lo + hi);
        (a_is_large_enough(k, mid) ? hi : lo) = mid;
    }
    bc.A_star = hi;
    bc.log_B_star = std::log(4.0) + std::log(2.0 * k.a1 * k.a3 * k.a4) / k.q + std::log(k.a1 * k.a4 * k.a5);
    bc.B_star = std::exp(bc.log_B_star);
    bc.C2 = std::exp(bc.B_star);
    bc.C3 = std::exp(bc.A_star);
    return bc;
}

// sup X <= C2 max(X(0), C3), compared as logs.
inline bool check_conclusion(const OdeTrajectory& tr, OdeVerdict& v) {
    if (tr.X.empty()) throw DataError("empty trajectory");
    v.sup_X = *std::max_element(tr.X.begin(), tr.X.end());
    const double log_rhs_base = std::max(tr.X.front() > 0.0 ? std::log(tr.X.front()) : -INFINITY, v.bounds.A_star);
    v.log_bound = v.bounds.B_star + log_rhs_base;
    v.bound = std::exp(v.log_bound);
    v.conclusion_holds = v.sup_X <= 0.0 || std::log(v.sup_X) <= v.log_bound;
    v.probative = v.premises_hold;
    return v.conclusion_holds;
}

inline OdeVerdict verify(const OdeTrajectory& tr, const OdeConstants& k) {
    OdeVerdict v;
    v.premises = check_premises(tr, k);
    v.premises_hold = std::all_of(v.premises.begin(), v.premises.end(), [](const auto& p) { return p.holds; });
    v.bounds = bound_constants(k);
    check_conclusion(tr, v);
    return v;
}

// Combined-inequality constant to premise-(2) constants: ||rho - rho_M||_1 <= 2 mass.
inline std::pair<double, double> premise2_from_combined(double combined_constant, double mass) {
    const double l1 = 2.0 * mass;
    return {combined_constant * std::pow(l1, 8.0 / 7.0), combined_constant * std::pow(l1, 983.0 / 987.0)};
}

struct FitOptions {
    // Constant of the combined inequality (e.g. the largest ratio reported by
    // the Nash audit). When absent it is fitted from the trajectory.
    std::optional<double> combined_constant;
    double mass = 0.0;  // required for premise (2)
    double floor = 1e-12;  // keeps fitted constants positive
};

struct FittedConstants {
    OdeConstants constants;
    double combined_constant = 0.0;
    bool combined_from_audit = false;
};

// Smallest constants making each premise hold on tr (premise (3) with the same
// tolerance band as check_premises).
inline FittedConstants fit_constants(const OdeTrajectory& tr, const FitOptions& opt) {
    tr.validate();
    if (!(opt.mass > 0.0)) throw ParameterError("fit_constants needs the total mass");
    FittedConstants f;
    auto& k = f.constants;
    const double fl = opt.floor;
    double a1 = fl, c = fl;
    const auto [u2, u3] = premise2_from_combined(1.0, opt.mass);
    for (std::size_t i = 0; i < tr.size(); ++i) {
        const double X = tr.X[i], Y = tr.Y[i], Z = tr.Z[i];
        if (X <= 0.0) continue;
        if (!(Y > 0.0)) throw DataError("X > 0 with zero gradient: premise (1) cannot hold");
        a1 = std::max(a1, X / std::sqrt(Y));
        c = std::max(c, X / (u2 * std::pow(Y, k.p) + u3 * std::pow(Z, k.q) * std::pow(Y, 0.5 * (1.0 - k.q))));
    }
    k.a1 = a1;
    f.combined_from_audit = opt.combined_constant.has_value();
    f.combined_constant = opt.combined_constant ? *opt.combined_constant : c;
    std::tie(k.a2, k.a3) = premise2_from_combined(f.combined_constant, opt.mass);

    double a4 = fl, a5 = fl;
    for (auto [b, e] : detail::runs_above_one(tr.X)) {
        for (std::size_t i = b; i < e; ++i) {
            const auto d = detail::derivative(tr.times, tr.X, i, b, e);
            a4 = std::max(a4, (d.value - d.band + tr.Y[i]) / (tr.X[i] * tr.X[i]));
        }
        std::vector<double> tt(tr.times.begin() + static_cast<std::ptrdiff_t>(b),
                               tr.times.begin() + static_cast<std::ptrdiff_t>(e));
        std::vector<double> ys(e - b), xr(e - b);
        for (std::size_t i = b; i < e; ++i) {
            ys[i - b] = std::pow(tr.Y[i], k.s);
            xr[i - b] = std::pow(tr.X[i], k.r);
        }
        const auto cz = detail::cumulative_trapezoid(tr.times, tr.Z, b, e);
        const auto cy = detail::cumulative_trapezoid(tt, ys, 0, e - b);
        const auto cx = detail::cumulative_trapezoid(tt, xr, 0, e - b);
        for (std::size_t i = 0; i < e - b; ++i)
            for (std::size_t j = i + 1; j < e - b; ++j)
                a5 = std::max(a5, (cz[j] - cz[i]) / (1.0 + (cy[j] - cy[i]) + (cx[j] - cx[i])));
    }
    k.a4 = a4;
    k.a5 = a5;
    // Equality cases would otherwise read as violations at roundoff level.
    for (double* a : {&k.a1, &k.a2, &k.a3, &k.a4, &k.a5}) *a *= 1.0 + 1e-9;
    return f;
}

// Standalone checks of the diffusion and chemotaxis power estimates on one field.
struct FunctionalAudit {
    double diffusion_lhs = 0.0;  // |int d2 f|
    double diffusion_rhs = 0.0;  // f_M^(1/4) ||grad f||^(3/4)
    double diffusion_ratio = 0.0;
    bool chemo_ran = false;
    std::string chemo_error;     // set when the nonnegativity precondition fails
    double chemo_lhs = 0.0;      // |int f d2 (-Delta_N)^-1 [f - f_M]|
    double chemo_rhs = 0.0;      // f_M^(2/3) ||f-f_M||^(4/3) + f_M^(5/3) ||f-f_M||^(1/3)
    double chemo_ratio = 0.0;
};

inline FunctionalAudit audit_functional_inequalities(const ScalarField& f, EllipticSolver& neumann,
                                                     double tol = 1e-10) {
    if (neumann.bc() != BC::neumann_zero_flux) throw ParameterError("functional audit needs a Neumann solver");
    const auto& m = *f.mask;
    FunctionalAudit a;
    const double fm = exact_mean(f.values.data(), f.size());
    const double grad = std::sqrt(grad_l2sq(f));
    a.diffusion_lhs = std::abs(integral_d2(f));
    a.diffusion_rhs = std::pow(std::max(fm, 0.0), 0.25) * std::pow(grad, 0.75);
    a.diffusion_ratio = a.diffusion_lhs == 0.0 ? 0.0 : a.diffusion_lhs / a.diffusion_rhs;

    const double lo = *std::min_element(f.values.begin(), f.values.end());
    if (lo < 0.0) {
        a.chemo_error = "chemotaxis estimate requires a nonnegative field";
        return a;
    }
    a.chemo_ran = true;
    double var = 0.0;
    ScalarField rhs(f.mask);
    for (std::size_t i = 0; i < m.size(); ++i) {
        rhs[i] = f[i] - fm;
        var += rhs[i] * rhs[i];
    }
    const double l2 = std::sqrt(var * m.cell_area());
    if (l2 == 0.0) return a;
    const auto c = neumann.solve(rhs, tol, 0, true).value;
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (auto n = m.north(i); n != GridMask::none) {
            const auto j = static_cast<std::size_t>(n);
            s += 0.5 * (f[i] + f[j]) * (c[j] - c[i]);
        }
    a.chemo_lhs = std::abs(s * m.cell_size());
    a.chemo_rhs = std::pow(fm, 2.0 / 3.0) * std::pow(l2, 4.0 / 3.0) + std::pow(fm, 5.0 / 3.0) * std::pow(l2, 1.0 / 3.0);
    a.chemo_ratio = a.chemo_lhs == 0.0 ? 0.0 : a.chemo_lhs / a.chemo_rhs;
    return a;
}

inline FunctionalAudit audit_functional_inequalities(const ScalarField& f, double tol = 1e-10) {
    EllipticSolver s(f.mask, BC::neumann_zero_flux);
    return audit_functional_inequalities(f, s, tol);
}

}  // namespace pksipm
