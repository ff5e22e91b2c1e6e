#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "elliptic.hpp"
#include "error.hpp"
#include "field.hpp"
#include "fields.hpp"
#include "geometry.hpp"

namespace pksipm {

enum class Inequality {
    classical_nash_2d,
    gns_2d,
    stratified_nash,
    unstratified_nash,
    combined_thm11,
    strat_caps,
    strat_bulk,
    below_lambda,
    above_lambda_inv,
    between_lambda,
};

inline constexpr std::array<const char*, 10> kInequalityNames = {
    "classical_nash_2d", "gns_2d",     "stratified_nash", "unstratified_nash", "combined_thm11",
    "strat_caps",        "strat_bulk", "below_lambda",    "above_lambda_inv",  "between_lambda"};

inline const char* to_string(Inequality q) { return kInequalityNames[static_cast<std::size_t>(q)]; }

inline Inequality parse_inequality(const std::string& s) {
    for (std::size_t i = 0; i < kInequalityNames.size(); ++i)
        if (s == kInequalityNames[i]) return static_cast<Inequality>(i);
    throw ParameterError("unknown inequality '" + s + "'");
}

inline bool is_conditional(Inequality q) { return static_cast<int>(q) >= static_cast<int>(Inequality::strat_caps); }

// The five unconditional inequalities, in report order.
inline std::vector<Inequality> theorem_level_inequalities() {
    return {Inequality::classical_nash_2d, Inequality::gns_2d, Inequality::stratified_nash,
            Inequality::unstratified_nash, Inequality::combined_thm11};
}

enum class Status { applicable, hypothesis_failed, degenerate };

inline const char* to_string(Status s) {
    switch (s) {
        case Status::applicable: return "applicable";
        case Status::hypothesis_failed: return "hypothesis_failed";
        default: return "degenerate";
    }
}

struct InequalityReport {
    Inequality name = Inequality::classical_nash_2d;
    double lhs = 0.0;
    std::vector<double> rhs_terms;
    double ratio = 0.0;
    Status status = Status::degenerate;
    std::map<std::string, double> metadata;
    // Per hypothesis, whether it held (conditional audits only).
    std::vector<std::pair<std::string, bool>> hypotheses;
};

// Stated exponents of the right-hand side factors of single-term inequalities.
struct FactorExponents {
    std::vector<std::string> factors;
    std::vector<double> exponents;
};

inline FactorExponents factor_exponents(Inequality q) {
    switch (q) {
        case Inequality::classical_nash_2d: return {{"l1", "grad_l2"}, {1.0, 1.0}};
        case Inequality::gns_2d: return {{"l2", "grad_l2"}, {2.0, 1.0}};
        case Inequality::stratified_nash: return {{"l2", "l1", "grad_l2"}, {1.0 / 3.0, 4.0 / 3.0, 1.0}};
        case Inequality::unstratified_nash:
            return {{"l2", "hminus1_d1", "l1", "grad_l2"}, {3.0 + 21.0 / 52.0, 1.0 / 52.0, 1.0, 1.0}};
        case Inequality::combined_thm11:
            return {{"l1", "grad_l2", "hminus1_d1"}, {8.0 / 7.0, 6.0 / 7.0, 8.0 / 987.0}};
        default: throw ParameterError(std::string("no factor exponents for ") + to_string(q));
    }
}

// Exponent record of the combined inequality: {8/7, 6/7} on the first term,
// {8/987, 983/987, 983/987} on the second.
inline std::array<double, 5> combined_exponent_record() {
    return {8.0 / 7.0, 6.0 / 7.0, 8.0 / 987.0, 983.0 / 987.0, 983.0 / 987.0};
}

// Domain data the conditional audits need.
struct NashContext {
    double height = 0.0;
    double eps_star = 0.0;
    GeometricConstants gc;

    static NashContext from(const DomainSpec& d, int samples = 20000) {
        return NashContext{d.height, d.eps_star, geometric_constants(d, samples)};
    }
};

// All norms of one field, computed once and shared by every audit.
struct FieldAnalysis {
    MaskPtr mask;
    Decomposition dec;
    NormBundle nb;
    double strat_l2sq = 0.0;    // ||fbar - f_M||_2^2
    double unstrat_l2sq = 0.0;  // ||ftilde||_2^2
    double fluct_l1 = 0.0;      // ||ftilde||_1
    double l3 = 0.0;            // ||f - f_M||_3
    double d1_l2 = 0.0;         // ||d1 f||_2 (face differences)
    double d2_l2 = 0.0;         // ||d2 f||_2 (face differences)
};

inline FieldAnalysis analyze(const ScalarField& f, EllipticSolver& dirichlet) {
    FieldAnalysis a;
    a.mask = f.mask;
    a.dec = decompose(f);
    a.nb = norms(f, a.dec, dirichlet);
    a.strat_l2sq = stratified_l2sq(a.dec);
    a.unstrat_l2sq = unstratified_l2sq(a.dec);
    double s = 0.0;
    for (double v : a.dec.fluctuation.values) s += std::abs(v);
    a.fluct_l1 = s * f.mask->cell_area();
    a.l3 = lp_norm_centered(f, a.dec.mean, 3.0);
    a.d1_l2 = std::sqrt(d1_face_l2sq(f));
    a.d2_l2 = std::sqrt(d2_face_l2sq(f));
    return a;
}

inline FieldAnalysis analyze(const ScalarField& f) {
    EllipticSolver s(f.mask, BC::dirichlet_zero);
    return analyze(f, s);
}

namespace detail {

inline void finish_ratio(InequalityReport& r) {
    double sum = 0.0;
    for (double t : r.rhs_terms) sum += t;
    if (r.lhs == 0.0) {
        r.ratio = 0.0;
    } else if (!(sum > 0.0) || !std::isfinite(sum) || !std::isfinite(r.lhs)) {
        r.status = Status::degenerate;
        r.ratio = 0.0;
    } else {
        r.ratio = r.lhs / sum;
    }
}

// Inequality hypotheses compare computed quantities that may coincide exactly
// in exact arithmetic (default kappa is built from the field); allow roundoff.
inline bool geq(double a, double b) { return a >= b * (1.0 - 1e-12) - 1e-300; }
inline bool leq(double a, double b) { return a <= b * (1.0 + 1e-12) + 1e-300; }

}  // namespace detail

inline InequalityReport audit(const FieldAnalysis& a, Inequality q) {
    if (is_conditional(q)) throw ParameterError(std::string(to_string(q)) + " is conditional; use audit_conditional");
    InequalityReport r;
    r.name = q;
    const auto& nb = a.nb;
    if (nb.degenerate || !(nb.l2sq > 0.0)) {
        r.status = Status::degenerate;
        return r;
    }
    r.status = Status::applicable;
    const double gamma = nb.l2sq, l2 = std::sqrt(gamma), l1 = nb.l1, g = nb.h1, hm = nb.hminus1_d1;
    switch (q) {
        case Inequality::classical_nash_2d:
            r.lhs = gamma;
            r.rhs_terms = {l1 * g};
            break;
        case Inequality::gns_2d:
            r.lhs = a.l3 * a.l3 * a.l3;
            r.rhs_terms = {gamma * g};
            break;
        case Inequality::stratified_nash:
            r.lhs = std::pow(a.strat_l2sq, 4.0 / 3.0);
            r.rhs_terms = {std::pow(l2, 1.0 / 3.0) * std::pow(l1, 4.0 / 3.0) * g};
            break;
        case Inequality::unstratified_nash:
            r.lhs = std::pow(a.unstrat_l2sq, (5.0 + 22.0 / 52.0) / 2.0);
            r.rhs_terms = {std::pow(l2, 3.0 + 21.0 / 52.0) * std::pow(hm, 1.0 / 52.0) * l1 * g};
            break;
        case Inequality::combined_thm11:
            r.lhs = gamma;
            r.rhs_terms = {std::pow(l1, 8.0 / 7.0) * std::pow(g, 6.0 / 7.0),
                           std::pow(hm, 8.0 / 987.0) * std::pow(l1, 983.0 / 987.0) * std::pow(g, 983.0 / 987.0)};
            break;
        default: break;
    }
    detail::finish_ratio(r);
    return r;
}

inline InequalityReport audit(const ScalarField& f, Inequality q) { return audit(analyze(f), q); }

// Rebuilds the combined report from the stratified, unstratified and classical
// reports of the same field, following the algebra that joins the two
// component inequalities: add, divide by ||f - f_M||_2^(1/4), raise to 8/7,
// then trade ||f - f_M||_2^(54/47) for the classical Nash right-hand side.
inline InequalityReport reconstruct_combined(const InequalityReport& strat, const InequalityReport& unstrat,
                                             const InequalityReport& classical) {
    InequalityReport r;
    r.name = Inequality::combined_thm11;
    if (strat.status == Status::degenerate || unstrat.status == Status::degenerate ||
        classical.status == Status::degenerate) {
        r.status = Status::degenerate;
        return r;
    }
    r.status = Status::applicable;
    const double gamma = classical.lhs;
    const double scale = std::pow(gamma, 1.0 / 8.0);
    const double t1 = std::pow(std::pow(strat.rhs_terms.at(0), 3.0 / 4.0) / scale, 8.0 / 7.0);
    // the remaining ||f - f_M||_2^(54/47) = gamma^(27/47) is swapped out, not multiplied in
    const double t2 = std::pow(std::pow(unstrat.rhs_terms.at(0), 52.0 / 141.0) / scale, 8.0 / 7.0) *
                      std::pow(classical.rhs_terms.at(0) / gamma, 27.0 / 47.0);
    r.lhs = gamma;
    r.rhs_terms = {t1, t2};
    detail::finish_ratio(r);
    return r;
}

struct ConditionalParams {
    std::optional<double> kappa;
    std::optional<double> lambda;
    std::optional<double> eps;
};

inline constexpr std::array<double, 3> kLambdaSweep = {0.5, 0.25, 0.1};

namespace detail {

// Range of mask rows with centre heights in [lo, hi).
inline std::pair<std::size_t, std::size_t> rows_between(const GridMask& m, double lo, double hi) {
    std::size_t r0 = m.rows().size(), r1 = 0;
    for (std::size_t r = 0; r < m.rows().size(); ++r) {
        const double y = m.rows()[r].height;
        if (y >= lo && y < hi) {
            r0 = std::min(r0, r);
            r1 = r + 1;
        }
    }
    if (r0 >= r1) return {0, 0};
    return {r0, r1};
}

inline InequalityReport conditional_shell(Inequality q) {
    InequalityReport r;
    r.name = q;
    r.status = Status::applicable;
    return r;
}

inline void settle(InequalityReport& r) {
    bool ok = true;
    for (const auto& h : r.hypotheses) ok = ok && h.second;
    if (!ok) {
        r.status = Status::hypothesis_failed;
        r.ratio = 0.0;
        return;
    }
    finish_ratio(r);
}

inline InequalityReport audit_strat_caps(const FieldAnalysis& a, const NashContext& ctx, const ConditionalParams& p) {
    auto r = conditional_shell(Inequality::strat_caps);
    const double gamma = a.nb.l2sq;
    const double kappa = p.kappa.value_or(a.strat_l2sq / gamma);
    const double eps = p.eps.value_or(0.999 * kappa * ctx.eps_star / 32.0);
    r.metadata = {{"kappa", kappa}, {"eps", eps}};
    const auto& m = *a.mask;
    const auto [l0, l1] = rows_between(m, -1.0, eps);
    const auto [u0, u1] = rows_between(m, ctx.height - eps, 2.0 * ctx.height + 1.0);
    const double low = stratified_l2sq(a.dec, l0, l1), high = stratified_l2sq(a.dec, u0, u1);
    r.metadata["cap_low_l2sq"] = low;
    r.metadata["cap_high_l2sq"] = high;
    r.hypotheses = {{"kappa_range", kappa > 0.0 && detail::leq(kappa, 1.0)},
                    {"eps_range", eps > 0.0 && eps < kappa * ctx.eps_star / 32.0},
                    {"cap_concentration", geq(std::max(low, high), kappa * gamma / 4.0)}};
    r.lhs = kappa * std::sqrt(gamma) / eps;
    r.rhs_terms = {a.d2_l2};
    settle(r);
    return r;
}

inline InequalityReport audit_strat_bulk(const FieldAnalysis& a, const NashContext& ctx, const ConditionalParams& p) {
    auto r = conditional_shell(Inequality::strat_bulk);
    const double gamma = a.nb.l2sq, l1 = a.nb.l1;
    const double kappa = p.kappa.value_or(a.strat_l2sq / gamma);
    const double eps = p.eps.value_or(std::pow(kappa, -1.0 / 3.0) * std::pow(gamma, -2.0 / 3.0) * std::pow(l1, 4.0 / 3.0));
    r.metadata = {{"kappa", kappa}, {"eps", eps}};
    const auto [b0, b1] = rows_between(*a.mask, eps, ctx.height - eps);
    const double bulk = stratified_l2sq(a.dec, b0, b1);
    r.metadata["bulk_l2sq"] = bulk;
    const double smallness = l1 * l1 / (kappa * gamma * std::sqrt(eps));
    r.hypotheses = {{"kappa_range", kappa > 0.0 && detail::leq(kappa, 1.0)},
                    {"eps_range", eps > 0.0 && eps < ctx.eps_star},
                    {"l1_smallness", leq(smallness, ctx.height * ctx.gc.K_star / (32.0 * ctx.gc.R_star))},
                    {"bulk_concentration", geq(bulk, kappa * gamma / 2.0)}};
    r.lhs = std::pow(kappa, 1.5) * std::pow(gamma, 1.5) * std::sqrt(eps);
    r.rhs_terms = {l1 * l1 * a.nb.h1};
    settle(r);
    return r;
}

// Quantities after rescaling f so that ||ftilde||_1 = 1.
struct Normalized {
    double scale = 0.0;
    double gamma = 0.0, lambda = 0.0, unstrat = 0.0, h1 = 0.0, d1_l2 = 0.0, hm = 0.0;
};

inline std::optional<Normalized> normalize(const FieldAnalysis& a) {
    if (!(a.fluct_l1 > 0.0)) return std::nullopt;
    Normalized n;
    const double c = 1.0 / a.fluct_l1;
    n.scale = c;
    n.gamma = c * c * a.nb.l2sq;
    n.lambda = a.nb.lambda / c;  // sectional^2 / Gamma^(3/2) scales as 1/c
    n.unstrat = c * c * a.unstrat_l2sq;
    n.h1 = c * a.nb.h1;
    n.d1_l2 = c * a.d1_l2;
    n.hm = c * a.nb.hminus1_d1;
    return n;
}

inline InequalityReport audit_below_lambda(const FieldAnalysis& a, const NashContext&, const ConditionalParams& p,
                                           double lambda) {
    auto r = conditional_shell(Inequality::below_lambda);
    const auto n = normalize(a);
    const double kappa = p.kappa.value_or(a.nb.l2sq > 0.0 ? a.unstrat_l2sq / a.nb.l2sq : 0.0);
    r.metadata = {{"kappa", kappa}, {"lambda", lambda}};
    if (!n) {
        r.hypotheses = {{"normalizable", false}};
        settle(r);
        return r;
    }
    r.metadata["Lambda"] = n->lambda;
    r.hypotheses = {{"normalizable", true},
                    {"kappa_range", kappa > 0.0 && detail::leq(kappa, 1.0)},
                    {"lambda_range", lambda > 0.0 && lambda < 1.0},
                    {"unstratified_mass", geq(n->unstrat, kappa * n->gamma)},
                    {"Lambda_below", n->lambda < lambda}};
    r.lhs = std::pow(kappa, 2.5) * n->gamma / lambda;
    r.rhs_terms = {n->d1_l2};
    settle(r);
    return r;
}

inline InequalityReport audit_above_lambda_inv(const FieldAnalysis& a, const NashContext& ctx, const ConditionalParams&,
                                               double lambda) {
    auto r = conditional_shell(Inequality::above_lambda_inv);
    const double gamma = a.nb.l2sq;
    r.metadata = {{"lambda", lambda}, {"Lambda", a.nb.lambda}};
    r.hypotheses = {{"lambda_range", lambda > 0.0 && lambda < 1.0},
                    {"gamma_largeness",
                     leq(lambda / std::sqrt(gamma), ctx.eps_star / (4.0 * std::max(2.0, ctx.gc.R_star)))},
                    {"Lambda_above", a.nb.lambda > 1.0 / lambda}};
    r.lhs = gamma / lambda;
    r.rhs_terms = {a.nb.h1};
    settle(r);
    return r;
}

inline InequalityReport audit_between_lambda(const FieldAnalysis& a, const NashContext& ctx, const ConditionalParams& p,
                                             double lambda) {
    auto r = conditional_shell(Inequality::between_lambda);
    const auto n = normalize(a);
    const double kappa = p.kappa.value_or(a.nb.l2sq > 0.0 ? a.unstrat_l2sq / a.nb.l2sq : 0.0);
    r.metadata = {{"kappa", kappa}, {"lambda", lambda}};
    if (!n) {
        r.hypotheses = {{"normalizable", false}};
        settle(r);
        return r;
    }
    r.metadata["Lambda"] = n->lambda;
    r.hypotheses = {{"normalizable", true},
                    {"kappa_range", kappa > 0.0 && detail::leq(kappa, 1.0)},
                    {"lambda_small", lambda > 0.0 && lambda * lambda < 1.0 / (512.0 * ctx.gc.M_star)},
                    {"gamma_largeness", leq(std::pow(lambda, 3.0) / std::sqrt(n->gamma), ctx.eps_star / 4.0)},
                    {"unstratified_mass", geq(n->unstrat, kappa * n->gamma)},
                    {"Lambda_between", n->lambda >= lambda && n->lambda <= 1.0 / lambda}};
    const double lhs1 = std::pow(kappa, 2.5) * n->gamma / lambda;
    const double lhs2 = std::pow(kappa, 10.5) * std::sqrt(n->gamma) * std::pow(lambda, 52.0);
    const double r1 = n->h1 > 0.0 ? lhs1 / n->h1 : std::numeric_limits<double>::infinity();
    const double r2 = n->hm > 0.0 ? lhs2 / n->hm : std::numeric_limits<double>::infinity();
    r.metadata["ratio_gradient"] = r1;
    r.metadata["ratio_mixing"] = r2;
    // Either disjunct suffices, so the binding ratio is the smaller one.
    if (r1 <= r2) {
        r.lhs = lhs1;
        r.rhs_terms = {n->h1};
    } else {
        r.lhs = lhs2;
        r.rhs_terms = {n->hm};
    }
    settle(r);
    return r;
}

}  // namespace detail

inline InequalityReport audit_conditional(const FieldAnalysis& a, Inequality q, const NashContext& ctx,
                                          const ConditionalParams& p = {}) {
    if (!is_conditional(q)) {
        auto r = audit(a, q);
        return r;
    }
    if (a.nb.degenerate || !(a.nb.l2sq > 0.0)) {
        InequalityReport r;
        r.name = q;
        r.status = Status::degenerate;
        return r;
    }
    if (q == Inequality::strat_caps) return detail::audit_strat_caps(a, ctx, p);
    if (q == Inequality::strat_bulk) return detail::audit_strat_bulk(a, ctx, p);

    auto one = [&](double lambda) {
        if (q == Inequality::below_lambda) return detail::audit_below_lambda(a, ctx, p, lambda);
        if (q == Inequality::above_lambda_inv) return detail::audit_above_lambda_inv(a, ctx, p, lambda);
        return detail::audit_between_lambda(a, ctx, p, lambda);
    };
    if (p.lambda) return one(*p.lambda);
    // No lambda given: sweep the default ladder and keep the worst applicable case.
    std::optional<InequalityReport> best;
    InequalityReport first_failed;
    for (std::size_t i = 0; i < kLambdaSweep.size(); ++i) {
        auto r = one(kLambdaSweep[i]);
        if (i == 0) first_failed = r;
        if (r.status == Status::applicable && (!best || r.ratio > best->ratio)) best = r;
    }
    return best ? *best : first_failed;
}

inline InequalityReport audit_conditional(const ScalarField& f, Inequality q, const NashContext& ctx,
                                          const ConditionalParams& p = {}) {
    return audit_conditional(analyze(f), q, ctx, p);
}

// ---- field families ---------------------------------------------------------

enum class FamilyKind { random_smooth, bump_pair, stratified_profile, concentrating_bump, shear_layers };

inline FamilyKind parse_family_kind(const std::string& s) {
    if (s == "random_smooth") return FamilyKind::random_smooth;
    if (s == "bump_pair") return FamilyKind::bump_pair;
    if (s == "stratified_profile") return FamilyKind::stratified_profile;
    if (s == "concentrating_bump") return FamilyKind::concentrating_bump;
    if (s == "shear_layers") return FamilyKind::shear_layers;
    throw ParameterError("unknown family kind '" + s + "'");
}

inline const char* to_string(FamilyKind k) {
    switch (k) {
        case FamilyKind::random_smooth: return "random_smooth";
        case FamilyKind::bump_pair: return "bump_pair";
        case FamilyKind::stratified_profile: return "stratified_profile";
        case FamilyKind::concentrating_bump: return "concentrating_bump";
        default: return "shear_layers";
    }
}

struct FamilySpec {
    FamilyKind kind = FamilyKind::random_smooth;
    int count = 1;
    std::uint64_t seed = 0;
    std::map<std::string, double> params;
    // Explicit scale ladder; when empty, ladder families use a geometric one.
    std::vector<double> scales;

    double param(const std::string& key, double fallback) const {
        auto it = params.find(key);
        return it == params.end() ? fallback : it->second;
    }

    double scale_at(int i) const {
        if (!scales.empty()) return scales.at(static_cast<std::size_t>(i));
        return param("scale0", 1.0) * std::pow(param("scale_ratio", 0.75), i);
    }
};

inline void validate(const FamilySpec& s) {
    if (s.count < 1) throw ParameterError("family count must be at least 1");
    if (!s.scales.empty() && static_cast<int>(s.scales.size()) < s.count)
        throw ParameterError("scale ladder shorter than the family count");
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline double gauss2(double x, double y, double cx, double cy, double w) {
    const double dx = x - cx, dy = y - cy;
    return std::exp(-(dx * dx + dy * dy) / (2.0 * w * w));
}

struct MaskBox {
    double xmin, xmax, ymin, ymax;
};

inline MaskBox box_of(const GridMask& m) {
    MaskBox b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
              m.rows().front().height, m.rows().back().height};
    for (const auto& row : m.rows()) {
        b.xmin = std::min(b.xmin, (static_cast<double>(row.col_start) + 0.5) * m.cell_size());
        b.xmax = std::max(b.xmax, (static_cast<double>(row.col_start + row.count) - 0.5) * m.cell_size());
    }
    return b;
}

// Area-uniform random point of the masked region by inverse CDF over rows.
// Two uniforms per point regardless of grid, so one seed describes nearly the
// same function at every resolution (points move by O(dx), never reshuffle).
inline std::pair<double, double> random_point(const GridMask& m, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const double v = U(rng) * static_cast<double>(m.size()), u = U(rng);
    const double dx = m.cell_size();
    double before = 0.0;
    for (const auto& row : m.rows()) {
        const double c = static_cast<double>(row.count);
        if (v < before + c || &row == &m.rows().back()) {
            const double frac = std::clamp((v - before) / c, 0.0, 1.0);
            return {(static_cast<double>(row.col_start) + u * c) * dx, (static_cast<double>(row.row_index) + frac) * dx};
        }
        before += c;
    }
    return {0.0, 0.0};
}

}  // namespace detail

// Field i of the family; independent of the others so sweeps parallelize deterministically.
inline ScalarField generate_field(const FamilySpec& spec, const MaskPtr& mask, int i) {
    const auto& m = *mask;
    const double dx = m.cell_size();
    const double h = m.domain_height();
    const auto box = detail::box_of(m);
    const double span = std::max(box.xmax - box.xmin, box.ymax - box.ymin);
    std::mt19937_64 rng(detail::splitmix64(spec.seed ^ detail::splitmix64(static_cast<std::uint64_t>(i) + 1)));
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const double offset = spec.param("offset", 0.0);

    switch (spec.kind) {
        case FamilyKind::random_smooth: {
            const int max_bumps = static_cast<int>(spec.param("max_bumps", 12));
            const double wmin = std::max(4.0 * dx, spec.param("min_width", 0.05 * span));
            const double wmax = std::max(wmin, spec.param("max_width", 0.25 * span));
            std::uniform_int_distribution<int> nb(1, max_bumps);
            const int k = nb(rng);
            struct Bump { double x, y, w, a; };
            std::vector<Bump> bumps;
            for (int b = 0; b < k; ++b) {
                auto [x, y] = detail::random_point(m, rng);
                const double w = wmin + (wmax - wmin) * U(rng);
                const double a = 2.0 * U(rng) - 1.0;
                bumps.push_back({x, y, w, a});
            }
            return sample(mask, [&](double x, double y) {
                double s = offset;
                for (const auto& b : bumps) s += b.a * detail::gauss2(x, y, b.x, b.y, b.w);
                return s;
            });
        }
        case FamilyKind::bump_pair: {
            const double w = std::max(4.0 * dx, spec.param("width", 0.1 * span));
            auto [x0, y0] = detail::random_point(m, rng);
            auto [x1, y1] = detail::random_point(m, rng);
            const double a = 0.5 + U(rng);
            return sample(mask, [&](double x, double y) {
                return offset + a * (detail::gauss2(x, y, x0, y0, w) - detail::gauss2(x, y, x1, y1, w));
            });
        }
        case FamilyKind::stratified_profile: {
            // Vertical profile sharpening with scale delta; "cap" concentrates
            // against the bottom cap, otherwise a tanh interface at "center".
            const double delta = std::max(dx, spec.scale_at(i) * spec.param("width0", 0.2));
            const double amp = spec.param("amplitude", 1.0);
            if (spec.param("cap", 0.0) != 0.0)
                return sample(mask, [&](double, double y) { return offset + amp * std::exp(-y / delta); });
            const double c = spec.param("center", 0.5 * h);
            return sample(mask, [&](double, double y) { return offset + amp * std::tanh((y - c) / delta); });
        }
        case FamilyKind::concentrating_bump: {
            // mu^(-alpha) G((x - x0)/mu); alpha = 2 is the mass-preserving scaling.
            const double mu = spec.scale_at(i);
            const double w0 = spec.param("width0", 0.2);
            const double w = std::max(4.0 * dx, mu * w0);
            const double alpha = spec.param("alpha", 2.0);
            const double cx = spec.param("center_x", 0.5 * (box.xmin + box.xmax));
            const double cy = spec.param("center_y", 0.5 * h);
            const double amp = spec.param("amplitude", 1.0) * std::pow(mu, -alpha);
            return sample(mask, [&](double x, double y) { return offset + amp * detail::gauss2(x, y, cx, cy, w); });
        }
        case FamilyKind::shear_layers: {
            const int layers = 1 + static_cast<int>(U(rng) * spec.param("max_layers", 4));
            struct Layer { double y, w, k, phase, a; };
            std::vector<Layer> ls;
            const double wmin = std::max(4.0 * dx, spec.param("min_width", 0.05 * span));
            for (int l = 0; l < layers; ++l) {
                auto [x, y] = detail::random_point(m, rng);
                (void)x;
                const double w = wmin + (0.2 * span - wmin) * U(rng);
                const double wavelength = std::max(8.0 * dx, (0.2 + 0.8 * U(rng)) * (box.xmax - box.xmin));
                ls.push_back({y, w, 2.0 * M_PI / wavelength, 2.0 * M_PI * U(rng), 2.0 * U(rng) - 1.0});
            }
            return sample(mask, [&](double x, double y) {
                double s = offset;
                for (const auto& L : ls) {
                    const double z = (y - L.y) / L.w;
                    s += L.a * std::sin(L.k * x + L.phase) * std::exp(-0.5 * z * z);
                }
                return s;
            });
        }
    }
    throw ParameterError("unhandled family kind");
}

inline std::vector<ScalarField> generate_family(const FamilySpec& spec, const MaskPtr& mask) {
    validate(spec);
    std::vector<ScalarField> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (int i = 0; i < spec.count; ++i) out.push_back(generate_field(spec, mask, i));
    return out;
}

// ---- sweeps -----------------------------------------------------------------

struct SweepRow {
    int field_id = 0;
    InequalityReport report;
};

struct RatioHistogram {
    // log10(ratio) bins of width 0.5 on [-8, 4); under/overflow at the ends.
    static constexpr double lo = -8.0, width = 0.5;
    static constexpr int bins = 24;
    std::vector<int> counts = std::vector<int>(bins + 2, 0);

    void add(double ratio) {
        if (!(ratio > 0.0)) { ++counts[0]; return; }
        const double b = (std::log10(ratio) - lo) / width;
        if (b < 0.0) ++counts[0];
        else if (b >= bins) ++counts[bins + 1];
        else ++counts[1 + static_cast<int>(b)];
    }
};

struct SweepSummary {
    Inequality name{};
    double max_ratio = 0.0;
    int argmax_id = -1;
    int applicable = 0, hypothesis_failed = 0, degenerate = 0;
    RatioHistogram histogram;
};

struct SweepReport {
    FamilySpec spec;
    std::vector<Inequality> names;
    std::vector<SweepRow> rows;  // field-major, names in order
    std::vector<SweepSummary> summary;

    const SweepSummary& of(Inequality q) const {
        for (const auto& s : summary)
            if (s.name == q) return s;
        throw ParameterError(std::string("inequality not in sweep: ") + to_string(q));
    }
};

inline std::vector<InequalityReport> audit_all(const FieldAnalysis& a, const std::vector<Inequality>& names,
                                               const NashContext* ctx, const ConditionalParams& p = {}) {
    std::vector<InequalityReport> out;
    for (auto q : names) {
        if (is_conditional(q)) {
            if (!ctx) throw ParameterError("conditional audits need a domain context");
            out.push_back(audit_conditional(a, q, *ctx, p));
        } else {
            out.push_back(audit(a, q));
        }
    }
    return out;
}

inline SweepReport family_sweep(const FamilySpec& spec, const MaskPtr& mask, const std::vector<Inequality>& names,
                                const NashContext* ctx = nullptr, int threads = 1) {
    validate(spec);
    if (names.empty()) throw ParameterError("no inequalities requested");
    const int n = spec.count;
    std::vector<std::vector<InequalityReport>> per_field(static_cast<std::size_t>(n));
    std::vector<std::string> errors(static_cast<std::size_t>(std::max(1, threads)));
    auto work = [&](int t, int stride) {
        try {
            EllipticSolver solver(mask, BC::dirichlet_zero);
            for (int i = t; i < n; i += stride) {
                const auto f = generate_field(spec, mask, i);
                per_field[static_cast<std::size_t>(i)] = audit_all(analyze(f, solver), names, ctx);
            }
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(t)] = e.what();
        }
    };
    const int nt = std::clamp(threads, 1, std::max(1, n));
    if (nt == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nt; ++t) pool.emplace_back(work, t, nt);
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors)
        if (!e.empty()) throw Error("family sweep failed: " + e);

    SweepReport rep;
    rep.spec = spec;
    rep.names = names;
    for (auto q : names) {
        SweepSummary s;
        s.name = q;
        rep.summary.push_back(s);
    }
    for (int i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < names.size(); ++k) {
            const auto& r = per_field[static_cast<std::size_t>(i)][k];
            rep.rows.push_back({i, r});
            auto& s = rep.summary[k];
            if (r.status == Status::applicable) {
                ++s.applicable;
                s.histogram.add(r.ratio);
                if (s.argmax_id < 0 || r.ratio > s.max_ratio) {
                    s.max_ratio = r.ratio;
                    s.argmax_id = i;
                }
            } else if (r.status == Status::hypothesis_failed) {
                ++s.hypothesis_failed;
            } else {
                ++s.degenerate;
            }
        }
    }
    return rep;
}

inline void write_sweep_csv(const SweepReport& rep, std::ostream& os) {
    os << "field_id,name,lhs,rhs_terms,ratio,status\n";
    os << std::setprecision(17);
    for (const auto& row : rep.rows) {
        os << row.field_id << ',' << to_string(row.report.name) << ',' << row.report.lhs << ',';
        for (std::size_t k = 0; k < row.report.rhs_terms.size(); ++k) {
            if (k) os << ';';
            os << row.report.rhs_terms[k];
        }
        os << ',' << row.report.ratio << ',' << to_string(row.report.status) << '\n';
    }
}

// ---- scaling probe ----------------------------------------------------------

struct ScalingFit {
    Inequality name{};
    std::vector<std::string> factors;
    std::vector<double> stated_exponents;
    std::vector<double> slopes;     // fitted exponent per factor
    std::vector<double> residuals;  // RMS residual of each fit
    std::vector<double> ratios;     // ratio at each ladder scale
};

namespace detail {

// Least-squares slope and RMS residual of y against x.
inline std::pair<double, double> ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0.0)) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    const double b = sxy / sxx;
    double rss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - (my + b * (x[i] - mx));
        rss += e * e;
    }
    return {b, std::sqrt(rss / n)};
}

inline std::vector<double> factor_values(const FieldAnalysis& a, const std::vector<std::string>& names) {
    std::vector<double> v;
    for (const auto& f : names) {
        if (f == "l1") v.push_back(a.nb.l1);
        else if (f == "l2") v.push_back(std::sqrt(a.nb.l2sq));
        else if (f == "grad_l2") v.push_back(a.nb.h1);
        else if (f == "hminus1_d1") v.push_back(a.nb.hminus1_d1);
        else throw ParameterError("unknown factor " + f);
    }
    return v;
}

}  // namespace detail

// For each right-hand factor F_k, regress log(lhs) - sum_{j != k} e_j log F_j
// on log F_k across the ladder, with e_j the stated exponents. The slope
// recovers e_k exactly when the inequality is scale-sharp along the family.
// The combined inequality has two terms; it is fitted against log of their sum
// and reports that single slope.
inline std::vector<ScalingFit> scaling_probe(const FamilySpec& spec, const MaskPtr& mask,
                                             const std::vector<Inequality>& names) {
    validate(spec);
    if (spec.count < 4) throw ParameterError("scaling probe needs at least 4 scales");
    EllipticSolver solver(mask, BC::dirichlet_zero);
    std::vector<FieldAnalysis> an;
    for (int i = 0; i < spec.count; ++i) an.push_back(analyze(generate_field(spec, mask, i), solver));
    std::vector<ScalingFit> out;
    for (auto q : names) {
        if (is_conditional(q)) throw ParameterError("scaling probe covers unconditional inequalities only");
        ScalingFit fit;
        fit.name = q;
        std::vector<double> loglhs;
        std::vector<std::vector<double>> logf;
        std::vector<double> logsum;
        for (const auto& a : an) {
            const auto r = audit(a, q);
            if (r.status != Status::applicable || !(r.lhs > 0.0))
                throw DegenerateError(std::string("scaling probe hit a degenerate field for ") + to_string(q));
            fit.ratios.push_back(r.ratio);
            loglhs.push_back(std::log(r.lhs));
            double s = 0.0;
            for (double t : r.rhs_terms) s += t;
            logsum.push_back(std::log(s));
            if (q != Inequality::combined_thm11) {
                const auto fe = factor_exponents(q);
                auto v = detail::factor_values(a, fe.factors);
                for (auto& x : v) x = std::log(x);
                logf.push_back(v);
            }
        }
        if (q == Inequality::combined_thm11) {
            fit.factors = {"rhs_sum"};
            fit.stated_exponents = {1.0};
            auto [b, res] = detail::ls_slope(logsum, loglhs);
            fit.slopes = {b};
            fit.residuals = {res};
        } else {
            const auto fe = factor_exponents(q);
            fit.factors = fe.factors;
            fit.stated_exponents = fe.exponents;
            for (std::size_t k = 0; k < fe.factors.size(); ++k) {
                std::vector<double> x, y;
                for (std::size_t i = 0; i < an.size(); ++i) {
                    double yi = loglhs[i];
                    for (std::size_t j = 0; j < fe.factors.size(); ++j)
                        if (j != k) yi -= fe.exponents[j] * logf[i][j];
                    x.push_back(logf[i][k]);
                    y.push_back(yi);
                }
                auto [b, res] = detail::ls_slope(x, y);
                fit.slopes.push_back(b);
                fit.residuals.push_back(res);
            }
        }
        out.push_back(std::move(fit));
    }
    return out;
}

}  // namespace pksipm
