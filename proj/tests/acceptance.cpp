// Acceptance run: one PASS/FAIL line per criterion, tolerances as specified.
// --known-failures 7,... names criteria documented as unattainable; they still
// print FAIL, and the exit status counts every other failure plus any listed
// criterion that unexpectedly passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <pksipm/config.hpp>
#include <pksipm/pksipm.hpp>
#include <pksipm/regularity.hpp>

#include "oracles.hpp"

using namespace pksipm;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = PKSIPM_SOURCE_DIR;

int failures = 0;
std::set<int> known;

void report(int id, const char* name, bool ok, const std::string& detail) {
    const bool listed = known.count(id) > 0;
    std::printf("%s [%2d] %-28s %s%s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str(),
                listed ? (ok ? " (listed as a known failure, now passing)" : " (known failure)") : "");
    std::fflush(stdout);
    failures += (ok == listed);
}

std::string fmt(const char* f, auto... args) {
    char buf[1024];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

SimConfig reference(const std::string& name) { return parse_sim_config(load_json((kSource / "configs" / name).string())); }

struct Reference {
    std::string label;
    RunResult res;
    SimConfig cfg;
};

// ---- criteria ---------------------------------------------------------------

void orthogonality() {
    auto m = rasterize(make_disk(1.0), 1.0 / 64);
    FamilySpec spec;
    spec.count = 100;
    spec.seed = 1;
    double worst_pyth = 0.0, worst_row = 0.0;
    for (const auto& f : generate_family(spec, m)) {
        const auto d = decompose(f);
        const auto raw = oracle::raw_stats(f);
        worst_pyth = std::max(worst_pyth, std::abs(stratified_l2sq(d) + unstratified_l2sq(d) - raw.gamma) / raw.gamma);
        for (const auto& row : m->rows()) {
            double s = 0.0, a = 0.0;
            for (std::int32_t c = 0; c < row.count; ++c) {
                s += d.fluctuation[row.offset + static_cast<std::size_t>(c)];
                a += std::abs(f[row.offset + static_cast<std::size_t>(c)]);
            }
            worst_row = std::max(worst_row, std::abs(s) / a);
        }
    }
    report(1, "discrete orthogonality", worst_pyth <= 1e-12 && worst_row <= 1e-12,
           fmt("max rel Pythagoras defect %.2e, max rel row-mean %.2e (100 fields, dx=1/64)", worst_pyth, worst_row));
}

double paraboloid_error(double dx) {
    auto m = rasterize(make_disk(1.0), dx);
    const auto u = solve({m, ScalarField(m, 1.0), BC::dirichlet_zero}).value;
    double e = 0.0;
    for (std::size_t i = 0; i < m->size(); ++i) {
        const double x = m->x1(i), y = m->x2(i) - 1.0;
        e = std::max(e, std::abs(u[i] - 0.25 * (1.0 - x * x - y * y)));
    }
    return e;
}

void elliptic_accuracy() {
    const double e64 = paraboloid_error(1.0 / 64), e128 = paraboloid_error(1.0 / 128);
    auto m = rasterize(make_disk(1.0), 1.0 / 128);
    const double n = hminus1_norm(m, ScalarField(m, 1.0));
    const double rel = std::abs(n * n - M_PI / 8.0) / (M_PI / 8.0);
    const double ratio = e128 / e64;
    report(2, "elliptic accuracy", e64 <= 0.05 && ratio >= 0.3 && ratio <= 0.7 && rel <= 0.05,
           fmt("Linf %.4f at 1/64, ratio %.3f under halving, |H^-1 norm^2 - pi/8| rel %.4f at 1/128", e64, ratio, rel));
}

void oracle_equivalence() {
    auto m = rasterize(make_disk(1.0), 2.0 / 12, RasterOptions{false});
    std::mt19937_64 rng(12);
    std::normal_distribution<double> N;
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
        ScalarField g(m);
        for (auto& v : g.values) v = N(rng);
        const double ref = std::sqrt(oracle::dense_hminus1_sq(*m, g.values));
        worst = std::max(worst, std::abs(hminus1_norm(m, g) - ref) / ref);
    }
    report(3, "dense oracle equivalence", worst <= 1e-8,
           fmt("max rel difference %.2e over 20 fields on a %zu-cell 12x12 mask", worst, m->size()));
}

void conservation(const std::vector<Reference>& refs) {
    bool ok = true;
    std::string d;
    for (const auto& r : refs) {
        const bool good = r.res.max_mass_drift <= 1e-10 && r.res.min_rho_ratio >= -1e-8 && r.res.wall_seconds <= 300.0;
        ok = ok && good;
        d += fmt("%s: drift %.1e, min/max %.1e, %.0fs; ", r.label.c_str(), r.res.max_mass_drift, r.res.min_rho_ratio,
                 r.res.wall_seconds);
    }
    report(4, "conservation/positivity", ok, d);
}

void energy_bound(const std::vector<Reference>& refs) {
    bool ok = true;
    std::size_t rows = 0;
    for (const auto& r : refs) {
        const double cap = r.cfg.domain.height * r.res.trace.front().mass;
        for (const auto& row : r.res.trace) {
            ++rows;
            ok = ok && row.energy >= 0.0 && row.energy <= cap;
        }
    }
    report(5, "potential-energy bound", ok, fmt("0 <= E <= h*mass on %zu output rows of %zu runs", rows, refs.size()));
}

void power_identity(const Reference& fine) {
    auto coarse_cfg = fine.cfg;
    coarse_cfg.cell_size = 1.0 / 64;
    const auto coarse = run(coarse_cfg);
    const double m128 = power_identity_mismatch(fine.res.trace), m64 = power_identity_mismatch(coarse.trace);
    report(6, "power identity", m128 <= 0.05 && m128 < m64,
           fmt("time-averaged mismatch %.4f at 1/128, %.4f at 1/64", m128, m64));
}

struct SuiteResult {
    SweepReport rep;
    std::vector<double> max;  // per inequality in kBounded order
};

const std::vector<Inequality> kBounded = {Inequality::classical_nash_2d, Inequality::stratified_nash,
                                          Inequality::unstratified_nash, Inequality::combined_thm11};

SuiteResult suite(double dx, std::uint64_t seed) {
    const auto j = load_json((kSource / "configs" / "nash_disk_suite.json").string());
    const auto d = parse_domain(j.at("domain"));
    auto spec = parse_family_spec(j.at("family"));
    spec.seed = seed;
    const auto m = rasterize(d, dx);
    SuiteResult s{family_sweep(spec, m, theorem_level_inequalities()), {}};
    for (auto q : kBounded) s.max.push_back(s.rep.of(q).max_ratio);
    return s;
}

void boundedness(const SuiteResult& base, const SuiteResult& other_seed, const SuiteResult& fine) {
    bool finite = true;
    double seed_dev = 0.0, res_dev = 0.0;
    std::string d;
    for (std::size_t k = 0; k < kBounded.size(); ++k) {
        finite = finite && std::isfinite(base.max[k]) && base.max[k] > 0.0;
        const double sd = std::abs(other_seed.max[k] - base.max[k]) / base.max[k];
        const double rd = std::abs(fine.max[k] - base.max[k]) / base.max[k];
        seed_dev = std::max(seed_dev, sd);
        res_dev = std::max(res_dev, rd);
        d += fmt("%s %.4g (seed %+.1f%%, 1/128 %+.1f%%); ", to_string(kBounded[k]), base.max[k],
                 100.0 * (other_seed.max[k] - base.max[k]) / base.max[k], 100.0 * (fine.max[k] - base.max[k]) / base.max[k]);
    }
    report(7, "inequality boundedness", finite && seed_dev <= 0.02 && res_dev <= 0.10, d);
}

void reconstruction(const SuiteResult& s) {
    const auto j = load_json((kSource / "configs" / "nash_disk_suite.json").string());
    const auto spec = parse_family_spec(j.at("family"));
    const auto m = rasterize(parse_domain(j.at("domain")), 1.0 / 64);
    EllipticSolver solver(m, BC::dirichlet_zero);
    double worst = 0.0;
    int n = 0;
    for (int i = 0; i < spec.count; ++i) {
        const auto a = analyze(generate_field(spec, m, i), solver);
        const auto direct = audit(a, Inequality::combined_thm11);
        const auto rec = reconstruct_combined(audit(a, Inequality::stratified_nash), audit(a, Inequality::unstratified_nash),
                                              audit(a, Inequality::classical_nash_2d));
        if (direct.status != Status::applicable) continue;
        ++n;
        worst = std::max(worst, std::abs(rec.ratio - direct.ratio) / direct.ratio);
    }
    (void)s;
    report(8, "combined reconstruction", n == spec.count && worst <= 1e-10,
           fmt("max rel difference %.2e on %d suite fields", worst, n));
}

void conditional() {
    const auto d = make_disk(1.0);
    const auto ctx = NashContext::from(d);
    const double c4 = 16.0 / (2.0 - std::sqrt(2.0));
    double caps = 0.0, above = 0.0;
    bool applicable = true;
    auto m128 = rasterize(d, 1.0 / 128);
    for (double delta : {0.004, 0.008}) {
        const auto r = audit_conditional(sample(m128, [=](double, double y) { return std::exp(-y / delta); }),
                                         Inequality::strat_caps, ctx);
        applicable = applicable && r.status == Status::applicable;
        caps = std::max(caps, r.ratio);
    }
    auto m256 = rasterize(d, 1.0 / 256);
    for (double amp : {300.0, 400.0})
        for (double y0 : {0.5, 1.0}) {
            const auto f = sample(m256, [=](double x, double y) {
                return 1.0 + (std::abs(y - y0) < 1.5 / 256 ? amp * std::sin(8.0 * x) : 0.0);
            });
            const auto r = audit_conditional(f, Inequality::above_lambda_inv, ctx, {std::nullopt, 0.5, std::nullopt});
            applicable = applicable && r.status == Status::applicable;
            above = std::max(above, r.ratio);
        }

    // hypothesis evaluation against the raw-statistics checker
    auto m64 = rasterize(d, 1.0 / 64);
    struct Case {
        ScalarField f;
        Inequality q;
        ConditionalParams p;
    };
    const ConditionalParams half{std::nullopt, 0.5, std::nullopt};
    std::vector<Case> cases = {
        {sample(m128, [](double, double y) { return std::exp(-y / 0.008); }), Inequality::strat_caps, {}},
        {sample(m128, [](double, double y) { return std::exp((y - 2.0) / 0.008); }), Inequality::strat_caps, {}},
        {sample(m64, [](double, double y) { return std::exp(-(y - 1.0) * (y - 1.0) / 0.01); }), Inequality::strat_caps, {}},
        {sample(m64, [](double, double y) { return 50.0 * std::exp(-(y - 1.0) * (y - 1.0) / 0.02); }), Inequality::strat_bulk, {}},
        {sample(m64, [](double, double y) { return std::cos(3.0 * y); }), Inequality::strat_bulk, {0.5, std::nullopt, 0.1}},
        {sample(m64, [](double x, double) { return std::sin(2.0 * x); }), Inequality::below_lambda, half},
        {sample(m64, [](double x, double y) { return std::sin(3.0 * x) * std::cos(y); }), Inequality::below_lambda, {0.9, 0.9, std::nullopt}},
        {sample(m64, [](double x, double y) { return 1.0 + (std::abs(y - 1.0) < 1.5 / 64 ? 300.0 * std::sin(8.0 * x) : 0.0); }), Inequality::above_lambda_inv, half},
        {sample(m64, [](double x, double y) { return 1.0 + (std::abs(y - 1.0) < 4.0 / 64 ? 0.1 * std::sin(8.0 * x) : 0.0); }), Inequality::above_lambda_inv, {std::nullopt, 0.25, std::nullopt}},
        {sample(m64, [](double x, double y) { return std::sin(4.0 * x + y); }), Inequality::between_lambda, {std::nullopt, 0.01, std::nullopt}},
    };
    int agree = 0;
    for (const auto& c : cases) {
        const auto r = audit_conditional(c.f, c.q, ctx, c.p);
        const auto ref = oracle::hypotheses(c.f, c.q, {ctx.height, ctx.eps_star, ctx.gc.K_star, ctx.gc.R_star, ctx.gc.M_star, c.p.kappa, c.p.lambda, c.p.eps});
        bool same = r.hypotheses.size() == ref.size();
        for (const auto& [name, ok] : r.hypotheses) same = same && ref.count(name) && ref.at(name) == ok;
        agree += same;
    }
    report(9, "conditional audits", applicable && caps <= c4 && above <= 4.0 && agree == 10,
           fmt("strat_caps max %.3f (limit %.3f), above_lambda_inv max %.3f (limit 4), hypothesis checker agrees on %d/10",
               caps, c4, above, agree));
}

void suppression(const Reference& g0, const Reference& g5) {
    double sup = 0.0;
    for (const auto& r : g5.res.trace) sup = std::max(sup, r.gamma);
    const bool blew = g0.res.status == RunStatus::variance_blowup && g0.res.trace.back().t < 1.0;
    const bool held = g5.res.status == RunStatus::completed && std::abs(g5.res.trace.back().t - 10.0) < 1e-9 &&
                      sup < g5.res.variance_ceiling;
    const double wall = g0.res.wall_seconds + g5.res.wall_seconds;
    report(10, "suppression phenomenology", blew && held && wall <= 600.0,
           fmt("g=0: %s at t=%.3f; g=5: %s to t=%.2f, sup Gamma %.4g < ceiling %.4g; %.0fs combined",
               to_string(g0.res.status), g0.res.trace.back().t, to_string(g5.res.status), g5.res.trace.back().t, sup,
               g5.res.variance_ceiling, wall));
}

void ode_checker(const Reference& g5, const fs::path& snapdir_root) {
    // closed-form B* on five constant sets
    struct Set { double a1, a3, a4, a5, q, B; };
    const Set sets[] = {{1, 1, 1, 1, 0.5, 16}, {2, 0.25, 1, 3, 1.0 / 3.0, 24}, {1, 1, 1, 0.5, 0.25, 32},
                        {0.5, 2, 1.5, 1, 0.5, 27}, {1.2, 0.8, 0.25, 2, 4.0 / 987.0, std::exp(-180.23142521368555)}};
    bool hand = true;
    for (const auto& s : sets) {
        OdeConstants k;
        k.a1 = s.a1, k.a3 = s.a3, k.a4 = s.a4, k.a5 = s.a5, k.q = s.q;
        const auto b = bound_constants(k);
        hand = hand && std::abs(b.B_star - s.B) <= 1e-12 * s.B && std::abs(b.C2 - std::exp(s.B)) <= 1e-12 * std::exp(s.B);
    }

    // premise flags vs the brute-force evaluator
    std::mt19937_64 rng(4242);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    int match = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 20 + static_cast<int>(20 * U(rng));
        oracle::Trajectory o;
        double t = 0.0, lx = std::log(0.5 + 2.5 * U(rng));
        for (int i = 0; i < n; ++i) {
            t += 0.02 + 0.08 * U(rng);
            lx += 0.3 * (U(rng) - 0.5);
            const double X = std::exp(lx);
            o.t.push_back(t);
            o.X.push_back(X);
            o.Y.push_back(X * X * (0.5 + 2.0 * U(rng)));
            o.Z.push_back(0.01 + 3.0 * U(rng));
        }
        OdeConstants k;
        auto pick = [&](double lo, double hi) { return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * U(rng)); };
        k.a1 = pick(0.5, 2.0), k.a2 = pick(0.3, 3.0), k.a3 = pick(0.3, 3.0), k.a4 = pick(0.3, 3.0), k.a5 = pick(0.1, 2.0);
        const auto ours = check_premises({o.t, o.X, o.Y, o.Z}, k);
        const auto ref = oracle::premise_flags(o, k);
        bool same = true;
        for (std::size_t p = 0; p < 4; ++p) same = same && ours[p].holds == ref[p];
        match += same;
    }

    // end to end: premise (2) constant from the combined-inequality audit of every output state
    double combined = 0.0;
    std::size_t audited = 0;
    for (const auto& p : g5.res.snapshots) {
        const auto r = audit(read_snapshot(p), Inequality::combined_thm11);
        if (r.status != Status::applicable) continue;
        combined = std::max(combined, r.ratio);
        ++audited;
    }
    const auto traj = OdeTrajectory::from_trace(g5.res.trace);
    FitOptions fo;
    fo.mass = g5.res.trace.front().mass;
    fo.combined_constant = combined;
    const auto v = verify(traj, fit_constants(traj, fo).constants);
    fo.combined_constant.reset();
    const auto free_fit = verify(traj, fit_constants(traj, fo).constants);
    fs::remove_all(snapdir_root);
    report(11, "ODE checker", hand && match == 50 && v.probative && v.conclusion_holds,
           fmt("B*/C2 hand sets %s; premise oracle %d/50; g=5 trace with the audited combined constant %.4f "
               "(%zu states): premises %d%d%d%d, conclusion %s, log sup X %.3f <= log bound %.4g (A*=%.1f, B*=%.4g); "
               "fully fitted: conclusion %s, log bound %.4g",
               hand ? "match" : "differ", match, combined, audited, v.premises[0].holds, v.premises[1].holds,
               v.premises[2].holds, v.premises[3].holds, v.conclusion_holds ? "holds" : "fails", std::log(v.sup_X),
               v.log_bound, v.bounds.A_star, v.bounds.B_star, free_fit.conclusion_holds ? "holds" : "fails",
               free_fit.log_bound));
}

Reference run_reference(const std::string& label, SimConfig cfg, const fs::path& out = {}) {
    RunOptions opt;
    if (!out.empty()) opt.out_dir = out.string();
    auto res = run(cfg, opt);
    std::printf("      reference %-8s %s after %ld steps, t=%.3f, %.1fs\n", label.c_str(), to_string(res.status), res.steps,
                res.trace.back().t, res.wall_seconds);
    std::fflush(stdout);
    return {label, std::move(res), std::move(cfg)};
}

}  // namespace

int main(int argc, char** argv) {
    for (int a = 1; a + 1 < argc; ++a)
        if (std::string(argv[a]) == "--known-failures") {
            std::stringstream ss(argv[a + 1]);
            for (std::string tok; std::getline(ss, tok, ',');) known.insert(std::stoi(tok));
        }
    try {
        orthogonality();
        elliptic_accuracy();
        oracle_equivalence();

        const auto tmp = fs::temp_directory_path() / "pksipm_acceptance";
        fs::remove_all(tmp);
        auto g5cfg = reference("disk_g5_large_mass.json");
        g5cfg.snapshot_interval = g5cfg.output_interval;  // keep every output state for the Nash audit
        std::vector<Reference> refs;
        refs.push_back(run_reference("g0", reference("disk_g0_large_mass.json")));
        refs.push_back(run_reference("g5", g5cfg, tmp));
        refs.push_back(run_reference("smooth", reference("disk_smooth_small_mass.json")));
        conservation(refs);
        energy_bound(refs);
        power_identity(refs[2]);

        const auto base = suite(1.0 / 64, 20240601), seed2 = suite(1.0 / 64, 20240602), fine = suite(1.0 / 128, 20240601);
        boundedness(base, seed2, fine);
        reconstruction(base);
        conditional();
        suppression(refs[0], refs[1]);
        ode_checker(refs[1], tmp);
    } catch (const std::exception& e) {
        std::printf("FAIL acceptance aborted: %s\n", e.what());
        return 100;
    }
    std::printf("%d unexpected outcomes\n", failures);
    return failures;
}
