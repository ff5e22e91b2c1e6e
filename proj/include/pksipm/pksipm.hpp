#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "elliptic.hpp"
#include "error.hpp"
#include "field.hpp"
#include "fields.hpp"
#include "geometry.hpp"

namespace pksipm {

struct InitialCondition {
    std::string family = "gaussian";  // gaussian | uniform | snapshot
    double mass = 1.0;
    double center_x = 0.0;
    double center_y = 1.0;
    double width = 0.1;
    double background = 0.0;  // uniform floor density added under the Gaussian
    std::string snapshot;
};

struct SimConfig {
    DomainSpec domain;
    double cell_size = 1.0 / 64.0;
    double g = 0.0;
    InitialCondition initial;
    double t_end = 1.0;
    double dt_init = 1e-2;  // upper bound on every step (also capped by cell_size)
    double cfl = 0.5;
    double output_interval = 0.01;
    double snapshot_interval = 0.0;  // 0 disables periodic snapshots
    double solver_tol = 1e-10;
    int solver_max_iter = 0;
    double variance_ceiling_factor = 1e6;  // relative to the initial variance
    double variance_ceiling = 0.0;         // absolute ceiling; overrides the factor when > 0
    bool chemotaxis = true;
    bool diffusion = true;
    // Remove the roundoff mean of rho - rho_M before the Neumann solve instead
    // of rejecting it.
    bool neumann_projection = true;
    long max_steps = 0;  // 0 = unlimited
};

inline void validate(const SimConfig& c) {
    if (!(c.t_end > 0.0)) throw ConfigError("t_end must be positive");
    if (!(c.cfl > 0.0 && c.cfl <= 1.0)) throw ConfigError("cfl must lie in (0, 1]");
    if (!(c.dt_init > 0.0)) throw ConfigError("dt_init must be positive");
    if (!(c.cell_size > 0.0)) throw ConfigError("cell_size must be positive");
    if (!(c.output_interval > 0.0)) throw ConfigError("output_interval must be positive");
    if (!(c.solver_tol > 0.0)) throw ConfigError("solver tolerance must be positive");
    if (c.snapshot_interval < 0.0) throw ConfigError("snapshot_interval must be nonnegative");
    if (!(c.variance_ceiling_factor > 0.0)) throw ConfigError("variance_ceiling_factor must be positive");
    if (c.initial.family != "gaussian" && c.initial.family != "uniform" && c.initial.family != "snapshot")
        throw ConfigError("unknown initial condition family '" + c.initial.family + "'");
    if (c.initial.family != "snapshot" && !(c.initial.mass > 0.0)) throw ConfigError("initial mass must be positive");
    if (c.initial.background < 0.0) throw ConfigError("background density must be nonnegative");
}

inline ScalarField initial_density(const SimConfig& c, const MaskPtr& mask) {
    const auto& ic = c.initial;
    if (ic.family == "snapshot") {
        auto f = read_snapshot(ic.snapshot);
        if (!f.mask->same_layout(*mask)) throw ConfigError("snapshot grid does not match the configured grid");
        return ScalarField(mask, std::move(f.values));
    }
    if (ic.family == "uniform") return ScalarField(mask, ic.mass / mask->area());
    const double bump_mass = ic.mass - ic.background * mask->area();
    if (!(bump_mass > 0.0)) throw ConfigError("background density exceeds the total mass");
    ScalarField g = sample(mask, [&](double x, double y) {
        const double dx = x - ic.center_x, dy = y - ic.center_y;
        return std::exp(-(dx * dx + dy * dy) / (2.0 * ic.width * ic.width));
    });
    const double s = integral(g);
    if (!(s > 0.0)) throw ConfigError("initial Gaussian has no support on the grid");
    for (auto& v : g.values) v = ic.background + v * bump_mass / s;
    return g;
}

struct SimState {
    double t = 0.0;
    ScalarField rho;
    ScalarField c;
    FaceVelocity u;
    long step_count = 0;
};

// One output row. Column order is part of the CSV contract.
struct TraceRow {
    double t = 0.0, mass = 0.0, min_rho = 0.0, gamma = 0.0, grad_l2sq = 0.0, hminus1_d1_sq = 0.0, energy = 0.0,
           power_darcy = 0.0, power_diff = 0.0, power_chemo = 0.0, strat_frac = 0.0, lambda = 0.0;
};

inline constexpr const char* kTraceHeader =
    "t,mass,min_rho,gamma,grad_l2sq,hminus1_d1_sq,energy,power_darcy,power_diff,power_chemo,strat_frac,lambda";

inline void write_trace_row(std::ostream& os, const TraceRow& r) {
    os << std::setprecision(17) << r.t << ',' << r.mass << ',' << r.min_rho << ',' << r.gamma << ',' << r.grad_l2sq
       << ',' << r.hminus1_d1_sq << ',' << r.energy << ',' << r.power_darcy << ',' << r.power_diff << ','
       << r.power_chemo << ',' << r.strat_frac << ',' << r.lambda << '\n';
}

inline void write_trace(const std::vector<TraceRow>& rows, std::ostream& os) {
    os << kTraceHeader << '\n';
    for (const auto& r : rows) write_trace_row(os, r);
}

inline std::vector<TraceRow> read_trace(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw DataError("empty trace");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kTraceHeader) throw DataError("trace header does not match the expected column order");
    std::vector<TraceRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> v;
        while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
        if (v.size() != 12) throw DataError("trace row has " + std::to_string(v.size()) + " columns");
        rows.push_back({v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11]});
    }
    return rows;
}

inline std::vector<TraceRow> read_trace(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path);
    return read_trace(is);
}

enum class RunStatus { completed, variance_blowup, step_error };

inline const char* to_string(RunStatus s) {
    switch (s) {
        case RunStatus::completed: return "completed";
        case RunStatus::variance_blowup: return "variance_blowup";
        default: return "step_error";
    }
}

class Simulator {
public:
    Simulator(SimConfig cfg, MaskPtr mask, ScalarField rho0)
        : cfg_(std::move(cfg)),
          mask_(std::move(mask)),
          neumann_(mask_, BC::neumann_zero_flux),
          dirichlet_(mask_, BC::dirichlet_zero),
          diffusion_(mask_, BC::neumann_zero_flux) {
        validate(cfg_);
        if (!rho0.mask->same_layout(*mask_)) throw ShapeError("initial density lives on a different mask");
        state_.rho = ScalarField(mask_, std::move(rho0.values));
        state_.c = ScalarField(mask_);
        state_.u = FaceVelocity{std::vector<double>(mask_->size(), 0.0), std::vector<double>(mask_->size(), 0.0)};
        mass0_ = integral(state_.rho);
        rho_mean_ = mass0_ / mask_->area();
        psi_.assign(mask_->size(), 0.0);
        update_fields();
    }

    const SimState& state() const { return state_; }
    const SimConfig& config() const { return cfg_; }
    const MaskPtr& mask() const { return mask_; }
    double rho_mean() const { return rho_mean_; }
    double initial_mass() const { return mass0_; }
    const EllipticSolver& neumann_solver() const { return neumann_; }
    const EllipticSolver& dirichlet_solver() const { return dirichlet_; }
    const EllipticSolver& diffusion_solver() const { return diffusion_; }

    // Solves for c and u from the current density.
    void update_fields() {
        const auto& m = *mask_;
        if (cfg_.chemotaxis) {
            ScalarField rhs(mask_);
            for (std::size_t i = 0; i < m.size(); ++i) rhs[i] = state_.rho[i] - rho_mean_;
            state_.c = neumann_.solve(rhs, cfg_.solver_tol, cfg_.solver_max_iter, cfg_.neumann_projection, &state_.c).value;
        }
        state_.u = velocity_biot_savart(dirichlet_, state_.rho, cfg_.g, cfg_.solver_tol, &psi_, &psi_);
    }

    // Largest dt keeping the explicit upwind update positivity preserving.
    double stable_dt() const {
        const auto& m = *mask_;
        const double dx = m.cell_size();
        double worst = 0.0;
        std::vector<double> out(m.size(), 0.0);
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (auto e = m.east(i); e != GridMask::none) {
                const double v = drift_east(i, static_cast<std::size_t>(e));
                if (v > 0) out[i] += v; else out[static_cast<std::size_t>(e)] -= v;
            }
            if (auto n = m.north(i); n != GridMask::none) {
                const double v = drift_north(i, static_cast<std::size_t>(n));
                if (v > 0) out[i] += v; else out[static_cast<std::size_t>(n)] -= v;
            }
        }
        for (double o : out) worst = std::max(worst, o);
        const double cap = std::min(cfg_.dt_init, dx);
        if (!(worst > 0.0)) return cap;
        return std::min(cap, cfg_.cfl * dx / worst);
    }

    // Advances by exactly dt using the fields computed at the start of the step.
    void step(double dt) {
        if (!(dt > 0.0)) throw StepError("time step must be positive");
        const auto& m = *mask_;
        const double dx = m.cell_size();
        std::vector<double> rho = state_.rho.values;
        const double k = dt / dx;
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (auto e = m.east(i); e != GridMask::none) {
                const auto j = static_cast<std::size_t>(e);
                const double v = drift_east(i, j);
                const double f = k * v * (v > 0 ? state_.rho[i] : state_.rho[j]);
                rho[i] -= f;
                rho[j] += f;
            }
            if (auto n = m.north(i); n != GridMask::none) {
                const auto j = static_cast<std::size_t>(n);
                const double v = drift_north(i, j);
                const double f = k * v * (v > 0 ? state_.rho[i] : state_.rho[j]);
                rho[i] -= f;
                rho[j] += f;
            }
        }
        if (cfg_.diffusion) {
            const double alpha = dt / (dx * dx);
            // Warm start from the previous step's implicit increment, rescaled to this alpha.
            std::vector<double> plus = rho;
            if (diff_increment_.size() == plus.size() && diff_alpha_ > 0.0) {
                const double scale = alpha / diff_alpha_;
                for (std::size_t i = 0; i < plus.size(); ++i) plus[i] += scale * diff_increment_[i];
            }
            const int iters = cfg_.solver_max_iter > 0 ? cfg_.solver_max_iter : default_max_iter(m.size());
            const auto res = diffusion_.solve_raw(rho, plus, 1.0, alpha, cfg_.solver_tol, iters);
            if (!res.converged) throw ConvergenceError("diffusion solve did not converge", res.residual, res.iterations);
            diff_increment_.resize(plus.size());
            for (std::size_t i = 0; i < plus.size(); ++i) diff_increment_[i] = plus[i] - rho[i];
            diff_alpha_ = alpha;
            // Apply the implicit diffusion as face fluxes so mass is conserved to roundoff.
            for (std::size_t i = 0; i < m.size(); ++i) {
                if (auto e = m.east(i); e != GridMask::none) {
                    const auto j = static_cast<std::size_t>(e);
                    const double f = alpha * (plus[j] - plus[i]);
                    rho[i] += f;
                    rho[j] -= f;
                }
                if (auto n = m.north(i); n != GridMask::none) {
                    const auto j = static_cast<std::size_t>(n);
                    const double f = alpha * (plus[j] - plus[i]);
                    rho[i] += f;
                    rho[j] -= f;
                }
            }
        }
        double lo = rho[0], hi = rho[0];
        for (double v : rho) { lo = std::min(lo, v); hi = std::max(hi, v); }
        if (!std::isfinite(lo) || !std::isfinite(hi)) throw StepError("non-finite density");
        if (lo < -1e-8 * std::max(hi, 0.0)) throw StepError("positivity violated: new minimum below bound");
        state_.rho.values = std::move(rho);
        state_.t += dt;
        ++state_.step_count;
        update_fields();
    }

    double variance() const {
        double s = 0.0;
        for (double v : state_.rho.values) s += (v - rho_mean_) * (v - rho_mean_);
        return s * mask_->cell_area();
    }

    TraceRow diagnostics() {
        const auto& m = *mask_;
        const auto& rho = state_.rho;
        TraceRow r;
        r.t = state_.t;
        r.mass = integral(rho);
        r.min_rho = *std::min_element(rho.values.begin(), rho.values.end());
        const auto dec = decompose(rho);
        r.gamma = variance();
        r.grad_l2sq = grad_l2sq(rho);
        const ScalarField g1 = d1(rho);
        bool zero = std::all_of(g1.values.begin(), g1.values.end(), [](double v) { return v == 0.0; });
        if (!zero) {
            ScalarField guess(mask_, hm_guess_.size() == m.size() ? hm_guess_ : std::vector<double>(m.size(), 0.0));
            const auto sol = dirichlet_.solve(g1, std::min(cfg_.solver_tol, 1e-10), cfg_.solver_max_iter, false, &guess);
            hm_guess_ = sol.value.values;
            r.hminus1_d1_sq = std::max(0.0, inner(g1, sol.value));
        }
        const double h = m.domain_height();
        const double sign = cfg_.g < 0.0 ? -1.0 : 1.0;
        double e = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) e += (cfg_.g < 0.0 ? h - m.x2(i) : m.x2(i)) * rho[i];
        r.energy = e * m.cell_area();
        r.power_darcy = -std::abs(cfg_.g) * r.hminus1_d1_sq;
        r.power_diff = cfg_.diffusion ? -sign * integral_d2(rho) : 0.0;
        if (cfg_.chemotaxis) {
            double s = 0.0;
            for (std::size_t i = 0; i < m.size(); ++i)
                if (auto n = m.north(i); n != GridMask::none) {
                    const auto j = static_cast<std::size_t>(n);
                    s += 0.5 * (rho[i] + rho[j]) * (state_.c[j] - state_.c[i]);
                }
            r.power_chemo = sign * s * m.cell_size();
        }
        const double su = unstratified_l2sq(dec), ss = stratified_l2sq(dec);
        r.strat_frac = (ss + su) > 0.0 ? ss / (ss + su) : 0.0;
        double smax = 0.0;
        for (const auto& row : m.rows()) {
            double s = 0.0;
            for (std::int32_t c = 0; c < row.count; ++c) {
                const double v = dec.fluctuation[row.offset + static_cast<std::size_t>(c)];
                s += v * v;
            }
            smax = std::max(smax, s * m.cell_size());
        }
        r.lambda = r.gamma > 0.0 ? smax / std::pow(r.gamma, 1.5) : 0.0;
        return r;
    }

private:
    double drift_east(std::size_t i, std::size_t j) const {
        double v = state_.u.east[i];
        if (cfg_.chemotaxis) v += (state_.c[j] - state_.c[i]) / mask_->cell_size();
        return v;
    }
    double drift_north(std::size_t i, std::size_t j) const {
        double v = state_.u.north[i];
        if (cfg_.chemotaxis) v += (state_.c[j] - state_.c[i]) / mask_->cell_size();
        return v;
    }

    SimConfig cfg_;
    MaskPtr mask_;
    EllipticSolver neumann_, dirichlet_, diffusion_;
    SimState state_;
    double mass0_ = 0.0, rho_mean_ = 0.0;
    std::vector<double> psi_, hm_guess_, diff_increment_;
    double diff_alpha_ = 0.0;
};

struct RunResult {
    RunStatus status = RunStatus::completed;
    std::string message;
    std::vector<TraceRow> trace;
    double variance_ceiling = 0.0;
    double wall_seconds = 0.0;
    long steps = 0;
    double max_mass_drift = 0.0;  // relative
    double min_rho_ratio = 1.0;   // min over outputs of min_rho / max_rho
    std::vector<std::string> snapshots;
    std::optional<ScalarField> final_rho;
};

struct RunOptions {
    std::string out_dir;  // snapshots go to out_dir/snapshots when set
    std::function<void(const TraceRow&)> on_output;
};

inline RunResult run(const SimConfig& cfg, const MaskPtr& mask, const RunOptions& opt = {}) {
    validate(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    RunResult res;
    Simulator sim(cfg, mask, initial_density(cfg, mask));
    const double gamma0 = sim.variance();
    res.variance_ceiling = cfg.variance_ceiling > 0.0 ? cfg.variance_ceiling : cfg.variance_ceiling_factor * gamma0;
    if (!(res.variance_ceiling > 0.0)) res.variance_ceiling = std::numeric_limits<double>::infinity();

    std::filesystem::path snapdir;
    if (!opt.out_dir.empty() && cfg.snapshot_interval > 0.0) {
        snapdir = std::filesystem::path(opt.out_dir) / "snapshots";
        std::filesystem::create_directories(snapdir);
    }
    int snap_index = 0;
    auto snapshot = [&]() {
        if (snapdir.empty()) return;
        std::ostringstream name;
        name << "rho_" << std::setw(5) << std::setfill('0') << snap_index++ << ".strf";
        const auto p = (snapdir / name.str()).string();
        write_snapshot(sim.state().rho, p);
        res.snapshots.push_back(p);
    };
    auto emit = [&]() {
        const auto row = sim.diagnostics();
        double hi = *std::max_element(sim.state().rho.values.begin(), sim.state().rho.values.end());
        res.max_mass_drift = std::max(res.max_mass_drift, std::abs(row.mass - sim.initial_mass()) / sim.initial_mass());
        res.min_rho_ratio = std::min(res.min_rho_ratio, hi > 0.0 ? row.min_rho / hi : 0.0);
        res.trace.push_back(row);
        if (opt.on_output) opt.on_output(row);
    };

    emit();
    snapshot();
    const double eps_t = 1e-12 * cfg.t_end;
    double next_output = cfg.output_interval;
    double next_snapshot = cfg.snapshot_interval;
    try {
        while (sim.state().t < cfg.t_end - eps_t) {
            if (cfg.max_steps > 0 && sim.state().step_count >= cfg.max_steps) {
                res.status = RunStatus::step_error;
                res.message = "step budget exhausted";
                break;
            }
            const double target = std::min(next_output, cfg.t_end);
            double dt = std::min(sim.stable_dt(), target - sim.state().t);
            if (!(dt > 1e-14 * std::max(1.0, cfg.t_end))) throw StepError("time step collapsed");
            // A post-hoc positivity failure leaves the state untouched; retry with smaller steps.
            for (int attempt = 0;; ++attempt) {
                try {
                    sim.step(dt);
                    break;
                } catch (const StepError&) {
                    if (attempt >= 8) throw;
                    dt *= 0.5;
                }
            }
            const bool at_output = sim.state().t >= target - eps_t;
            const double gamma = sim.variance();
            if (gamma > res.variance_ceiling) {
                res.status = RunStatus::variance_blowup;
                res.message = "variance exceeded the ceiling";
                emit();
                break;
            }
            if (at_output) {
                emit();
                while (next_output <= sim.state().t + eps_t) next_output += cfg.output_interval;
                if (cfg.snapshot_interval > 0.0 && sim.state().t >= next_snapshot - eps_t) {
                    snapshot();
                    while (next_snapshot <= sim.state().t + eps_t) next_snapshot += cfg.snapshot_interval;
                }
            }
        }
    } catch (const Error& e) {
        res.status = RunStatus::step_error;
        res.message = e.what();
        if (!opt.out_dir.empty()) {
            std::filesystem::create_directories(opt.out_dir);
            const auto p = (std::filesystem::path(opt.out_dir) / "state_dump.strf").string();
            write_snapshot(sim.state().rho, p);
            res.snapshots.push_back(p);
        }
    }
    res.steps = sim.state().step_count;
    res.final_rho = sim.state().rho;
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

inline RunResult run(const SimConfig& cfg, const RunOptions& opt = {}) {
    validate(cfg);
    return run(cfg, rasterize(cfg.domain, cfg.cell_size), opt);
}

// Time-averaged relative mismatch between the finite-difference dE/dt of the
// trace and the three-term power formula:
//   mean|dE/dt - P| / mean(|P_darcy| + |P_diff| + |P_chemo|)
// over interior samples, with centred differences on the (possibly uneven) output times.
inline double power_identity_mismatch(const std::vector<TraceRow>& tr) {
    if (tr.size() < 3) throw DataError("power identity needs at least 3 trace rows");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 1; i + 1 < tr.size(); ++i) {
        const double dt = tr[i + 1].t - tr[i - 1].t;
        if (!(dt > 0.0)) continue;
        const double de = (tr[i + 1].energy - tr[i - 1].energy) / dt;
        const double p = tr[i].power_darcy + tr[i].power_diff + tr[i].power_chemo;
        num += std::abs(de - p);
        den += std::abs(tr[i].power_darcy) + std::abs(tr[i].power_diff) + std::abs(tr[i].power_chemo);
    }
    if (!(den > 0.0)) return 0.0;
    return num / den;
}

}  // namespace pksipm
