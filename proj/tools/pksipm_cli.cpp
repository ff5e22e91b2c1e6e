#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <pksipm/config.hpp>
#include <pksipm/nash.hpp>
#include <pksipm/pksipm.hpp>
#include <pksipm/regularity.hpp>

#ifndef PKSIPM_VERSION
#define PKSIPM_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace pksipm;

namespace {

struct Common {
    std::string config;
    std::string out = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
    double resolution = 0.0;
};

void write_json(const fs::path& p, const Json& j) {
    fs::create_directories(p.parent_path());
    std::ofstream os(p);
    os << j.dump(2) << '\n';
}

// Runs one simulation into dir; returns the manifest.
Json simulate_into(const Json& cfg_json, const fs::path& dir, const Common& c) {
    SimConfig cfg = parse_sim_config(cfg_json);
    if (c.resolution > 0.0) cfg.cell_size = c.resolution;
    fs::create_directories(dir);
    const auto t0 = std::chrono::steady_clock::now();
    RunOptions opt;
    opt.out_dir = dir.string();
    const auto res = run(cfg, opt);
    {
        std::ofstream os(dir / "trace.csv");
        write_trace(res.trace, os);
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Json m = {{"version", PKSIPM_VERSION},
              {"config_hash", config_hash(cfg_json)},
              {"config", cfg_json},
              {"resolution", cfg.cell_size},
              {"seed", c.seed},
              {"status", to_string(res.status)},
              {"message", res.message},
              {"wall_seconds", wall},
              {"steps", res.steps},
              {"final_time", res.trace.empty() ? 0.0 : res.trace.back().t},
              {"variance_ceiling", finite_or_null(res.variance_ceiling)},
              {"max_relative_mass_drift", res.max_mass_drift},
              {"min_rho_ratio", res.min_rho_ratio},
              {"trace", "trace.csv"},
              {"snapshots", res.snapshots}};
    if (res.status == RunStatus::step_error && !res.snapshots.empty()) m["state_dump"] = res.snapshots.back();
    write_json(dir / "manifest.json", m);
    return m;
}

int cmd_simulate(const Common& c) {
    const Json j = load_json(c.config);
    const auto m = simulate_into(j, c.out, c);
    std::cout << "status " << m["status"].get<std::string>() << "  steps " << m["steps"] << "  wall "
              << m["wall_seconds"].get<double>() << " s\n";
    if (m["status"] == "step_error") {
        std::cerr << "run failed: " << m["message"].get<std::string>();
        if (m.contains("state_dump")) std::cerr << " (state dump: " << m["state_dump"].get<std::string>() << ")";
        std::cerr << '\n';
        return 1;
    }
    return 0;
}

// {"domain": {...}, "resolution": dx, "family": {...}, "inequalities": [...], "probe": false}
int cmd_nash_audit(const Common& c, const std::vector<std::string>& names_flag) {
    const Json j = load_json(c.config);
    detail::require_object(j, "nash-audit config");
    detail::allow_keys(j, "nash-audit config", {"domain", "resolution", "family", "inequalities", "probe"});
    const DomainSpec d = parse_domain(detail::need<Json>(j, "domain", "nash-audit config"));
    const double dx = c.resolution > 0.0 ? c.resolution : detail::get<double>(j, "resolution", 1.0 / 64.0);
    FamilySpec spec = parse_family_spec(detail::need<Json>(j, "family", "nash-audit config"));
    if (c.seed_set) spec.seed = c.seed;
    std::vector<std::string> raw = names_flag;
    if (raw.empty()) raw = detail::get<std::vector<std::string>>(j, "inequalities", {});
    std::vector<Inequality> names;
    try {
        for (const auto& s : raw) names.push_back(parse_inequality(s));
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    if (names.empty()) names = theorem_level_inequalities();

    const auto mask = rasterize(d, dx);
    const auto ctx = NashContext::from(d);
    const auto rep = family_sweep(spec, mask, names, &ctx, c.threads);

    const fs::path out(c.out);
    fs::create_directories(out / "argmax");
    {
        std::ofstream os(out / "sweep.csv");
        write_sweep_csv(rep, os);
    }
    Json summary = Json::array();
    for (const auto& s : rep.summary) {
        Json e = {{"name", to_string(s.name)},         {"max_ratio", s.max_ratio},
                  {"argmax_id", s.argmax_id},          {"applicable", s.applicable},
                  {"hypothesis_failed", s.hypothesis_failed}, {"degenerate", s.degenerate},
                  {"histogram_log10_lo", RatioHistogram::lo}, {"histogram_bin_width", RatioHistogram::width},
                  {"histogram", s.histogram.counts}};
        if (s.argmax_id >= 0) {
            const auto p = out / "argmax" / (std::string(to_string(s.name)) + ".strf");
            write_snapshot(generate_field(spec, mask, s.argmax_id), p.string());
            e["argmax_snapshot"] = p.lexically_relative(out).string();
        }
        summary.push_back(e);
    }
    Json meta = {{"version", PKSIPM_VERSION}, {"config_hash", config_hash(j)}, {"resolution", dx},
                 {"seed", spec.seed},         {"count", spec.count},            {"family", to_string(spec.kind)},
                 {"summary", summary}};
    if (detail::get<bool>(j, "probe", false)) {
        Json fits = Json::array();
        std::vector<Inequality> single;
        for (auto q : names)
            if (!is_conditional(q)) single.push_back(q);
        for (const auto& f : scaling_probe(spec, mask, single))
            fits.push_back({{"name", to_string(f.name)},
                            {"factors", f.factors},
                            {"stated_exponents", f.stated_exponents},
                            {"slopes", f.slopes},
                            {"residuals", f.residuals},
                            {"ratios", f.ratios}});
        meta["scaling_probe"] = fits;
    }
    write_json(out / "summary.json", meta);
    for (const auto& s : rep.summary)
        std::cout << to_string(s.name) << "  max ratio " << s.max_ratio << "  (field " << s.argmax_id << ", "
                  << s.applicable << " applicable)\n";
    return 0;
}

int cmd_domain_info(const Common& c) {
    Json j = load_json(c.config);
    if (j.is_object() && j.contains("domain")) j = j.at("domain");
    const DomainSpec d = parse_domain(j);
    Json info = to_json(geometric_constants(d), d);
    if (c.resolution > 0.0) {
        const auto m = rasterize(d, c.resolution);
        info["resolution"] = c.resolution;
        info["cells"] = m->size();
        info["rows"] = m->rows().size();
        info["dropped_rows"] = m->report().dropped_rows;
        info["dropped_area"] = m->report().dropped_area;
    }
    std::cout << info.dump(2) << '\n';
    return 0;
}

int cmd_ode_check(const Common& c, const std::string& trace_path, double mass_flag) {
    const auto trace = read_trace(trace_path);
    if (trace.empty()) throw DataError("trace has no rows");
    const auto traj = OdeTrajectory::from_trace(trace);
    const auto kc = parse_ode_constants(load_json(c.config));
    OdeConstants k = kc.constants;
    Json extra = Json::object();
    if (kc.fit) {
        FitOptions fo;
        fo.mass = mass_flag > 0.0 ? mass_flag : trace.front().mass;
        fo.combined_constant = kc.combined_constant;
        const auto f = fit_constants(traj, fo);
        const double p = k.p, q = k.q, r = k.r, s = k.s;
        k = f.constants;
        k.p = p;
        k.q = q;
        k.r = r;
        k.s = s;
        extra["fitted"] = true;
        extra["combined_constant"] = f.combined_constant;
        extra["combined_from_audit"] = f.combined_from_audit;
    }
    const auto v = verify(traj, k);
    Json out = to_json(v);
    out["constants"] = to_json(k);
    out.update(extra);
    std::cout << out.dump(2) << '\n';
    if (!c.out.empty()) write_json(fs::path(c.out) / "verdict.json", out);
    return 0;
}

// {"template": {...simulation config...}, "grid": {"g": [0, 5], "initial.mass": [1, 18.85]}}
int cmd_sweep(const Common& c) {
    const Json j = load_json(c.config);
    detail::require_object(j, "sweep config");
    detail::allow_keys(j, "sweep config", {"template", "grid"});
    const Json base = detail::need<Json>(j, "template", "sweep config");
    const Json grid = detail::need<Json>(j, "grid", "sweep config");
    detail::require_object(grid, "grid");
    std::vector<std::string> keys;
    std::vector<std::vector<Json>> values;
    for (auto it = grid.begin(); it != grid.end(); ++it) {
        if (!it.value().is_array() || it.value().empty()) throw ConfigError("grid entry '" + it.key() + "' must be a non-empty list");
        keys.push_back(it.key());
        values.emplace_back(it.value().begin(), it.value().end());
    }
    auto pointer = [](std::string k) {
        for (auto& ch : k)
            if (ch == '.') ch = '/';
        return Json::json_pointer("/" + k);
    };
    // Validate every cell before running any of them.
    std::size_t cells = 1;
    for (const auto& v : values) cells *= v.size();
    std::vector<Json> configs;
    std::vector<std::vector<Json>> chosen;
    for (std::size_t cell = 0; cell < cells; ++cell) {
        Json cfg = base;
        std::vector<Json> pick;
        std::size_t rem = cell;
        for (std::size_t k = keys.size(); k-- > 0;) {
            const auto& v = values[k];
            pick.insert(pick.begin(), v[rem % v.size()]);
            rem /= v.size();
        }
        for (std::size_t k = 0; k < keys.size(); ++k) cfg[pointer(keys[k])] = pick[k];
        parse_sim_config(cfg);
        configs.push_back(cfg);
        chosen.push_back(pick);
    }
    const fs::path out(c.out);
    fs::create_directories(out);
    std::ofstream index(out / "index.csv");
    index << "cell";
    for (const auto& k : keys) index << ',' << k;
    index << ",status,wall_seconds,final_time,manifest\n";
    int worst = 0;
    for (std::size_t cell = 0; cell < cells; ++cell) {
        std::ostringstream name;
        name << "cell_" << std::setw(3) << std::setfill('0') << cell;
        const auto m = simulate_into(configs[cell], out / name.str(), c);
        index << cell;
        for (const auto& v : chosen[cell]) index << ',' << v.dump();
        index << ',' << m["status"].get<std::string>() << ',' << m["wall_seconds"].get<double>() << ','
              << m["final_time"].get<double>() << ',' << name.str() << "/manifest.json\n";
        std::cout << name.str() << "  " << m["status"].get<std::string>() << '\n';
        if (m["status"] == "step_error") worst = 1;
    }
    return worst;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PKS-IPM numerical lab"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(PKSIPM_VERSION));
    Common c;
    auto common = [&](CLI::App* s, bool need_config = true) {
        auto* o = s->add_option("--config", c.config, "JSON config file");
        if (need_config) o->required();
        s->add_option("--out", c.out, "output directory");
        s->add_option("--seed", c.seed, "random seed")->each([&](const std::string&) { c.seed_set = true; });
        s->add_option("--threads", c.threads, "worker threads for data-parallel work")->check(CLI::PositiveNumber);
        s->add_option("--resolution", c.resolution, "cell size override")->check(CLI::PositiveNumber);
    };
    auto* sim = app.add_subcommand("simulate", "run one simulation");
    common(sim);
    auto* nash = app.add_subcommand("nash-audit", "audit inequalities over a field family");
    common(nash);
    std::vector<std::string> names;
    nash->add_option("--inequalities", names, "inequality names (default: theorem-level set)")->delimiter(',');
    auto* info = app.add_subcommand("domain-info", "print geometric constants of a domain");
    common(info);
    auto* ode = app.add_subcommand("ode-check", "check the comparison-ODE premises on a trace");
    common(ode);
    std::string trace;
    double mass = 0.0;
    ode->add_option("--trace", trace, "trace CSV")->required();
    ode->add_option("--mass", mass, "total mass (default: first trace row)");
    auto* sweep = app.add_subcommand("sweep", "grid of simulations from a template");
    common(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        if (*sim) return cmd_simulate(c);
        if (*nash) return cmd_nash_audit(c, names);
        if (*info) return cmd_domain_info(c);
        if (*ode) {
            if (ode->count("--out") == 0) c.out.clear();
            return cmd_ode_check(c, trace, mass);
        }
        if (*sweep) return cmd_sweep(c);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ParameterError& e) {
        std::cerr << "parameter error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
