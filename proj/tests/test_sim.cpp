#include <cmath>

#include <gtest/gtest.h>

#include <pksipm/pksipm.hpp>

using namespace pksipm;

namespace {

SimConfig base(double dx = 1.0 / 32) {
    SimConfig c;
    c.domain = make_disk(1.0);
    c.cell_size = dx;
    c.initial.mass = 1.0;
    c.initial.center_x = 0.2;
    c.initial.center_y = 1.1;
    c.initial.width = 0.2;
    c.t_end = 0.05;
    c.output_interval = 0.01;
    return c;
}

double l2(const ScalarField& f) { return std::sqrt(inner(f, f)); }

}  // namespace

TEST(Simulator, ConstantDensityIsAFixedPoint) {
    auto c = base();
    c.g = 5.0;
    c.initial.family = "uniform";
    auto m = rasterize(c.domain, c.cell_size);
    Simulator sim(c, m, initial_density(c, m));
    const auto rho0 = sim.state().rho.values;
    for (int k = 0; k < 20; ++k) sim.step(sim.stable_dt());
    for (std::size_t i = 0; i < rho0.size(); ++i) EXPECT_NEAR(sim.state().rho[i], rho0[i], 1e-10 * rho0[i]);
    const auto d = sim.diagnostics();
    EXPECT_NEAR(d.gamma, 0.0, 1e-20);
    EXPECT_NEAR(d.power_darcy, 0.0, 1e-20);
    EXPECT_NEAR(d.power_diff, 0.0, 1e-12);
    EXPECT_NEAR(d.power_chemo, 0.0, 1e-12);
    double ex = 0.0;
    for (std::size_t i = 0; i < m->size(); ++i) ex += m->x2(i);
    EXPECT_NEAR(d.energy, sim.rho_mean() * ex * m->cell_area(), 1e-12);
}

TEST(Simulator, EveryStepConservesMassAndPositivity) {
    auto c = base();
    c.g = 5.0;
    c.initial.mass = 8.0;
    c.initial.width = 0.1;
    auto m = rasterize(c.domain, c.cell_size);
    Simulator sim(c, m, initial_density(c, m));
    const double m0 = sim.initial_mass();
    for (int k = 0; k < 60; ++k) {
        const double before = integral(sim.state().rho);
        sim.step(sim.stable_dt());
        const double after = integral(sim.state().rho);
        ASSERT_LE(std::abs(after - before), 1e-12 * m0) << k;
        const auto& v = sim.state().rho.values;
        ASSERT_GE(*std::min_element(v.begin(), v.end()), -1e-8 * *std::max_element(v.begin(), v.end()));
    }
}

TEST(Simulator, EnergyStaysInItsBounds) {
    for (double g : {5.0, -5.0, 0.0}) {
        auto c = base();
        c.g = g;
        const auto res = run(c);
        ASSERT_EQ(res.status, RunStatus::completed) << res.message;
        const double h = c.domain.height;
        for (const auto& r : res.trace) {
            EXPECT_GE(r.energy, 0.0);
            EXPECT_LE(r.energy, h * r.mass);
        }
        EXPECT_LE(res.max_mass_drift, 1e-10);
    }
}

TEST(Simulator, ZeroGravityRadialDataStaysSymmetric) {
    auto c = base();
    c.g = 0.0;
    c.initial.center_x = 0.0;
    c.initial.center_y = 1.0;
    c.initial.mass = 3.0;
    auto m = rasterize(c.domain, c.cell_size);
    Simulator sim(c, m, initial_density(c, m));
    for (int k = 0; k < 100; ++k) sim.step(sim.stable_dt());
    for (double v : sim.state().u.east) EXPECT_EQ(v, 0.0);
    for (double v : sim.state().u.north) EXPECT_EQ(v, 0.0);
    const auto& rho = sim.state().rho;
    const double hi = *std::max_element(rho.values.begin(), rho.values.end());
    double asym = 0.0;
    for (std::size_t i = 0; i < m->size(); ++i) {
        const auto r = static_cast<std::int64_t>(m->row_of(i));
        const auto j = m->index(-1 - m->col_of(i), r);
        const auto k = m->index(m->col_of(i), static_cast<std::int64_t>(m->rows().size()) - 1 - r);
        ASSERT_NE(j, GridMask::none);
        ASSERT_NE(k, GridMask::none);
        asym = std::max({asym, std::abs(rho[i] - rho[static_cast<std::size_t>(j)]), std::abs(rho[i] - rho[static_cast<std::size_t>(k)])});
    }
    EXPECT_LE(asym, 1e-6 * hi);
}

// Pure transport by the Darcy velocity; L2 loss per unit time comes only from
// upwind dissipation, so it must shrink at first order under refinement.
double transport_l2_drift(double dx, double width, double cx, double cy) {
    auto c = base(dx);
    c.g = 1.0;
    c.chemotaxis = false;
    c.diffusion = false;
    c.initial.width = width;
    c.initial.center_x = cx;
    c.initial.center_y = cy;
    c.initial.background = 0.1;
    auto m = rasterize(c.domain, c.cell_size);
    Simulator sim(c, m, initial_density(c, m));
    const double n0 = l2(sim.state().rho);
    while (sim.state().t < 0.1) sim.step(std::min(sim.stable_dt(), 0.1 - sim.state().t + 1e-15));
    return std::abs(l2(sim.state().rho) - n0) / n0 / sim.state().t;
}

TEST(Simulator, AdvectionAloneNearlyPreservesL2) {
    EXPECT_LE(transport_l2_drift(1.0 / 128, 0.5, 0.2, 1.1), 1e-3);
}

TEST(Simulator, AdvectionDissipationIsFirstOrder) {
    const double coarse = transport_l2_drift(1.0 / 64, 0.2, 0.3, 1.2);
    const double fine = transport_l2_drift(1.0 / 128, 0.2, 0.3, 1.2);
    EXPECT_GT(fine / coarse, 0.35);
    EXPECT_LT(fine / coarse, 0.65);
}

TEST(Run, WatchdogAndStepBudget) {
    auto c = base();
    c.g = 0.0;
    c.initial.mass = 30.0;
    c.initial.width = 0.1;
    c.variance_ceiling_factor = 1.01;
    c.t_end = 1.0;
    const auto blow = run(c);
    EXPECT_EQ(blow.status, RunStatus::variance_blowup);
    EXPECT_GT(blow.trace.back().gamma, blow.variance_ceiling);

    auto d = base();
    d.max_steps = 3;
    d.t_end = 1.0;
    const auto capped = run(d);
    EXPECT_EQ(capped.status, RunStatus::step_error);
    EXPECT_EQ(capped.steps, 3);
}

TEST(Run, ConfigValidation) {
    auto c = base();
    c.cfl = 1.5;
    EXPECT_THROW(run(c), ConfigError);
    c = base();
    c.initial.family = "lorentzian";
    EXPECT_THROW(run(c), ConfigError);
    c = base();
    c.t_end = 0.0;
    EXPECT_THROW(validate(c), ConfigError);
}

TEST(Run, PowerIdentityNeedsThreeRows) {
    std::vector<TraceRow> two(2);
    EXPECT_THROW(power_identity_mismatch(two), DataError);
}
