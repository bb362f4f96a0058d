#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "neuralfd/errors.hpp"
#include "neuralfd/traffic_sim.hpp"

using namespace neuralfd;
using namespace neuralfd::sim;

namespace {

ScenarioConfig steady_config(double inflow) {
    ScenarioConfig c;
    c.horizon = 600.0;
    c.inflow = {{0.0, inflow}};
    c.seed = 5;
    return c;
}

// Free-flow root of rho u0 (1 - rho/rho_j) = q.
double free_flow_density(const fd::GreenshieldsParams& p, double q) {
    const double a = p.u0 / p.rho_j;
    return (p.u0 - std::sqrt(p.u0 * p.u0 - 4.0 * a * q)) / (2.0 * a);
}

}  // namespace

TEST_CASE("godunov flux cases") {
    const fd::GreenshieldsParams p{44.0, 0.05};
    const double cap = 0.55;
    CHECK(godunov_flux(p, 0.0, 0.0) == 0.0);
    CHECK(godunov_flux(p, 0.025, 0.025) == doctest::Approx(cap));
    // free flow left, empty right: demand limited
    CHECK(godunov_flux(p, 0.01, 0.0) == doctest::Approx(0.01 * 44.0 * 0.8));
    // congested right: supply limited
    CHECK(godunov_flux(p, 0.03, 0.04) == doctest::Approx(0.04 * 44.0 * 0.2));
    // congested left, free right: capacity
    CHECK(godunov_flux(p, 0.04, 0.01) == doctest::Approx(cap));
    CHECK(godunov_flux(p, 0.05, 0.0) == doctest::Approx(cap));
    CHECK(godunov_flux(p, 0.0, 0.05) == 0.0);
    CHECK(godunov_flux(p, 0.025, 0.025, 0.3) == doctest::Approx(0.3 * cap));
}

TEST_CASE("blockage factors") {
    std::vector<Blockage> none;
    auto f = apply_blockage(none, 10.0, 10, 3.5);
    CHECK(f.size() == 11);
    CHECK(std::all_of(f.begin(), f.end(), [](double v) { return v == 1.0; }));

    std::vector<Blockage> two{{7.0, 14.0, 0.0, 20.0, 0.5}, {10.0, 21.0, 5.0, 30.0, 0.5}};
    f = apply_blockage(two, 10.0, 10, 3.5);
    CHECK(f[1] == 1.0);
    CHECK(f[2] == 0.5);   // x = 7
    CHECK(f[3] == 0.25);  // x = 10.5 in both
    CHECK(f[4] == 0.25);  // x = 14
    CHECK(f[5] == 0.5);   // x = 17.5
    f = apply_blockage(two, 20.0, 10, 3.5);  // first window has closed
    CHECK(f[2] == 1.0);
    CHECK(f[3] == 0.5);
    f = apply_blockage(two, 30.0, 10, 3.5);
    CHECK(std::all_of(f.begin(), f.end(), [](double v) { return v == 1.0; }));
}

TEST_CASE("signal plan phases") {
    SignalPlan s{30.0, 20.0, 0.0};
    CHECK_FALSE(s.is_red(0.0));
    CHECK_FALSE(s.is_red(29.9));
    CHECK(s.is_red(30.0));
    CHECK(s.is_red(49.9));
    CHECK_FALSE(s.is_red(50.0));
    SignalPlan shifted{30.0, 20.0, 10.0};
    CHECK(shifted.is_red(5.0));
}

TEST_CASE("config validation") {
    ScenarioConfig c;
    CHECK_NOTHROW(c.validate());
    auto bad = c;
    bad.sim_dt = 0.1;  // 3.5 / 0.1 = 35 < 44
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.roadway_length = 351.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.sample_dt = 0.07;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.blockages = {{0, 10, 0, 10, 0.0}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.inflow = {{10, 0.1}, {5, 0.2}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.initial_density = {0.06};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("demand interpolation") {
    ScenarioConfig c;
    c.inflow = {{0.0, 0.1}, {100.0, 0.3}};
    CHECK(c.demand_at(-5.0) == 0.1);
    CHECK(c.demand_at(50.0) == doctest::Approx(0.2));
    CHECK(c.demand_at(500.0) == 0.3);
}

TEST_CASE("zero inflow gives an empty dataset") {
    ScenarioConfig c;
    c.horizon = 120.0;
    const auto r = run_scenario(c);
    CHECK(std::all_of(r.field.values.begin(), r.field.values.end(), [](double v) { return v == 0.0; }));
    CHECK(r.trajectories.empty());
    for (const auto& d : r.detectors) CHECK(d.crossing_times.empty());
}

TEST_CASE("steady sub-capacity flow matches the free-flow branch") {
    for (double q : {0.1, 0.3, 0.45}) {
        const auto cfg = steady_config(q);
        const auto r = run_scenario(cfg);
        const double rho_ss = free_flow_density(cfg.true_fd, q);
        const double u_ss = fd::eval_greenshields(cfg.true_fd, rho_ss);
        int checked = 0;
        for (const auto& tr : r.trajectories) {
            if (tr.t0 < 60.0 || tr.size() < 3) continue;
            const double avg = (tr.positions.back() - tr.positions.front()) / tr.duration();
            CHECK(avg == doctest::Approx(u_ss).epsilon(0.02));
            ++checked;
        }
        CHECK(checked > 10);
        // every vehicle that entered leaves a row at the entrance detector
        CHECK(r.detectors.front().crossing_times.size() == static_cast<std::size_t>(std::floor(r.vehicles_entered)));
    }
}

TEST_CASE("closed boundaries conserve the vehicle count") {
    ScenarioConfig c;
    c.horizon = 600.0;
    c.closed_boundaries = true;
    c.initial_density.assign(c.cell_count(), 0.0);
    for (std::size_t i = 0; i < c.cell_count(); ++i) {
        c.initial_density[i] = 0.025 + 0.024 * std::sin(0.21 * static_cast<double>(i));
    }
    const double w = c.cell_width;
    double prev = std::accumulate(c.initial_density.begin(), c.initial_density.end(), 0.0) * w;
    double worst = 0.0;
    double lo = 1.0, hi = 0.0;
    run_scenario(c, [&](const StepInfo& s) {
        double total = 0.0;
        for (double v : s.rho) {
            total += v * w;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        worst = std::max(worst, std::abs(total - prev) / prev);
        prev = total;
    });
    CHECK(worst <= 1e-10);
    CHECK(lo >= 0.0);
    CHECK(hi <= c.true_fd.rho_j);
}

TEST_CASE("open-road mass balance and red-signal queue") {
    ScenarioConfig c;
    c.horizon = 400.0;
    c.inflow = {{0.0, 0.4}};
    c.signal = SignalPlan{30.0, 20.0, 0.0};
    double in_road = 0.0;
    double max_rel = 0.0;
    double inflow_total = 0.0, outflow_total = 0.0;
    bool red_outflow = false;
    run_scenario(c, [&](const StepInfo& s) {
        inflow_total += s.inflow * c.sim_dt;
        outflow_total += s.outflow * c.sim_dt;
        const double t_start = s.t - c.sim_dt;
        if (c.signal->is_red(t_start) && s.outflow != 0.0) red_outflow = true;
        in_road = 0.0;
        for (double v : s.rho) in_road += v * c.cell_width;
        const double expected = inflow_total - outflow_total;
        if (expected > 1.0) max_rel = std::max(max_rel, std::abs(in_road - expected) / expected);
    });
    CHECK_FALSE(red_outflow);
    CHECK(max_rel < 1e-9);
}

TEST_CASE("trajectories and detector logs are well formed") {
    ScenarioConfig c;
    c.horizon = 600.0;
    c.inflow = {{0.0, 0.3}};
    c.inflow_jitter = 0.3;
    c.signal = SignalPlan{};
    c.random_blockages = RandomBlockages{10, 100.0, 250.0};
    const auto r = run_scenario(c);
    CHECK(r.trajectories.size() > 100);
    for (const auto& tr : r.trajectories) {
        CHECK(tr.size() >= 2);
        CHECK(tr.speeds.size() == tr.size());
        for (std::size_t k = 0; k < tr.size(); ++k) {
            CHECK(tr.positions[k] >= 0.0);
            CHECK(tr.positions[k] <= c.roadway_length);
            CHECK(tr.speeds[k] >= 0.0);
            CHECK(tr.speeds[k] <= c.true_fd.u0);
            if (k > 0) CHECK(tr.positions[k] >= tr.positions[k - 1]);
        }
        CHECK(std::abs(tr.t0 - std::round(tr.t0)) < 1e-9);
    }
    CHECK(r.detectors.size() == 117);
    for (const auto& d : r.detectors) {
        for (std::size_t i = 1; i < d.crossing_times.size(); ++i) CHECK(d.crossing_times[i] > d.crossing_times[i - 1]);
    }
    const auto& f = r.field;
    CHECK(f.records() == 601);
    CHECK(*std::min_element(f.values.begin(), f.values.end()) >= 0.0);
    CHECK(*std::max_element(f.values.begin(), f.values.end()) <= c.true_fd.rho_j);
}

TEST_CASE("probe subsets and determinism") {
    ScenarioConfig c;
    c.horizon = 300.0;
    c.inflow = {{0.0, 0.3}};
    c.inflow_jitter = 0.2;
    c.random_blockages = RandomBlockages{5, 100.0, 250.0};
    const auto a = run_scenario(c);
    const auto b = run_scenario(c);
    CHECK(a.field.values == b.field.values);
    REQUIRE(a.trajectories.size() == b.trajectories.size());
    for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
        CHECK(a.trajectories[i].positions == b.trajectories[i].positions);
    }
    auto p = c;
    p.probe_count = 20;
    const auto sub = run_scenario(p);
    CHECK(sub.trajectories.size() == 20);
    for (const auto& tr : sub.trajectories) {
        const auto it = std::find_if(a.trajectories.begin(), a.trajectories.end(),
                                     [&](const Trajectory& t) { return t.vehicle_id == tr.vehicle_id; });
        REQUIRE(it != a.trajectories.end());
        CHECK(it->positions == tr.positions);
    }
    auto other = c;
    other.seed = 99;
    CHECK(run_scenario(other).field.values != a.field.values);
}

TEST_CASE("density field sampling") {
    DensityField f;
    f.cells = 2;
    f.cell_width = 10.0;
    f.record_dt = 1.0;
    f.values = {0.0, 0.02, 0.01, 0.03};
    CHECK(f.records() == 2);
    CHECK(f.sample(5.0, 0.0) == 0.0);
    CHECK(f.sample(15.0, 0.0) == 0.02);
    CHECK(f.sample(10.0, 0.5) == doctest::Approx(0.015));
    CHECK(f.sample(-3.0, -1.0) == 0.0);
}
