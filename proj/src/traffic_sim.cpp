#include "neuralfd/traffic_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "neuralfd/errors.hpp"
#include "neuralfd/ode.hpp"

namespace neuralfd::sim {

namespace {

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double capacity(const fd::GreenshieldsParams& fd) { return 0.25 * fd.u0 * fd.rho_j; }

double greenshields_flux(const fd::GreenshieldsParams& fd, double rho) {
    return rho * fd::eval_greenshields(fd, rho);
}

}  // namespace

bool SignalPlan::is_red(double t) const {
    const double cycle = green + red;
    double phase = std::fmod(t - offset, cycle);
    if (phase < 0.0) phase += cycle;
    return phase >= green;
}

void ScenarioConfig::validate() const {
    true_fd.validate();
    if (!(roadway_length > 0.0)) throw ConfigError("roadway_length must be > 0");
    if (!(cell_width > 0.0)) throw ConfigError("cell_width must be > 0");
    if (!(sim_dt > 0.0)) throw ConfigError("sim_dt must be > 0");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be > 0");
    if (!(cell_width / sim_dt > true_fd.u0)) {
        throw ConfigError("CFL condition violated: cell_width / sim_dt = " +
                          std::to_string(cell_width / sim_dt) + " must exceed u0 = " +
                          std::to_string(true_fd.u0));
    }
    const double cells = roadway_length / cell_width;
    if (std::abs(cells - std::round(cells)) > 1e-9 * cells) {
        throw ConfigError("roadway_length must be a whole number of cells");
    }
    const double per_sample = sample_dt / sim_dt;
    if (!(sample_dt > 0.0) || std::abs(per_sample - std::round(per_sample)) > 1e-9 * per_sample) {
        throw ConfigError("sample_dt must be a positive multiple of sim_dt");
    }
    if (!(detector_spacing > 0.0)) throw ConfigError("detector_spacing must be > 0");
    if (probe_count < 0) throw ConfigError("probe_count must be >= 0");
    if (inflow_jitter < 0.0 || inflow_jitter >= 1.0) {
        throw ConfigError("inflow_jitter must lie in [0, 1)");
    }
    if (inflow_jitter > 0.0 && !(jitter_period > 0.0)) {
        throw ConfigError("jitter_period must be > 0");
    }
    for (std::size_t i = 0; i < inflow.size(); ++i) {
        if (!(inflow[i].rate >= 0.0)) throw ConfigError("inflow rates must be >= 0");
        if (i > 0 && !(inflow[i].t > inflow[i - 1].t)) {
            throw ConfigError("inflow knots must have increasing times");
        }
    }
    if (signal && (!(signal->green > 0.0) || !(signal->red >= 0.0))) {
        throw ConfigError("signal needs green > 0 and red >= 0");
    }
    for (const auto& b : blockages) {
        if (!(b.capacity_factor > 0.0 && b.capacity_factor <= 1.0)) {
            throw ConfigError("blockage capacity_factor must lie in (0, 1]");
        }
        if (b.x_end < b.x_start || b.t_end < b.t_start) {
            throw ConfigError("blockage extents must be ordered");
        }
    }
    if (random_blockages) {
        const auto& r = *random_blockages;
        if (r.count < 0) throw ConfigError("random_blockages.count must be >= 0");
        if (!(r.capacity_factor > 0.0 && r.capacity_factor <= 1.0)) {
            throw ConfigError("random_blockages.capacity_factor must lie in (0, 1]");
        }
        if (r.x_max - r.length < r.x_min || r.max_duration < r.min_duration ||
            r.min_duration < 0.0 || r.length < 0.0) {
            throw ConfigError("random_blockages ranges are inconsistent");
        }
    }
    if (initial_density.size() > 1 && initial_density.size() != cell_count()) {
        throw ConfigError("initial_density needs 0, 1 or cell_count values");
    }
    for (double r : initial_density) {
        if (!(r >= 0.0 && r <= true_fd.rho_j)) {
            throw ConfigError("initial_density values must lie in [0, rho_j]");
        }
    }
}

std::size_t ScenarioConfig::cell_count() const {
    return static_cast<std::size_t>(std::llround(roadway_length / cell_width));
}

std::size_t ScenarioConfig::steps() const {
    return static_cast<std::size_t>(std::llround(horizon / sim_dt));
}

std::size_t ScenarioConfig::steps_per_sample() const {
    return static_cast<std::size_t>(std::llround(sample_dt / sim_dt));
}

double ScenarioConfig::demand_at(double t) const {
    if (inflow.empty()) return 0.0;
    if (t <= inflow.front().t) return inflow.front().rate;
    if (t >= inflow.back().t) return inflow.back().rate;
    const auto it = std::upper_bound(inflow.begin(), inflow.end(), t,
                                     [](double v, const InflowKnot& k) { return v < k.t; });
    const auto& b = *it;
    const auto& a = *(it - 1);
    return a.rate + (b.rate - a.rate) * (t - a.t) / (b.t - a.t);
}

std::vector<Blockage> ScenarioConfig::resolved_blockages() const {
    std::vector<Blockage> out = blockages;
    if (!random_blockages || random_blockages->count == 0) return out;
    const auto& r = *random_blockages;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    for (int i = 0; i < r.count; ++i) {
        Blockage b;
        b.x_start = r.x_min + (r.x_max - r.length - r.x_min) * unit_draw(rng);
        b.x_end = b.x_start + r.length;
        const double duration = r.min_duration + (r.max_duration - r.min_duration) * unit_draw(rng);
        b.t_start = std::max(0.0, horizon - duration) * unit_draw(rng);
        b.t_end = b.t_start + duration;
        b.capacity_factor = r.capacity_factor;
        out.push_back(b);
    }
    return out;
}

double DensityField::sample(double x, double t) const {
    if (cells == 0 || values.empty()) return 0.0;
    const std::size_t n_rec = records();
    double u = t / record_dt;
    u = std::clamp(u, 0.0, static_cast<double>(n_rec - 1));
    auto r0 = static_cast<std::size_t>(std::floor(u));
    if (r0 + 1 >= n_rec) r0 = n_rec >= 2 ? n_rec - 2 : 0;
    const double a = n_rec >= 2 ? u - static_cast<double>(r0) : 0.0;

    double s = x / cell_width - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(cells - 1));
    auto c0 = static_cast<std::size_t>(std::floor(s));
    if (c0 + 1 >= cells) c0 = cells >= 2 ? cells - 2 : 0;
    const double b = cells >= 2 ? s - static_cast<double>(c0) : 0.0;
    const std::size_t c1 = cells >= 2 ? c0 + 1 : c0;
    const std::size_t r1 = n_rec >= 2 ? r0 + 1 : r0;

    const double lo = (1.0 - b) * at(c0, r0) + b * at(c1, r0);
    const double hi = (1.0 - b) * at(c0, r1) + b * at(c1, r1);
    return (1.0 - a) * lo + a * hi;
}

double godunov_flux(const fd::GreenshieldsParams& fd, double rho_left, double rho_right,
                    double capacity_factor) {
    const double rho_c = 0.5 * fd.rho_j;
    const double demand = greenshields_flux(fd, std::min(rho_left, rho_c));
    const double supply = greenshields_flux(fd, std::max(rho_right, rho_c));
    return capacity_factor * std::min(demand, supply);
}

std::vector<double> apply_blockage(std::span<const Blockage> blockages, double t,
                                   std::size_t cells, double cell_width) {
    std::vector<double> factors(cells + 1, 1.0);
    for (const auto& b : blockages) {
        if (t < b.t_start || t >= b.t_end) continue;
        for (std::size_t i = 0; i <= cells; ++i) {
            const double x = cell_width * static_cast<double>(i);
            if (x >= b.x_start && x <= b.x_end) factors[i] *= b.capacity_factor;
        }
    }
    return factors;
}

namespace {

struct Vehicle {
    std::int64_t id;
    double x;
    Trajectory traj;
};

// Density seen by a tracer: linear between cell centres. With a downstream
// wall the density ramps to jam at x = L so tracers cannot leave on red.
double tracer_density(std::span<const double> rho, double x, double w, double length,
                      bool wall, double rho_j) {
    const std::size_t n = rho.size();
    const double s = x / w - 0.5;
    if (s <= 0.0) return rho[0];
    if (s >= static_cast<double>(n - 1)) {
        if (!wall) return rho[n - 1];
        const double c_last = (static_cast<double>(n) - 0.5) * w;
        if (x >= length) return rho_j;
        const double a = (x - c_last) / (length - c_last);
        return (1.0 - a) * rho[n - 1] + a * rho_j;
    }
    const auto c0 = static_cast<std::size_t>(std::floor(s));
    const double b = s - static_cast<double>(c0);
    return (1.0 - b) * rho[c0] + b * rho[c0 + 1];
}

void record_crossings(std::vector<DetectorLog>& logs, double spacing, double x_old,
                      double x_new, double t_old, double t_new) {
    if (!(x_new > x_old)) return;
    // detectors with x_old < d <= x_new
    auto j = static_cast<std::int64_t>(std::floor(x_old / spacing)) + 1;
    j = std::max<std::int64_t>(j, 0);
    for (; j < static_cast<std::int64_t>(logs.size()); ++j) {
        const double d = logs[static_cast<std::size_t>(j)].position;
        if (d > x_new) break;
        if (d <= x_old) continue;
        const double a = (d - x_old) / (x_new - x_old);
        logs[static_cast<std::size_t>(j)].crossing_times.push_back(t_old + a * (t_new - t_old));
    }
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& cfg, const StepObserver& observer) {
    cfg.validate();

    const auto& fd = cfg.true_fd;
    const std::size_t n = cfg.cell_count();
    const double w = cfg.cell_width;
    const double dt = cfg.sim_dt;
    const double length = cfg.roadway_length;
    const std::size_t steps = cfg.steps();
    const std::size_t per_sample = cfg.steps_per_sample();
    const double q_max = capacity(fd);
    const auto blockages = cfg.resolved_blockages();

    std::vector<double> jitter;
    if (cfg.inflow_jitter > 0.0) {
        std::mt19937_64 rng(cfg.seed);
        const auto periods = static_cast<std::size_t>(std::ceil(cfg.horizon / cfg.jitter_period)) + 1;
        for (std::size_t p = 0; p < periods; ++p) {
            jitter.push_back(1.0 + cfg.inflow_jitter * (2.0 * unit_draw(rng) - 1.0));
        }
    }
    auto demand = [&](double t) {
        double q = cfg.demand_at(t);
        if (!jitter.empty()) {
            auto p = static_cast<std::size_t>(std::floor(t / cfg.jitter_period));
            q *= jitter[std::min(p, jitter.size() - 1)];
        }
        return q;
    };

    std::vector<double> rho(n, 0.0);
    if (cfg.initial_density.size() == 1) {
        std::fill(rho.begin(), rho.end(), cfg.initial_density.front());
    } else if (cfg.initial_density.size() == n) {
        rho = cfg.initial_density;
    }

    ScenarioResult res;
    res.field.cells = n;
    res.field.cell_width = w;
    res.field.record_dt = cfg.sample_dt;
    res.field.values.reserve(n * (steps / per_sample + 1));
    res.field.values.insert(res.field.values.end(), rho.begin(), rho.end());

    const auto n_detectors = static_cast<std::size_t>(std::floor(length / cfg.detector_spacing + 1e-9)) + 1;
    res.detectors.resize(n_detectors);
    for (std::size_t j = 0; j < n_detectors; ++j) {
        res.detectors[j].position = cfg.detector_spacing * static_cast<double>(j);
    }

    std::vector<double> flux(n + 1, 0.0);
    std::vector<double> rho_old(n);
    std::vector<Vehicle> active;
    std::vector<Trajectory> finished;
    double queue = 0.0;
    double entered = 0.0;
    double exited = 0.0;
    std::int64_t next_id = 0;

    for (std::size_t step = 0; step < steps; ++step) {
        const double t = dt * static_cast<double>(step);
        const double t_next = dt * static_cast<double>(step + 1);
        const auto factors = apply_blockage(blockages, t, n, w);
        const bool red = cfg.signal && cfg.signal->is_red(t);
        const bool wall = cfg.closed_boundaries || red;

        // Boundary fluxes: a point queue feeds the entrance, the signal gates the exit.
        double f_in = 0.0;
        double q_dem = 0.0;
        if (!cfg.closed_boundaries) {
            q_dem = demand(t);
            const double source = std::min(q_max, q_dem + queue / dt);
            const double supply = greenshields_flux(fd, std::max(rho[0], 0.5 * fd.rho_j));
            f_in = factors[0] * std::min(source, supply);
        }
        double f_out = 0.0;
        if (!wall) {
            f_out = factors[n] * greenshields_flux(fd, std::min(rho[n - 1], 0.5 * fd.rho_j));
        }
        flux[0] = f_in;
        flux[n] = f_out;
        for (std::size_t i = 1; i < n; ++i) flux[i] = godunov_flux(fd, rho[i - 1], rho[i], factors[i]);

        rho_old = rho;
        const double lambda = dt / w;
        for (std::size_t i = 0; i < n; ++i) rho[i] -= lambda * (flux[i + 1] - flux[i]);
        queue = std::max(0.0, queue + (q_dem - f_in) * dt);

        const double entered_before = entered;
        entered += f_in * dt;
        exited += f_out * dt;

        // Tracer velocity, linear in time across the step.
        auto velocity = [&](double tau, double x) {
            const double a = std::clamp((tau - t) / dt, 0.0, 1.0);
            const double r0 = tracer_density(rho_old, x, w, length, wall, fd.rho_j);
            const double r1 = tracer_density(rho, x, w, length, wall, fd.rho_j);
            return fd::eval_greenshields(fd, (1.0 - a) * r0 + a * r1);
        };

        for (auto& v : active) {
            const double x_new = ode::rk4_step(velocity, t, v.x, dt);
            record_crossings(res.detectors, cfg.detector_spacing, v.x, x_new, t, t_next);
            v.x = x_new;
        }

        // Inject a vehicle each time the cumulative entry count passes an integer.
        while (static_cast<double>(next_id + 1) <= entered) {
            const double k = static_cast<double>(next_id + 1);
            const double t_inj = t + dt * (k - entered_before) / (entered - entered_before);
            Vehicle v{next_id, 0.0, {}};
            v.traj.vehicle_id = next_id;
            v.traj.dt = cfg.sample_dt;
            res.detectors[0].crossing_times.push_back(t_inj);
            const double h = t_next - t_inj;
            if (h > 0.0) {
                v.x = ode::rk4_step(velocity, t_inj, 0.0, h);
                record_crossings(res.detectors, cfg.detector_spacing, 0.0, v.x, t_inj, t_next);
            }
            active.push_back(std::move(v));
            ++next_id;
        }

        const bool sample_now = (step + 1) % per_sample == 0;
        for (auto it = active.begin(); it != active.end();) {
            if (it->x > length) {
                if (it->traj.size() >= 2) finished.push_back(std::move(it->traj));
                it = active.erase(it);
                continue;
            }
            if (sample_now) {
                if (it->traj.positions.empty()) it->traj.t0 = t_next;
                it->traj.positions.push_back(it->x);
                it->traj.speeds.push_back(fd::eval_greenshields(
                    fd, tracer_density(rho, it->x, w, length, wall, fd.rho_j)));
            }
            ++it;
        }

        if (sample_now) res.field.values.insert(res.field.values.end(), rho.begin(), rho.end());
        if (observer) observer(StepInfo{step, t_next, rho, f_in, f_out});
    }
    // Vehicles still on the road at the horizon are dropped: only complete transits are emitted.

    for (auto& log : res.detectors) {
        auto& ts = log.crossing_times;
        std::sort(ts.begin(), ts.end());
        for (std::size_t i = 1; i < ts.size(); ++i) {
            if (!(ts[i] > ts[i - 1])) ts[i] = std::nextafter(ts[i - 1], std::numeric_limits<double>::infinity());
        }
    }

    std::sort(finished.begin(), finished.end(),
              [](const Trajectory& a, const Trajectory& b) { return a.vehicle_id < b.vehicle_id; });
    if (cfg.probe_count > 0 && static_cast<std::size_t>(cfg.probe_count) < finished.size()) {
        std::vector<std::size_t> idx(finished.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::mt19937_64 rng(cfg.seed + 1);
        for (std::size_t i = idx.size() - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(rng() % (i + 1));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(static_cast<std::size_t>(cfg.probe_count));
        std::sort(idx.begin(), idx.end());
        std::vector<Trajectory> kept;
        kept.reserve(idx.size());
        for (auto i : idx) kept.push_back(std::move(finished[i]));
        finished = std::move(kept);
    }
    res.trajectories = std::move(finished);
    res.vehicles_entered = entered;
    res.vehicles_exited = exited;
    return res;
}

}  // namespace neuralfd::sim
