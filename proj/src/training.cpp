#include "neuralfd/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "neuralfd/errors.hpp"

namespace neuralfd::training {

std::string_view weighting_name(LossWeighting w) {
    switch (w) {
        case LossWeighting::PerTrajectory: return "per-trajectory";
        case LossWeighting::PerTrajectoryMean: return "per-trajectory-mean";
        case LossWeighting::PerPoint: return "per-point";
    }
    return "unknown";
}

std::optional<LossWeighting> parse_weighting(std::string_view name) {
    for (auto w : {LossWeighting::PerTrajectory, LossWeighting::PerTrajectoryMean,
                   LossWeighting::PerPoint}) {
        if (weighting_name(w) == name) return w;
    }
    return std::nullopt;
}

namespace {

void validate_sample(const Sample& s) {
    const auto& tr = s.trajectory;
    if (tr.size() < 2 || !(tr.duration() > 0.0)) {
        throw DataError("trajectory " + std::to_string(tr.vehicle_id) + " has zero duration");
    }
    if (s.density.size() != tr.size() || std::abs(s.density.dt - tr.dt) > 1e-12 * tr.dt ||
        std::abs(s.density.t0 - tr.t0) > 1e-9 * tr.dt) {
        throw DataError("density series of trajectory " + std::to_string(tr.vehicle_id) +
                        " is not on the trajectory grid");
    }
}

// Weight multiplying sum_k r_k^2 of sample i.
std::vector<double> sample_weights(std::span<const Sample> samples, double delta_t,
                                   LossWeighting weighting) {
    std::vector<double> w(samples.size());
    const double n = static_cast<double>(samples.size());
    double points = 0.0;
    for (const auto& s : samples) points += static_cast<double>(s.trajectory.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& tr = samples[i].trajectory;
        switch (weighting) {
            case LossWeighting::PerTrajectory: w[i] = delta_t / tr.duration() / n; break;
            case LossWeighting::PerTrajectoryMean:
                w[i] = 1.0 / static_cast<double>(tr.size()) / n;
                break;
            case LossWeighting::PerPoint: w[i] = 1.0 / points; break;
        }
    }
    return w;
}

unsigned resolve_threads(unsigned requested, std::size_t work) {
    unsigned t = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
    return static_cast<unsigned>(std::min<std::size_t>(t, std::max<std::size_t>(work, 1)));
}

// Runs fn(i) for i in [0, n) over a fixed pool; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    threads = resolve_threads(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = next++; i < n; i = next++) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
                next = n;
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace

void Dataset::validate() const {
    if (!(delta_t > 0.0)) throw DataError("dataset delta_t must be > 0");
    std::set<std::int64_t> train_ids;
    for (const auto& s : train) {
        validate_sample(s);
        train_ids.insert(s.trajectory.vehicle_id);
    }
    for (const auto& s : test) {
        validate_sample(s);
        if (train_ids.count(s.trajectory.vehicle_id)) {
            throw DataError("vehicle " + std::to_string(s.trajectory.vehicle_id) +
                            " appears in both train and test splits");
        }
    }
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (convergence_window < 1) throw ConfigError("convergence_window must be >= 1");
}

double loss(std::span<const std::pair<Trajectory, ode::SimTrajectory>> pairs, double delta_t,
            LossWeighting weighting) {
    if (pairs.empty()) return 0.0;
    double total_points = 0.0;
    for (const auto& [ref, sim] : pairs) {
        if (ref.size() != sim.positions.size()) {
            throw ContractViolation("reference and reconstruction lengths differ");
        }
        if (!(ref.duration() > 0.0)) {
            throw DataError("trajectory " + std::to_string(ref.vehicle_id) + " has zero duration");
        }
        total_points += static_cast<double>(ref.size());
    }
    const double n = static_cast<double>(pairs.size());
    double acc = 0.0;
    for (const auto& [ref, sim] : pairs) {
        double sq = 0.0;
        for (std::size_t k = 0; k < ref.size(); ++k) {
            const double r = ref.positions[k] - sim.positions[k];
            sq += r * r;
        }
        switch (weighting) {
            case LossWeighting::PerTrajectory: acc += delta_t / ref.duration() * sq / n; break;
            case LossWeighting::PerTrajectoryMean:
                acc += sq / static_cast<double>(ref.size()) / n;
                break;
            case LossWeighting::PerPoint: acc += sq / total_points; break;
        }
    }
    return acc;
}

LossAndGrad loss_and_grad(const fd::FdModel& model, std::span<const Sample> samples,
                          double delta_t, LossWeighting weighting, unsigned threads) {
    LossAndGrad out;
    out.grad.assign(model.parameter_count(), 0.0);
    if (samples.empty()) return out;

    const auto weights = sample_weights(samples, delta_t, weighting);
    std::vector<ode::BackpropResult> parts(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        parts[i] = ode::backprop_trajectory(model, samples[i].density, samples[i].trajectory);
    });
    for (std::size_t i = 0; i < parts.size(); ++i) {
        out.loss += weights[i] * parts[i].sq_error;
        for (std::size_t j = 0; j < out.grad.size(); ++j) out.grad[j] += weights[i] * parts[i].grad[j];
    }
    return out;
}

std::optional<double> dataset_loss(const fd::FdModel& model, std::span<const Sample> samples,
                                   double delta_t, LossWeighting weighting, unsigned threads) {
    if (samples.empty()) return std::nullopt;
    const auto weights = sample_weights(samples, delta_t, weighting);
    std::vector<double> sq(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        const auto& s = samples[i];
        const auto sim = ode::integrate_trajectory(model, s.trajectory.positions.front(), s.density);
        double acc = 0.0;
        for (std::size_t k = 0; k < sim.positions.size(); ++k) {
            const double r = s.trajectory.positions[k] - sim.positions[k];
            acc += r * r;
        }
        sq[i] = acc;
    });
    double total = 0.0;
    for (std::size_t i = 0; i < sq.size(); ++i) total += weights[i] * sq[i];
    return total;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const TrainConfig& cfg) {
    if (grads.size() != params.size()) throw ContractViolation("Adam: gradient/parameter size mismatch");
    for (std::size_t j = 0; j < grads.size(); ++j) {
        if (!std::isfinite(grads[j])) {
            throw OptimizerHalt("Adam: non-finite gradient component " + std::to_string(j) +
                                " at step " + std::to_string(state.step + 1));
        }
    }
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size()) throw ContractViolation("Adam: state size mismatch");

    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t j = 0; j < params.size(); ++j) {
        const double g = grads[j];
        state.m[j] = cfg.beta1 * state.m[j] + (1.0 - cfg.beta1) * g;
        state.v[j] = cfg.beta2 * state.v[j] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[j] / bc1;
        const double v_hat = state.v[j] / bc2;
        params[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
}

FitReport train(const fd::FdModel& model, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    data.validate();
    if (data.train.empty()) throw DataError("training split is empty");

    FitReport report;
    report.model = std::string(model.name());
    std::vector<double> theta = model.parameters();
    report.best_params = theta;
    report.best_loss = std::numeric_limits<double>::infinity();
    AdamState adam;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const fd::FdModel current = model.with_parameters(theta);
        EpochRecord rec;
        rec.epoch = epoch;
        LossAndGrad lg;
        try {
            lg = loss_and_grad(current, data.train, data.delta_t, cfg.weighting, cfg.threads);
            rec.train_loss = lg.loss;
            rec.test_loss = dataset_loss(current, data.test, data.delta_t, cfg.weighting, cfg.threads);
        } catch (const NumericalFailure& e) {
            report.failure = "epoch " + std::to_string(epoch) + " aborted: " + e.what();
            break;
        }
        report.epochs.push_back(rec);

        const double score = rec.test_loss.value_or(rec.train_loss);
        if (std::isfinite(score) && score < report.best_loss) {
            report.best_loss = score;
            report.best_epoch = epoch;
            report.best_params = theta;
        }

        const auto w = static_cast<std::size_t>(cfg.convergence_window);
        if (report.epochs.size() > w) {
            // Every epoch-to-epoch change in the window must be small; an oscillating
            // loss can return to an earlier value without having settled.
            bool settled = true;
            for (std::size_t k = report.epochs.size() - w; k < report.epochs.size(); ++k) {
                const double prev = report.epochs[k - 1].train_loss;
                const double rel = std::abs(report.epochs[k].train_loss - prev) /
                                   std::max(std::abs(prev), 1e-300);
                if (!(rel < cfg.convergence_eps)) settled = false;
            }
            if (settled) {
                report.converged = true;
                break;
            }
        }
        if (epoch + 1 == cfg.max_epochs) break;

        try {
            adam_step(theta, lg.grad, adam, cfg);
        } catch (const OptimizerHalt& e) {
            report.failure = std::string("optimizer halted: ") + e.what();
            break;
        }
    }
    return report;
}

fd::GreenshieldsParams fit_greenshields_ls(std::span<const std::pair<double, double>> points) {
    if (points.size() < 2) throw DegenerateFitError("least squares needs at least 2 points");
    // Centred sums keep the normal equations well conditioned.
    double mean_r = 0.0;
    double mean_u = 0.0;
    for (const auto& [r, u] : points) {
        mean_r += r;
        mean_u += u;
    }
    const double n = static_cast<double>(points.size());
    mean_r /= n;
    mean_u /= n;
    double srr = 0.0;
    double sru = 0.0;
    for (const auto& [r, u] : points) {
        srr += (r - mean_r) * (r - mean_r);
        sru += (r - mean_r) * (u - mean_u);
    }
    if (!(srr > 0.0) || srr <= 1e-12 * n * std::max(mean_r * mean_r, 1e-300)) {
        throw DegenerateFitError("least squares design is singular (all densities equal)");
    }
    const double b = sru / srr;
    const double a = mean_u - b * mean_r;
    if (!(b < 0.0) || !(a > 0.0)) {
        throw DegenerateFitError("least squares fit is non-physical (intercept " + std::to_string(a) +
                                 ", slope " + std::to_string(b) + ")");
    }
    return fd::GreenshieldsParams{a, -a / b};
}

std::vector<std::pair<double, double>> speed_density_pairs(std::span<const Sample> samples) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& s : samples) {
        for (std::size_t k = 0; k < s.trajectory.size(); ++k) {
            pts.emplace_back(s.density.values[k], s.trajectory.speeds[k]);
        }
    }
    return pts;
}

std::vector<MetricRow> evaluate(std::span<const fd::FdModel> models, const Dataset& data,
                                LossWeighting weighting) {
    data.validate();
    std::vector<MetricRow> rows;
    for (const auto& m : models) {
        rows.push_back({std::string(m.name()), "train",
                        dataset_loss(m, data.train, data.delta_t, weighting)});
        rows.push_back({std::string(m.name()), "test",
                        dataset_loss(m, data.test, data.delta_t, weighting)});
    }
    return rows;
}

std::string metric_table_csv(std::span<const MetricRow> rows) {
    std::ostringstream os;
    os.precision(std::numeric_limits<double>::max_digits10);
    os << "model,split,loss_ft2\n";
    for (const auto& r : rows) {
        os << r.model << ',' << r.split << ',';
        if (r.loss_ft2) {
            os << *r.loss_ft2;
        } else {
            os << "NA";
        }
        os << '\n';
    }
    return os.str();
}

fd::FdModel fit_to_diagram(const fd::FdModel& student, const fd::FdModel& teacher,
                           std::span<const std::pair<double, double>> points, int steps,
                           double learning_rate) {
    if (!student.is_neural()) throw ConfigError("fit_to_diagram needs a neural student");
    if (points.empty() || steps < 0) throw ConfigError("fit_to_diagram needs points and steps >= 0");
    std::vector<std::pair<double, double>> grid(points.begin(), points.end());
    std::vector<double> target;
    target.reserve(grid.size());
    for (const auto& [rho, x] : grid) target.push_back(teacher.speed(rho, x));
    const double scale = 1.0 / static_cast<double>(grid.size());

    TrainConfig cfg;
    cfg.learning_rate = learning_rate;
    AdamState adam;
    std::vector<double> theta = student.parameters();
    std::vector<double> grad(theta.size());
    for (int it = 0; it < steps; ++it) {
        const auto m = student.with_parameters(theta);
        std::fill(grad.begin(), grad.end(), 0.0);
        double d_dx = 0.0;
        for (std::size_t k = 0; k < grid.size(); ++k) {
            const double u = m.speed(grid[k].first, grid[k].second);
            m.speed_vjp(grid[k].first, grid[k].second, 2.0 * scale * (u - target[k]), grad, d_dx);
        }
        adam_step(theta, grad, adam, cfg);
    }
    return student.with_parameters(theta);
}

namespace {

std::vector<Sample> one_step_pieces(const std::vector<Sample>& in) {
    std::vector<Sample> out;
    for (const auto& s : in) {
        const auto& tr = s.trajectory;
        for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
            Sample p;
            p.trajectory.vehicle_id = tr.vehicle_id;
            p.trajectory.t0 = tr.time_at(k);
            p.trajectory.dt = tr.dt;
            p.trajectory.positions = {tr.positions[k], tr.positions[k + 1]};
            p.trajectory.speeds = {tr.speeds[k], tr.speeds[k + 1]};
            p.density.t0 = p.trajectory.t0;
            p.density.dt = s.density.dt;
            p.density.values = {s.density.values[k], s.density.values[k + 1]};
            out.push_back(std::move(p));
        }
    }
    return out;
}

}  // namespace

Dataset decompose_one_step(const Dataset& data) {
    return Dataset{one_step_pieces(data.train), one_step_pieces(data.test), data.delta_t};
}

}  // namespace neuralfd::training
