#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "neuralfd/fd_models.hpp"
#include "neuralfd/ode.hpp"
#include "neuralfd/types.hpp"

namespace neuralfd::training {

/// A reference trajectory with the density it experienced (the ODE control).
struct Sample {
    Trajectory trajectory;
    DensitySeries density;
};

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
    double delta_t = 1.0;

    /// Grids agree per pair, durations are positive, splits share no vehicle.
    void validate() const;
};

/**
 * How per-trajectory squared errors are combined.
 *   PerTrajectory      (1/N) sum_i (dt / t_i) sum_k r_ik^2   (default)
 *   PerTrajectoryMean  (1/N) sum_i (1 / n_i)  sum_k r_ik^2
 *   PerPoint           sum_ik r_ik^2 / sum_i n_i
 */
enum class LossWeighting { PerTrajectory, PerTrajectoryMean, PerPoint };

std::string_view weighting_name(LossWeighting w);
std::optional<LossWeighting> parse_weighting(std::string_view name);

struct TrainConfig {
    double learning_rate = 0.1;
    int max_epochs = 500;
    double convergence_eps = 1e-4;  // relative epoch-to-epoch train-loss change...
    int convergence_window = 5;     // ...held for this many consecutive epochs
    std::uint64_t seed = 0;
    LossWeighting weighting = LossWeighting::PerTrajectory;
    unsigned threads = 0;           // 0: hardware concurrency
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

/// Trajectory loss over (reference, reconstruction) pairs.
double loss(std::span<const std::pair<Trajectory, ode::SimTrajectory>> pairs, double delta_t,
            LossWeighting weighting = LossWeighting::PerTrajectory);

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Full-batch loss and exact gradient; reduction runs in sample order.
LossAndGrad loss_and_grad(const fd::FdModel& model, std::span<const Sample> samples,
                          double delta_t, LossWeighting weighting, unsigned threads = 0);

/// Loss only. Returns nullopt for an empty split.
std::optional<double> dataset_loss(const fd::FdModel& model, std::span<const Sample> samples,
                                   double delta_t, LossWeighting weighting, unsigned threads = 0);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

/// In-place Adam update with bias correction; throws OptimizerHalt on non-finite gradients.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const TrainConfig& cfg);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    std::optional<double> test_loss;
};

struct FitReport {
    std::string model;
    std::vector<EpochRecord> epochs;
    std::vector<double> best_params;
    int best_epoch = 0;
    double best_loss = 0.0;   // test loss at best_epoch (train loss if no test split)
    bool converged = false;
    std::optional<std::string> failure;

    bool ok() const { return !failure.has_value(); }
};

/**
 * Full-batch Adam on the trajectory loss. Epoch e reports the losses of the
 * parameters before its update, so epoch 0 is the initial model. The kept
 * parameters are those with the lowest test loss.
 */
FitReport train(const fd::FdModel& model, const Dataset& data, const TrainConfig& cfg);

/// Ordinary least squares on u = a + b*rho; u0 = a, rho_j = -a/b.
fd::GreenshieldsParams fit_greenshields_ls(std::span<const std::pair<double, double>> points);

/// (rho_c, u) pairs of every sample.
std::vector<std::pair<double, double>> speed_density_pairs(std::span<const Sample> samples);

struct MetricRow {
    std::string model;
    std::string split;
    std::optional<double> loss_ft2;  // nullopt when the split is empty
};

std::vector<MetricRow> evaluate(std::span<const fd::FdModel> models, const Dataset& data,
                                LossWeighting weighting = LossWeighting::PerTrajectory);
std::string metric_table_csv(std::span<const MetricRow> rows);

/**
 * Least-squares fit of a neural diagram to another diagram's speeds at the
 * given (rho, x) points. Used to start a neural fit from a fitted
 * Greenshields curve.
 */
fd::FdModel fit_to_diagram(const fd::FdModel& student, const fd::FdModel& teacher,
                           std::span<const std::pair<double, double>> points, int steps = 20000,
                           double learning_rate = 0.01);

/// Split every trajectory into its one-step pieces.
Dataset decompose_one_step(const Dataset& data);

}  // namespace neuralfd::training
