#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "neuralfd/fd_models.hpp"
#include "neuralfd/sensing.hpp"
#include "neuralfd/training.hpp"
#include "neuralfd/types.hpp"

namespace neuralfd::cli {

inline constexpr const char* kToolVersion = "1.0.0";

/// Exit codes shared by every subcommand.
enum ExitCode : int { kOk = 0, kRuntimeError = 1, kUsageError = 2 };

struct SplitSpec {
    std::size_t train = 500;
    std::size_t test = 100;
    std::uint64_t seed = 0;
};

/**
 * Seeded shuffle of the usable trajectories into train/test, followed by
 * density co-location from the detector logs. Throws DataError when there
 * are fewer usable trajectories than requested.
 */
training::Dataset build_dataset(const std::vector<Trajectory>& trajectories,
                                const std::vector<DetectorLog>& detectors, const SplitSpec& split,
                                const sensing::SensingOptions& sensing);

struct FitOptions {
    fd::Variant variant = fd::Variant::GreenshieldsTraj;
    training::TrainConfig train;
    std::uint64_t init_seed = 0;
    double roadway_length = 1.0;          // x normalisation for nn2
    double rho_j_ref = fd::kDefaultRhoJRef;
    std::optional<fd::FdModel> warm_start;  // nn1 checkpoints may seed nn2
};

struct FitOutcome {
    fd::FdModel model;
    training::FitReport report;
};

/// Builds the initial model for the variant and trains it (or runs OLS for greenshields-ls).
FitOutcome fit_model(const training::Dataset& data, const FitOptions& opts);

/// Initial model used by fit_model before any training.
fd::FdModel initial_model(const training::Dataset& data, const FitOptions& opts);

/// Entry point of the `neuralfd` executable.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace neuralfd::cli
