#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "neuralfd/neural_net.hpp"

namespace neuralfd::fd {

/// Default reference density used to normalise network inputs [veh/ft].
inline constexpr double kDefaultRhoJRef = 0.05;

/// Linear speed-density diagram: u = u0 (1 - rho / rho_j), zero at and beyond rho_j.
struct GreenshieldsParams {
    double u0 = 0.0;     // free-flow speed [ft/s]
    double rho_j = 0.0;  // jam density [veh/ft]

    void validate() const;
    bool operator==(const GreenshieldsParams&) const = default;
};

double eval_greenshields(const GreenshieldsParams& p, double rho);

double softplus(double z);
double inverse_softplus(double y);

/**
 * Neural diagram u = u0 * NN(rho / rho_j_ref [, x / x_ref]).
 *
 * u0 is stored through a softplus so that it stays positive under
 * unconstrained gradient steps.
 */
struct NeuralFdParams {
    double u0_raw = 0.0;
    double rho_j_ref = kDefaultRhoJRef;
    double x_ref = 1.0;  // position normalisation, the roadway length for NN(rho, x)
    nn::MlpSpec spec;
    std::vector<double> weights;

    static NeuralFdParams make(double u0, nn::MlpSpec spec, std::vector<double> weights,
                               double rho_j_ref = kDefaultRhoJRef, double x_ref = 1.0);

    double u0() const { return softplus(u0_raw); }
    int arity() const { return spec.layer_sizes.front(); }
    void validate() const;
};

double eval_nn1(const NeuralFdParams& p, double rho);
double eval_nn2(const NeuralFdParams& p, double rho, double x);

enum class Variant { GreenshieldsLS, GreenshieldsTraj, Nn1, Nn2 };

std::string_view variant_name(Variant v);
std::optional<Variant> parse_variant(std::string_view name);

/**
 * One fundamental diagram together with its flat trainable vector.
 *
 * Parameter layout:
 *   Greenshields: {u0, rho_j / rho_scale}
 *   Nn1 / Nn2:    {u0_raw, mlp weights...}
 */
class FdModel {
public:
    static FdModel greenshields(GreenshieldsParams p, Variant variant = Variant::GreenshieldsTraj,
                                double rho_scale = kDefaultRhoJRef);
    static FdModel neural(NeuralFdParams p);

    Variant variant() const { return variant_; }
    std::string_view name() const { return variant_name(variant_); }
    bool is_neural() const { return variant_ == Variant::Nn1 || variant_ == Variant::Nn2; }
    bool depends_on_position() const { return variant_ == Variant::Nn2; }

    const GreenshieldsParams& greenshields_params() const;
    const NeuralFdParams& neural_params() const;
    double rho_scale() const { return rho_scale_; }
    /// Upper bound of the diagram's output speed.
    double max_speed() const;

    /// Evaluate the speed; `x` is mandatory for Nn2 and ignored otherwise.
    double speed(double rho, std::optional<double> x = std::nullopt) const;

    std::size_t parameter_count() const;
    std::vector<double> parameters() const;
    FdModel with_parameters(std::span<const double> theta) const;

    /**
     * Evaluate u(rho, x) and push `upstream` back through it: adds
     * upstream * du/dtheta into `grad` and writes upstream * du/dx to `d_dx`.
     */
    double speed_vjp(double rho, double x, double upstream, std::span<double> grad,
                     double& d_dx) const;

private:
    Variant variant_ = Variant::GreenshieldsTraj;
    std::variant<GreenshieldsParams, NeuralFdParams> payload_;
    double rho_scale_ = kDefaultRhoJRef;
};

double eval_flux(const FdModel& m, double rho, std::optional<double> x = std::nullopt);

/// Grid for diagram export.
struct ExportGrid {
    double rho_max = kDefaultRhoJRef;
    int rho_steps = 101;           // samples in [0, rho_max], endpoints included
    double x_max = 0.0;            // roadway length, Nn2 only
    int x_steps = 0;               // samples in [0, x_max]; 0 disables the 2-D grid
    std::vector<double> slices;    // fixed-x profiles, Nn2 only
};

struct ExportRow {
    double rho;
    std::optional<double> x;
    double speed;
    double flux;
};

/// Throws ConfigError if the grid leaves the model's valid input range.
std::vector<ExportRow> export_diagram(const FdModel& m, const ExportGrid& grid);
std::string export_csv(const FdModel& m, const std::vector<ExportRow>& rows);

}  // namespace neuralfd::fd
