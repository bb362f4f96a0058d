#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace neuralfd::nn {

/**
 * Shape of a dense sigmoid MLP: layer_sizes = {inputs, hidden..., 1}.
 *
 * Every layer (output included) applies a sigmoid, so the network maps
 * into (0, 1). Flat weight layout is layer-major, and within a layer the
 * row-major weight matrix (out x in) comes first followed by the bias.
 */
struct MlpSpec {
    std::vector<int> layer_sizes;

    /// Throws ModelShapeError unless the spec has >= 1 hidden layer and one output.
    void validate() const;

    int input_size() const { return layer_sizes.front(); }
    std::size_t layer_count() const { return layer_sizes.size() - 1; }
    std::size_t parameter_count() const;

    /// Offset of layer `l`'s weight matrix inside the flat vector.
    std::size_t weight_offset(std::size_t l) const;

    bool operator==(const MlpSpec&) const = default;
};

/// Default shape used by the neural diagrams: two hidden layers of 10 units.
MlpSpec default_spec(int inputs);

/// Intermediates recorded by mlp_forward.
struct Tape {
    std::vector<std::vector<double>> activations;  // activations[0] is the input
    std::vector<std::vector<double>> pre_activations;
    std::size_t weight_count = 0;

    double output() const { return activations.back().front(); }
};

struct ForwardResult {
    double output;
    Tape tape;
};

struct Gradients {
    std::vector<double> weights;
    std::vector<double> input;
};

/// Overflow-safe logistic function.
double sigmoid(double z);

ForwardResult mlp_forward(const MlpSpec& spec, std::span<const double> weights,
                          std::span<const double> input);

/// Same as mlp_forward but reuses the storage already held by `tape`.
double mlp_forward_into(const MlpSpec& spec, std::span<const double> weights,
                        std::span<const double> input, Tape& tape);

/// Output only, no tape kept.
double mlp_eval(const MlpSpec& spec, std::span<const double> weights,
                std::span<const double> input);

Gradients mlp_backward(const MlpSpec& spec, std::span<const double> weights,
                       const Tape& tape, double upstream);

/**
 * Accumulating variant used in the ODE inner loop: adds upstream * d(out)/dw
 * into `weight_grad` and returns the input gradient into `input_grad`.
 */
void mlp_backward_accumulate(const MlpSpec& spec, std::span<const double> weights,
                             const Tape& tape, double upstream,
                             std::span<double> weight_grad, std::span<double> input_grad);

/// Xavier-uniform weights, zero biases; deterministic in `seed`.
std::vector<double> init_weights(const MlpSpec& spec, std::uint64_t seed);

}  // namespace neuralfd::nn
