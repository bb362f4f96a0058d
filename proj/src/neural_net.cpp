#include "neuralfd/neural_net.hpp"

#include <cmath>
#include <random>
#include <string>

#include "neuralfd/errors.hpp"

namespace neuralfd::nn {

void MlpSpec::validate() const {
    if (layer_sizes.size() < 3) {
        throw ModelShapeError("MLP needs an input, at least one hidden layer and an output");
    }
    for (int n : layer_sizes) {
        if (n <= 0) throw ModelShapeError("MLP layer sizes must be positive");
    }
    if (layer_sizes.back() != 1) throw ModelShapeError("MLP output size must be 1");
}

std::size_t MlpSpec::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        const auto in = static_cast<std::size_t>(layer_sizes[l]);
        const auto out = static_cast<std::size_t>(layer_sizes[l + 1]);
        n += out * in + out;
    }
    return n;
}

std::size_t MlpSpec::weight_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t k = 0; k < l; ++k) {
        const auto in = static_cast<std::size_t>(layer_sizes[k]);
        const auto out = static_cast<std::size_t>(layer_sizes[k + 1]);
        off += out * in + out;
    }
    return off;
}

MlpSpec default_spec(int inputs) { return MlpSpec{{inputs, 10, 10, 1}}; }

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

namespace {

void check_shapes(const MlpSpec& spec, std::span<const double> weights,
                  std::size_t input_size) {
    spec.validate();
    if (weights.size() != spec.parameter_count()) {
        throw ModelShapeError("weight vector has " + std::to_string(weights.size()) +
                              " entries, spec expects " +
                              std::to_string(spec.parameter_count()));
    }
    if (input_size != static_cast<std::size_t>(spec.input_size())) {
        throw ModelShapeError("MLP input arity " + std::to_string(input_size) +
                              " does not match spec arity " +
                              std::to_string(spec.input_size()));
    }
}

}  // namespace

double mlp_forward_into(const MlpSpec& spec, std::span<const double> weights,
                        std::span<const double> input, Tape& tape) {
    check_shapes(spec, weights, input.size());

    const std::size_t layers = spec.layer_count();
    tape.weight_count = weights.size();
    tape.activations.resize(layers + 1);
    tape.pre_activations.resize(layers);
    tape.activations[0].assign(input.begin(), input.end());

    std::size_t off = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        const auto in = static_cast<std::size_t>(spec.layer_sizes[l]);
        const auto out = static_cast<std::size_t>(spec.layer_sizes[l + 1]);
        const auto& prev = tape.activations[l];
        auto& z = tape.pre_activations[l];
        auto& a = tape.activations[l + 1];
        z.resize(out);
        a.resize(out);
        const double* w = weights.data() + off;
        const double* b = w + out * in;
        for (std::size_t r = 0; r < out; ++r) {
            double acc = b[r];
            for (std::size_t c = 0; c < in; ++c) acc += w[r * in + c] * prev[c];
            z[r] = acc;
            a[r] = sigmoid(acc);
        }
        off += out * in + out;
    }
    return tape.output();
}

ForwardResult mlp_forward(const MlpSpec& spec, std::span<const double> weights,
                          std::span<const double> input) {
    Tape tape;
    const double out = mlp_forward_into(spec, weights, input, tape);
    return ForwardResult{out, std::move(tape)};
}

double mlp_eval(const MlpSpec& spec, std::span<const double> weights,
                std::span<const double> input) {
    thread_local Tape tape;
    return mlp_forward_into(spec, weights, input, tape);
}

void mlp_backward_accumulate(const MlpSpec& spec, std::span<const double> weights,
                             const Tape& tape, double upstream,
                             std::span<double> weight_grad, std::span<double> input_grad) {
    const std::size_t layers = spec.layer_count();
    if (tape.weight_count != weights.size() || tape.activations.size() != layers + 1 ||
        tape.pre_activations.size() != layers) {
        throw ContractViolation("tape was not produced by this spec/weight vector");
    }
    for (std::size_t l = 0; l <= layers; ++l) {
        if (tape.activations[l].size() != static_cast<std::size_t>(spec.layer_sizes[l])) {
            throw ContractViolation("tape layer shapes do not match spec");
        }
    }
    if (weight_grad.size() != weights.size() ||
        input_grad.size() != static_cast<std::size_t>(spec.input_size())) {
        throw ContractViolation("gradient buffers have the wrong shape");
    }

    // delta holds d(upstream * out)/d(activations of the current layer).
    thread_local std::vector<double> delta, dz, next;
    delta.assign(1, upstream);
    for (std::size_t l = layers; l-- > 0;) {
        const auto in = static_cast<std::size_t>(spec.layer_sizes[l]);
        const auto out = static_cast<std::size_t>(spec.layer_sizes[l + 1]);
        const std::size_t off = spec.weight_offset(l);
        const double* w = weights.data() + off;
        double* gw = weight_grad.data() + off;
        double* gb = gw + out * in;
        const auto& a_out = tape.activations[l + 1];
        const auto& a_in = tape.activations[l];

        dz.resize(out);
        for (std::size_t r = 0; r < out; ++r) dz[r] = delta[r] * a_out[r] * (1.0 - a_out[r]);

        next.assign(in, 0.0);
        for (std::size_t r = 0; r < out; ++r) {
            gb[r] += dz[r];
            for (std::size_t c = 0; c < in; ++c) {
                gw[r * in + c] += dz[r] * a_in[c];
                next[c] += w[r * in + c] * dz[r];
            }
        }
        delta.swap(next);
    }
    for (std::size_t i = 0; i < input_grad.size(); ++i) input_grad[i] = delta[i];
}

Gradients mlp_backward(const MlpSpec& spec, std::span<const double> weights,
                       const Tape& tape, double upstream) {
    spec.validate();
    Gradients g{std::vector<double>(weights.size(), 0.0),
                std::vector<double>(static_cast<std::size_t>(spec.input_size()), 0.0)};
    mlp_backward_accumulate(spec, weights, tape, upstream, g.weights, g.input);
    return g;
}

std::vector<double> init_weights(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    // Map raw 64-bit draws to [0, 1) ourselves; std distributions are not
    // portable across standard libraries.
    auto unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

    std::vector<double> w(spec.parameter_count(), 0.0);
    std::size_t off = 0;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const auto in = static_cast<std::size_t>(spec.layer_sizes[l]);
        const auto out = static_cast<std::size_t>(spec.layer_sizes[l + 1]);
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        for (std::size_t i = 0; i < out * in; ++i) w[off + i] = bound * (2.0 * unit() - 1.0);
        off += out * in + out;  // biases stay zero
    }
    return w;
}

}  // namespace neuralfd::nn
