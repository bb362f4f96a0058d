#include "neuralfd/fd_models.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "neuralfd/errors.hpp"

namespace neuralfd::fd {

void GreenshieldsParams::validate() const {
    if (!(u0 > 0.0) || !std::isfinite(u0)) throw ConfigError("Greenshields u0 must be > 0");
    if (!(rho_j > 0.0) || !std::isfinite(rho_j)) {
        throw ConfigError("Greenshields rho_j must be > 0");
    }
}

double eval_greenshields(const GreenshieldsParams& p, double rho) {
    if (rho >= p.rho_j) return 0.0;
    return p.u0 * (1.0 - rho / p.rho_j);
}

double softplus(double z) {
    // log(1 + e^z) = max(z, 0) + log1p(e^-|z|)
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double inverse_softplus(double y) {
    if (!(y > 0.0)) throw ConfigError("softplus inverse needs a positive value");
    // log(e^y - 1) = y + log(1 - e^-y)
    return y + std::log(-std::expm1(-y));
}

NeuralFdParams NeuralFdParams::make(double u0, nn::MlpSpec spec, std::vector<double> weights,
                                    double rho_j_ref, double x_ref) {
    NeuralFdParams p;
    p.u0_raw = inverse_softplus(u0);
    p.rho_j_ref = rho_j_ref;
    p.x_ref = x_ref;
    p.spec = std::move(spec);
    p.weights = std::move(weights);
    p.validate();
    return p;
}

void NeuralFdParams::validate() const {
    spec.validate();
    if (weights.size() != spec.parameter_count()) {
        throw ModelShapeError("neural FD weight vector length does not match layer sizes");
    }
    if (!(rho_j_ref > 0.0)) throw ConfigError("rho_j_ref must be > 0");
    if (!(x_ref > 0.0)) throw ConfigError("x_ref must be > 0");
    if (!std::isfinite(u0_raw)) throw ConfigError("u0_raw must be finite");
}

double eval_nn1(const NeuralFdParams& p, double rho) {
    if (p.arity() != 1) throw ModelShapeError("eval_nn1 needs a network of input arity 1");
    const std::array<double, 1> in{rho / p.rho_j_ref};
    return p.u0() * nn::mlp_eval(p.spec, p.weights, in);
}

double eval_nn2(const NeuralFdParams& p, double rho, double x) {
    if (p.arity() != 2) throw ModelShapeError("eval_nn2 needs a network of input arity 2");
    const std::array<double, 2> in{rho / p.rho_j_ref, x / p.x_ref};
    return p.u0() * nn::mlp_eval(p.spec, p.weights, in);
}

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::GreenshieldsLS: return "greenshields-ls";
        case Variant::GreenshieldsTraj: return "greenshields-traj";
        case Variant::Nn1: return "nn1";
        case Variant::Nn2: return "nn2";
    }
    return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
    for (auto v : {Variant::GreenshieldsLS, Variant::GreenshieldsTraj, Variant::Nn1, Variant::Nn2}) {
        if (variant_name(v) == name) return v;
    }
    return std::nullopt;
}

FdModel FdModel::greenshields(GreenshieldsParams p, Variant variant, double rho_scale) {
    if (variant != Variant::GreenshieldsLS && variant != Variant::GreenshieldsTraj) {
        throw ModelShapeError("greenshields payload needs a Greenshields variant");
    }
    p.validate();
    if (!(rho_scale > 0.0)) throw ConfigError("rho_scale must be > 0");
    FdModel m;
    m.variant_ = variant;
    m.payload_ = p;
    m.rho_scale_ = rho_scale;
    return m;
}

FdModel FdModel::neural(NeuralFdParams p) {
    p.validate();
    FdModel m;
    if (p.arity() == 1) {
        m.variant_ = Variant::Nn1;
    } else if (p.arity() == 2) {
        m.variant_ = Variant::Nn2;
    } else {
        throw ModelShapeError("neural FD input arity must be 1 or 2");
    }
    m.rho_scale_ = p.rho_j_ref;
    m.payload_ = std::move(p);
    return m;
}

const GreenshieldsParams& FdModel::greenshields_params() const {
    if (const auto* p = std::get_if<GreenshieldsParams>(&payload_)) return *p;
    throw ModelShapeError("model is not a Greenshields diagram");
}

const NeuralFdParams& FdModel::neural_params() const {
    if (const auto* p = std::get_if<NeuralFdParams>(&payload_)) return *p;
    throw ModelShapeError("model is not a neural diagram");
}

double FdModel::max_speed() const {
    return is_neural() ? neural_params().u0() : greenshields_params().u0;
}

double FdModel::speed(double rho, std::optional<double> x) const {
    switch (variant_) {
        case Variant::GreenshieldsLS:
        case Variant::GreenshieldsTraj:
            return eval_greenshields(greenshields_params(), rho);
        case Variant::Nn1:
            return eval_nn1(neural_params(), rho);
        case Variant::Nn2:
            if (!x) throw ModelShapeError("NN(rho, x) needs a position argument");
            return eval_nn2(neural_params(), rho, *x);
    }
    return 0.0;
}

std::size_t FdModel::parameter_count() const {
    return is_neural() ? 1 + neural_params().weights.size() : 2;
}

std::vector<double> FdModel::parameters() const {
    if (is_neural()) {
        const auto& p = neural_params();
        std::vector<double> theta;
        theta.reserve(1 + p.weights.size());
        theta.push_back(p.u0_raw);
        theta.insert(theta.end(), p.weights.begin(), p.weights.end());
        return theta;
    }
    const auto& g = greenshields_params();
    return {g.u0, g.rho_j / rho_scale_};
}

FdModel FdModel::with_parameters(std::span<const double> theta) const {
    if (theta.size() != parameter_count()) {
        throw ModelShapeError("parameter vector has the wrong length for " +
                              std::string(name()));
    }
    FdModel m = *this;
    if (is_neural()) {
        auto& p = std::get<NeuralFdParams>(m.payload_);
        p.u0_raw = theta[0];
        std::copy(theta.begin() + 1, theta.end(), p.weights.begin());
    } else {
        // No validation here: an optimizer may transiently step outside the
        // physical region and the loss has to be able to report it.
        auto& g = std::get<GreenshieldsParams>(m.payload_);
        g.u0 = theta[0];
        g.rho_j = theta[1] * rho_scale_;
    }
    return m;
}

double FdModel::speed_vjp(double rho, double x, double upstream, std::span<double> grad,
                          double& d_dx) const {
    if (grad.size() != parameter_count()) {
        throw ContractViolation("gradient buffer has the wrong length");
    }
    d_dx = 0.0;
    if (!is_neural()) {
        const auto& g = greenshields_params();
        if (rho >= g.rho_j) return 0.0;
        const double ratio = rho / g.rho_j;
        grad[0] += upstream * (1.0 - ratio);
        // du/d(rho_j) = u0 rho / rho_j^2, chained through rho_j = s * rho_scale
        grad[1] += upstream * g.u0 * ratio / g.rho_j * rho_scale_;
        return g.u0 * (1.0 - ratio);
    }

    const auto& p = neural_params();
    std::array<double, 2> in_buf{rho / p.rho_j_ref, x / p.x_ref};
    const std::size_t arity = static_cast<std::size_t>(p.arity());
    const std::span<const double> in(in_buf.data(), arity);
    thread_local nn::Tape tape;
    const double out = nn::mlp_forward_into(p.spec, p.weights, in, tape);
    const double u0 = p.u0();

    grad[0] += upstream * out * nn::sigmoid(p.u0_raw);
    std::array<double, 2> in_grad{0.0, 0.0};
    nn::mlp_backward_accumulate(p.spec, p.weights, tape, upstream * u0, grad.subspan(1),
                                std::span<double>(in_grad.data(), arity));
    if (arity == 2) d_dx = in_grad[1] / p.x_ref;
    return u0 * out;
}

double eval_flux(const FdModel& m, double rho, std::optional<double> x) {
    return rho * m.speed(rho, x);
}

std::vector<ExportRow> export_diagram(const FdModel& m, const ExportGrid& grid) {
    const double rho_limit = m.is_neural()
                                 ? m.neural_params().rho_j_ref
                                 : std::max(m.rho_scale(), m.greenshields_params().rho_j);
    if (!(grid.rho_max > 0.0) || grid.rho_max > rho_limit * (1.0 + 1e-12)) {
        throw ConfigError("export density range must lie in (0, " + std::to_string(rho_limit) +
                          "]");
    }
    if (grid.rho_steps < 2) throw ConfigError("export needs at least 2 density steps");

    auto rho_at = [&](int i) {
        return grid.rho_max * static_cast<double>(i) / static_cast<double>(grid.rho_steps - 1);
    };

    std::vector<ExportRow> rows;
    if (!m.depends_on_position()) {
        if (!grid.slices.empty() || grid.x_steps > 0) {
            throw ConfigError("position grid only applies to nn2 checkpoints");
        }
        for (int i = 0; i < grid.rho_steps; ++i) {
            const double rho = rho_at(i);
            const double u = m.speed(rho);
            rows.push_back({rho, std::nullopt, u, rho * u});
        }
        return rows;
    }

    const double x_limit = m.neural_params().x_ref;
    std::vector<double> xs = grid.slices;
    if (xs.empty()) {
        if (grid.x_steps < 2) throw ConfigError("nn2 export needs --x-steps >= 2 or --slice");
        const double x_max = grid.x_max > 0.0 ? grid.x_max : x_limit;
        for (int j = 0; j < grid.x_steps; ++j) {
            xs.push_back(x_max * static_cast<double>(j) / static_cast<double>(grid.x_steps - 1));
        }
    }
    for (double x : xs) {
        if (x < 0.0 || x > x_limit * (1.0 + 1e-12)) {
            throw ConfigError("export position " + std::to_string(x) + " outside [0, " +
                              std::to_string(x_limit) + "]");
        }
    }
    for (double x : xs) {
        for (int i = 0; i < grid.rho_steps; ++i) {
            const double rho = rho_at(i);
            const double u = m.speed(rho, x);
            rows.push_back({rho, x, u, rho * u});
        }
    }
    return rows;
}

std::string export_csv(const FdModel& m, const std::vector<ExportRow>& rows) {
    std::ostringstream os;
    os.precision(std::numeric_limits<double>::max_digits10);
    os << (m.depends_on_position() ? "rho,x,speed,flux\n" : "rho,speed,flux\n");
    for (const auto& r : rows) {
        os << r.rho << ',';
        if (r.x) os << *r.x << ',';
        os << r.speed << ',' << r.flux << '\n';
    }
    return os.str();
}

}  // namespace neuralfd::fd
