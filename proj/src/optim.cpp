#include "cornerdet/optim.hpp"

#include <cmath>

namespace cornerdet {

void adam_step(std::span<Parameter> params, OptimizerState& state, const AdamConfig& config) {
    if (config.lr <= 0.0) throw Error("adam_step: learning rate must be positive");
    if (state.first_moment.empty() && state.step == 0) {
        for (const Parameter& p : params) {
            state.first_moment.emplace_back(p.tensor.numel(), 0.0);
            state.second_moment.emplace_back(p.tensor.numel(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw Error("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                    " parameters, got " + std::to_string(params.size()));
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& tensor = params[k].tensor;
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        if (m.size() != tensor.numel()) {
            throw Error("adam_step: state for '" + params[k].name + "' has wrong size");
        }
        const auto grad = tensor.grad();
        auto values = tensor.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            values[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
        }
    }
}

void zero_grads(std::span<Parameter> params) {
    for (Parameter& p : params) p.tensor.zero_grad();
}

}  // namespace cornerdet
