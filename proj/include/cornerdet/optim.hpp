#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cornerdet/tensor.hpp"

namespace cornerdet {

struct Parameter {
    std::string name;
    Tensor tensor;
};

struct OptimizerState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step = 0;
};

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update using the gradients accumulated on each
/// parameter tensor (a parameter with no gradient is treated as zero grad).
/// State is lazily sized on the first call.
void adam_step(std::span<Parameter> params, OptimizerState& state, const AdamConfig& config);

void zero_grads(std::span<Parameter> params);

}  // namespace cornerdet
