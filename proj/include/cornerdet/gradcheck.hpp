#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "cornerdet/tensor.hpp"

namespace cornerdet {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    /// Coordinates whose +/- step crossed a ReLU gate, max tie, clamp or
    /// sampling-cell boundary.
    std::size_t skipped = 0;
    bool pass = false;
};

struct GradCheckOptions {
    double step = 1e-4;
    double tol = 1e-4;
    /// Denominator floor for the relative error, so near-zero gradients are
    /// compared absolutely.
    double grad_floor = 1e-6;
    /// 0 checks every coordinate; otherwise a seeded random subset per input.
    std::size_t max_coords_per_input = 0;
    std::uint64_t seed = 0x5eed;
};

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of `fn` against central differences
/// (f(x+h) - f(x-h)) / 2h for every coordinate of every input. Non-scalar
/// outputs are reduced with fixed pseudo-random weights first. Inputs must be
/// leaf tensors; they are perturbed in place and restored.
GradCheckReport finite_diff_check(const TensorFn& fn, const std::vector<Tensor>& inputs,
                                  const GradCheckOptions& options = {});

GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& input, double step,
                                  double tol);

}  // namespace cornerdet
