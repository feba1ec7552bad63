#pragma once

#include <cstddef>

#include "cornerdet/network.hpp"
#include "cornerdet/targets.hpp"

namespace cornerdet {

/// Weight on the guiding-shift regression inside each corner loss.
inline constexpr double kGuidingWeight = 0.05;

/// Probabilities are clamped to [kFocalClamp, 1 - kFocalClamp] before the
/// logs; the clamp carries no gradient.
inline constexpr double kFocalClamp = 1e-4;

/// Penalty-reduced focal loss over every cell, normalised by
/// max(num_objects, 1). `target` is a Gaussian heatmap with exact 1 at
/// positives.
Tensor gaussian_focal_loss(const Tensor& pred, const Tensor& target, std::size_t num_objects);

/// Smooth-L1 averaged over the masked elements; `mask` is [N, 1, h, w] and
/// broadcasts over channels. An all-zero mask gives 0.
Tensor smooth_l1_masked(const Tensor& pred, const Tensor& target, const Tensor& mask);

struct CornerLossParts {
    Tensor det, off, cs, guiding;
    Tensor total;  // det + off + cs + kGuidingWeight * guiding
};

struct CenterLossParts {
    Tensor det, off, bc;
    Tensor total;
};

CornerLossParts corner_loss(const CornerPredictions& pred, const BranchTargets& target, std::size_t num_objects);

/// Throws when the predictions carry no center branch.
CenterLossParts bcca_loss(const RawPredictions& pred, const TrainingTargets& target);

struct LossBreakdown {
    double det_tl = 0, off_tl = 0, cs_tl = 0, guiding_tl = 0;
    double det_br = 0, off_br = 0, cs_br = 0, guiding_br = 0;
    double det_ce = 0, off_ce = 0, ba = 0;
    double total = 0;
    Tensor objective;  // differentiable total
};

/// Both corner losses plus the center loss when `pred.center` is set.
LossBreakdown total_loss(const RawPredictions& pred, const TrainingTargets& target);

}  // namespace cornerdet
