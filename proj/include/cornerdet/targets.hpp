#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "cornerdet/box.hpp"
#include "cornerdet/tensor.hpp"

namespace cornerdet {

/// Largest corner displacement r (in the box's own units) that keeps IoU
/// with the true box >= min_overlap: the smallest positive root over the
/// shifted, shrunk and grown configurations.
double gaussian_radius(double width, double height, double min_overlap = 0.7);

/// Per-corner supervision, all [1, *, h, w] for one image (or stacked).
struct BranchTargets {
    Tensor heatmap;      // [N, C, h, w]
    Tensor offset;       // [N, 2, h, w]
    Tensor centripetal;  // [N, 2, h, w] log half-extents in cells
    Tensor guiding;      // [N, 2, h, w] same encoding as centripetal
    Tensor mask;         // [N, 1, h, w], 1 at ground-truth cells
};

struct CenterTargets {
    Tensor heatmap;
    Tensor offset;
    Tensor bc;  // (log(w/2s), log(h/2s))
    Tensor mask;
};

struct TrainingTargets {
    BranchTargets tl;
    BranchTargets br;
    CenterTargets center;
    std::size_t stride = 4;
    std::size_t num_objects = 0;
};

/// Gaussian peaks (sigma = radius/3, max-merged per class, exactly 1 at the
/// ground-truth cell), sub-cell offsets and log half-extent shifts. When two
/// boxes land on the same cell the later box's regression targets win.
TrainingTargets encode_targets(std::span<const GroundTruthBox> boxes, std::size_t num_classes, std::size_t height,
                               std::size_t width, std::size_t stride);

TrainingTargets stack_targets(const std::vector<TrainingTargets>& items);

struct BoundingConstraint {
    double bc_w = 0.0;  // log(width / 2s)
    double bc_h = 0.0;  // log(height / 2s)
};

BoundingConstraint encode_bounding_constraint(const Box& box, double stride);

/// Box of half-extents s*exp(bc) around (center_x, center_y).
Box decode_bounding_constraint(const BoundingConstraint& bc, double center_x, double center_y, double stride);

}  // namespace cornerdet
