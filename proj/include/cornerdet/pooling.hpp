#pragma once

#include <cstddef>
#include <string_view>

#include "cornerdet/tensor.hpp"

namespace cornerdet {

/// Scan direction of a running-max pool. top/bottom run along the height
/// axis, left/right along the width axis. The name is the side the maximum
/// is gathered toward: top pooling scans from the last row upward.
enum class Direction { top, bottom, left, right };

enum class CornerType { top_left, bottom_right };

enum class PoolingVariant { cp, ccp, vhcp };

std::string_view to_string(Direction d);
std::string_view to_string(CornerType c);
std::string_view to_string(PoolingVariant v);
PoolingVariant parse_pooling_variant(std::string_view name);

/// (vertical, horizontal) scan directions that feed a corner.
Direction vertical_direction(CornerType corner);
Direction horizontal_direction(CornerType corner);

/// Running max along `d`. Each output cell's gradient routes to the single
/// input cell that supplied its maximum; ties go to the cell nearest the
/// scan start.
Tensor directional_pool(const Tensor& input, Direction d);

/// directional_pool(input, d) + residual in one pass. An undefined residual
/// is treated as zero.
Tensor pool_add(const Tensor& input, Direction d, const Tensor& residual);

/// Reference: every output cell is the explicit max over its whole ray.
/// O(H*W*(H+W)); no gradient.
Tensor naive_pool_oracle(const Tensor& input, Direction d);

/// Counts directional scans executed on this thread while alive.
class ScanCounter {
public:
    ScanCounter();
    ~ScanCounter();
    ScanCounter(const ScanCounter&) = delete;
    ScanCounter& operator=(const ScanCounter&) = delete;

    std::size_t count() const;

private:
    std::size_t start_;
};

// Pooling cores: the scan-and-sum part of each module, fed by the module's
// branch outputs. With every branch set to the module input they reduce to
// the hand-traceable identity-branch forms.

/// V(a) + H(b).
Tensor cp_core(const Tensor& a, const Tensor& b, CornerType corner);

/// V(H(a1) + a2) + H(V(b1) + b2).
Tensor ccp_core(const Tensor& a1, const Tensor& a2, const Tensor& b1, const Tensor& b2, CornerType corner);

/// H(V(a) + b) + c: vertical scan lifts the interior maximum onto the
/// horizontal margin, the horizontal scan carries the enhanced margin onto
/// the corner.
Tensor vhcp_core(const Tensor& a, const Tensor& b, const Tensor& c, CornerType corner);

/// right(left(a)) + bottom(top(b)): row max plus column max at every cell.
Tensor center_core(const Tensor& a, const Tensor& b);

}  // namespace cornerdet
