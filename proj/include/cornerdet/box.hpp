#pragma once

#include <algorithm>
#include <cstddef>

namespace cornerdet {

/// Axis-aligned box in input-image pixels; origin top-left, y downward.
/// Extents are br - tl (no +1).
struct Box {
    double tl_x = 0.0;
    double tl_y = 0.0;
    double br_x = 0.0;
    double br_y = 0.0;

    double width() const { return br_x - tl_x; }
    double height() const { return br_y - tl_y; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    bool operator==(const Box&) const = default;
};

inline double iou(const Box& a, const Box& b) {
    const double iw = std::min(a.br_x, b.br_x) - std::max(a.tl_x, b.tl_x);
    const double ih = std::min(a.br_y, b.br_y) - std::max(a.tl_y, b.tl_y);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

struct GroundTruthBox {
    Box box;
    std::size_t class_id = 0;
    bool operator==(const GroundTruthBox&) const = default;
};

struct Detection {
    Box box;
    std::size_t class_id = 0;
    double score = 0.0;
    bool operator==(const Detection&) const = default;
};

}  // namespace cornerdet
