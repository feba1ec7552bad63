#include "cornerdet/targets.hpp"

#include <algorithm>
#include <cmath>

#include "cornerdet/ops.hpp"

namespace cornerdet {

double gaussian_radius(double width, double height, double min_overlap) {
    if (!(width > 0.0) || !(height > 0.0)) {
        throw Error("gaussian_radius: box extents must be positive, got " + std::to_string(width) + "x" +
                    std::to_string(height));
    }
    if (!(min_overlap > 0.0) || min_overlap > 1.0) throw Error("gaussian_radius: min_overlap must be in (0, 1]");
    const double o = min_overlap;
    const double sum = width + height;
    const double prod = width * height;

    // Both corners shifted the same way: (w-r)(h-r) / (2wh - (w-r)(h-r)) = o
    const double c1 = prod * (1.0 - o) / (1.0 + o);
    const double r1 = (sum - std::sqrt(std::max(0.0, sum * sum - 4.0 * c1))) / 2.0;
    // Both corners moved inward: (w-2r)(h-2r) / wh = o
    const double r2 = (2.0 * sum - std::sqrt(std::max(0.0, 4.0 * sum * sum - 16.0 * (1.0 - o) * prod))) / 8.0;
    // Both corners moved outward: wh / ((w+2r)(h+2r)) = o
    const double r3 = (-2.0 * o * sum + std::sqrt(std::max(0.0, 4.0 * o * o * sum * sum + 16.0 * o * (1.0 - o) * prod))) /
                      (8.0 * o);
    return std::max(0.0, std::min({r1, r2, r3}));
}

namespace {

struct Planes {
    std::size_t channels, height, width;
    std::vector<double> values;

    Planes(std::size_t c, std::size_t h, std::size_t w) : channels(c), height(h), width(w), values(c * h * w, 0.0) {}
    double& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
    Tensor tensor() { return Tensor::from_data({1, channels, height, width}, std::move(values)); }
};

void draw_gaussian(Planes& heat, std::size_t cls, std::size_t cx, std::size_t cy, double radius) {
    const double sigma = radius / 3.0;
    const auto extent = static_cast<long>(std::floor(radius));
    for (long dy = -extent; dy <= extent; ++dy) {
        for (long dx = -extent; dx <= extent; ++dx) {
            const long x = static_cast<long>(cx) + dx;
            const long y = static_cast<long>(cy) + dy;
            if (x < 0 || y < 0 || x >= static_cast<long>(heat.width) || y >= static_cast<long>(heat.height)) continue;
            const double d2 = static_cast<double>(dx * dx + dy * dy);
            const double v = (dx == 0 && dy == 0) ? 1.0 : std::exp(-d2 / (2.0 * sigma * sigma));
            double& cell = heat.at(cls, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            cell = std::max(cell, v);
        }
    }
}

std::size_t to_cell(double coord, std::size_t stride, std::size_t limit) {
    const double c = std::floor(coord / static_cast<double>(stride));
    return static_cast<std::size_t>(std::clamp(c, 0.0, static_cast<double>(limit - 1)));
}

struct PointTargets {
    Planes heat, offset, shift, mask;
    PointTargets(std::size_t c, std::size_t h, std::size_t w) : heat(c, h, w), offset(2, h, w), shift(2, h, w), mask(1, h, w) {}

    void add(const GroundTruthBox& gt, double px, double py, double radius, std::size_t stride,
             const BoundingConstraint& shift_value) {
        const std::size_t cx = to_cell(px, stride, heat.width);
        const std::size_t cy = to_cell(py, stride, heat.height);
        draw_gaussian(heat, gt.class_id, cx, cy, radius);
        offset.at(0, cy, cx) = px / static_cast<double>(stride) - static_cast<double>(cx);
        offset.at(1, cy, cx) = py / static_cast<double>(stride) - static_cast<double>(cy);
        shift.at(0, cy, cx) = shift_value.bc_w;
        shift.at(1, cy, cx) = shift_value.bc_h;
        mask.at(0, cy, cx) = 1.0;
    }
};

BranchTargets finish_branch(PointTargets& p) {
    BranchTargets b;
    b.heatmap = p.heat.tensor();
    b.offset = p.offset.tensor();
    b.centripetal = Tensor::from_data(b.offset.shape(), p.shift.values);
    b.guiding = p.shift.tensor();
    b.mask = p.mask.tensor();
    return b;
}

}  // namespace

TrainingTargets encode_targets(std::span<const GroundTruthBox> boxes, std::size_t num_classes, std::size_t height,
                               std::size_t width, std::size_t stride) {
    if (stride == 0 || height == 0 || width == 0) throw Error("encode_targets: empty target map");
    PointTargets tl(num_classes, height, width);
    PointTargets br(num_classes, height, width);
    PointTargets ce(num_classes, height, width);
    const auto s = static_cast<double>(stride);
    for (const GroundTruthBox& gt : boxes) {
        if (gt.class_id >= num_classes) {
            throw Error("encode_targets: class id " + std::to_string(gt.class_id) + " outside " +
                        std::to_string(num_classes) + " classes");
        }
        const Box& b = gt.box;
        const BoundingConstraint half = encode_bounding_constraint(b, s);
        const double radius = gaussian_radius(b.width() / s, b.height() / s);
        tl.add(gt, b.tl_x, b.tl_y, radius, stride, half);
        br.add(gt, b.br_x, b.br_y, radius, stride, half);
        ce.add(gt, 0.5 * (b.tl_x + b.br_x), 0.5 * (b.tl_y + b.br_y), radius, stride, half);
    }
    TrainingTargets t;
    t.tl = finish_branch(tl);
    t.br = finish_branch(br);
    t.center.heatmap = ce.heat.tensor();
    t.center.offset = ce.offset.tensor();
    t.center.bc = ce.shift.tensor();
    t.center.mask = ce.mask.tensor();
    t.stride = stride;
    t.num_objects = boxes.size();
    return t;
}

TrainingTargets stack_targets(const std::vector<TrainingTargets>& items) {
    if (items.empty()) throw Error("stack_targets: no targets");
    auto gather = [&](auto member) {
        std::vector<Tensor> parts;
        parts.reserve(items.size());
        for (const TrainingTargets& t : items) parts.push_back(member(t));
        return stack_batch(parts);
    };
    auto branch = [&](auto select) {
        BranchTargets b;
        b.heatmap = gather([&](const TrainingTargets& t) { return select(t).heatmap; });
        b.offset = gather([&](const TrainingTargets& t) { return select(t).offset; });
        b.centripetal = gather([&](const TrainingTargets& t) { return select(t).centripetal; });
        b.guiding = gather([&](const TrainingTargets& t) { return select(t).guiding; });
        b.mask = gather([&](const TrainingTargets& t) { return select(t).mask; });
        return b;
    };
    TrainingTargets out;
    out.tl = branch([](const TrainingTargets& t) -> const BranchTargets& { return t.tl; });
    out.br = branch([](const TrainingTargets& t) -> const BranchTargets& { return t.br; });
    out.center.heatmap = gather([](const TrainingTargets& t) { return t.center.heatmap; });
    out.center.offset = gather([](const TrainingTargets& t) { return t.center.offset; });
    out.center.bc = gather([](const TrainingTargets& t) { return t.center.bc; });
    out.center.mask = gather([](const TrainingTargets& t) { return t.center.mask; });
    out.stride = items.front().stride;
    for (const TrainingTargets& t : items) out.num_objects += t.num_objects;
    return out;
}

BoundingConstraint encode_bounding_constraint(const Box& box, double stride) {
    if (!(box.width() > 0.0) || !(box.height() > 0.0)) {
        throw Error("encode_bounding_constraint: box extent must be positive");
    }
    if (!(stride >= 1.0)) throw Error("encode_bounding_constraint: stride must be >= 1");
    return {std::log(box.width() / (2.0 * stride)), std::log(box.height() / (2.0 * stride))};
}

Box decode_bounding_constraint(const BoundingConstraint& bc, double center_x, double center_y, double stride) {
    const double half_w = stride * std::exp(bc.bc_w);
    const double half_h = stride * std::exp(bc.bc_h);
    return {center_x - half_w, center_y - half_h, center_x + half_w, center_y + half_h};
}

}  // namespace cornerdet
