#include "cornerdet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace cornerdet {

namespace {

struct FocalNode final : detail::Node {
    std::vector<double> dloss;  // d loss / d pred, already normalised

    void backward(const detail::TensorImpl& out) override {
        auto& d = inputs[0]->grad_buffer();
        const double g = out.grad[0];
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * dloss[i];
    }
};

struct SmoothL1Node final : detail::Node {
    std::vector<double> dpred;  // d loss / d pred; target gets the negative
    bool pred_tracked = false;
    bool target_tracked = false;

    void backward(const detail::TensorImpl& out) override {
        const double g = out.grad[0];
        if (pred_tracked) {
            auto& d = inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * dpred[i];
        }
        if (target_tracked) {
            auto& d = inputs[1]->grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g * dpred[i];
        }
    }
};

}  // namespace

Tensor gaussian_focal_loss(const Tensor& pred, const Tensor& target, std::size_t num_objects) {
    if (pred.shape() != target.shape()) {
        throw Error("gaussian_focal_loss: prediction " + pred.shape().str() + " vs target " + target.shape().str());
    }
    const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(num_objects, 1));
    const auto p_all = pred.data();
    const auto t_all = target.data();
    const bool track = detail::needs_grad({&pred});
    std::vector<double> grad(track ? p_all.size() : 0, 0.0);
    std::uint64_t clamped = 0;
    double total = 0.0;
    for (std::size_t i = 0; i < p_all.size(); ++i) {
        const double raw = p_all[i];
        const double p = std::clamp(raw, kFocalClamp, 1.0 - kFocalClamp);
        const bool inside = p == raw;
        if (!inside) clamped = clamped * 31 + i + 1;
        const double t = t_all[i];
        double value, slope;
        if (t == 1.0) {
            const double q = 1.0 - p;
            value = q * q * std::log(p);
            slope = -2.0 * q * std::log(p) + q * q / p;
        } else {
            const double w = std::pow(1.0 - t, 4);
            const double lq = std::log(1.0 - p);
            value = w * p * p * lq;
            slope = w * (2.0 * p * lq - p * p / (1.0 - p));
        }
        total -= value * norm;
        if (track && inside) grad[i] = -slope * norm;
    }
    if (detail::recording_decisions()) detail::record_decision(clamped);
    std::shared_ptr<FocalNode> node;
    if (track) {
        node = std::make_shared<FocalNode>();
        node->inputs.push_back(pred.impl());
        node->dloss = std::move(grad);
    }
    return detail::make_result({1, 1, 1, 1}, {total}, node);
}

Tensor smooth_l1_masked(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    const Shape& s = pred.shape();
    if (target.shape() != s) {
        throw Error("smooth_l1_masked: prediction " + s.str() + " vs target " + target.shape().str());
    }
    const Shape& ms = mask.shape();
    if (ms.n != s.n || ms.c != 1 || ms.h != s.h || ms.w != s.w) {
        throw Error("smooth_l1_masked: mask " + ms.str() + " does not broadcast to " + s.str());
    }
    const auto p = pred.data();
    const auto t = target.data();
    const auto m = mask.data();
    double weight_sum = 0.0;
    for (double v : m) weight_sum += v;
    weight_sum *= static_cast<double>(s.c);

    const bool track = detail::needs_grad({&pred, &target});
    std::vector<double> grad(track ? p.size() : 0, 0.0);
    std::uint64_t branches = 0;
    double total = 0.0;
    if (weight_sum > 0.0) {
        const std::size_t plane = s.plane();
        for (std::size_t n = 0; n < s.n; ++n) {
            for (std::size_t c = 0; c < s.c; ++c) {
                for (std::size_t k = 0; k < plane; ++k) {
                    const double w = m[n * plane + k];
                    if (w == 0.0) continue;
                    const std::size_t i = (n * s.c + c) * plane + k;
                    const double d = p[i] - t[i];
                    const bool quadratic = std::abs(d) < 1.0;
                    branches = branches * 3 + (quadratic ? 1 : 2);
                    total += w * (quadratic ? 0.5 * d * d : std::abs(d) - 0.5);
                    if (track) grad[i] = w * (quadratic ? d : (d > 0 ? 1.0 : -1.0)) / weight_sum;
                }
            }
        }
        total /= weight_sum;
    }
    if (detail::recording_decisions()) detail::record_decision(branches);
    std::shared_ptr<SmoothL1Node> node;
    if (track) {
        node = std::make_shared<SmoothL1Node>();
        node->inputs.push_back(pred.impl());
        node->inputs.push_back(target.impl());
        node->pred_tracked = pred.requires_grad();
        node->target_tracked = target.requires_grad();
        node->dpred = std::move(grad);
    }
    return detail::make_result({1, 1, 1, 1}, {total}, node);
}

CornerLossParts corner_loss(const CornerPredictions& pred, const BranchTargets& target, std::size_t num_objects) {
    CornerLossParts parts;
    parts.det = gaussian_focal_loss(pred.heatmap, target.heatmap, num_objects);
    parts.off = smooth_l1_masked(pred.offset, target.offset, target.mask);
    parts.cs = smooth_l1_masked(pred.centripetal, target.centripetal, target.mask);
    parts.guiding = smooth_l1_masked(pred.guiding, target.guiding, target.mask);
    parts.total = add(add(parts.det, parts.off), add(parts.cs, scale(parts.guiding, kGuidingWeight)));
    return parts;
}

CenterLossParts bcca_loss(const RawPredictions& pred, const TrainingTargets& target) {
    if (!pred.center) throw Error("bcca_loss: predictions carry no center branch (pruned or eval-mode model)");
    const CenterPredictions& c = *pred.center;
    CenterLossParts parts;
    parts.det = gaussian_focal_loss(c.heatmap, target.center.heatmap, target.num_objects);
    parts.off = smooth_l1_masked(c.offset, target.center.offset, target.center.mask);
    parts.bc = smooth_l1_masked(c.bc, target.center.bc, target.center.mask);
    parts.total = add(add(parts.det, parts.off), parts.bc);
    return parts;
}

LossBreakdown total_loss(const RawPredictions& pred, const TrainingTargets& target) {
    const CornerLossParts tl = corner_loss(pred.tl, target.tl, target.num_objects);
    const CornerLossParts br = corner_loss(pred.br, target.br, target.num_objects);
    LossBreakdown out;
    out.det_tl = tl.det.item();
    out.off_tl = tl.off.item();
    out.cs_tl = tl.cs.item();
    out.guiding_tl = tl.guiding.item();
    out.det_br = br.det.item();
    out.off_br = br.off.item();
    out.cs_br = br.cs.item();
    out.guiding_br = br.guiding.item();
    out.objective = add(tl.total, br.total);
    if (pred.center) {
        const CenterLossParts ce = bcca_loss(pred, target);
        out.det_ce = ce.det.item();
        out.off_ce = ce.off.item();
        out.ba = ce.bc.item();
        out.objective = add(out.objective, ce.total);
    }
    out.total = out.objective.item();
    return out;
}

}  // namespace cornerdet
