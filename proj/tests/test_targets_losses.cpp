#include <gtest/gtest.h>

#include <cmath>

#include "cornerdet/gradcheck.hpp"
#include "cornerdet/losses.hpp"
#include "cornerdet/targets.hpp"
#include "test_util.hpp"

using namespace cornerdet;
using cornerdet::testing::random_tensor;
using cornerdet::testing::uniform_tensor;

namespace {

// IoU of the true box against one with both corners displaced by (r, r) in
// the worst of the three configurations the radius guards against.
double worst_iou(double w, double h, double r) {
    const Box truth{0, 0, w, h};
    const double shifted = iou(truth, Box{r, r, w + r, h + r});
    const double shrunk = iou(truth, Box{r, r, w - r, h - r});
    const double grown = iou(truth, Box{-r, -r, w + r, h + r});
    return std::min({shifted, shrunk, grown});
}

const GroundTruthBox kRunning{{8, 12, 40, 28}, 1};

}  // namespace

TEST(GaussianRadius, FullOverlapGivesZero) { EXPECT_NEAR(gaussian_radius(10, 10, 1.0), 0.0, 1e-12); }

TEST(GaussianRadius, TenByTenKeepsIouAboveThreshold) {
    const double r = gaussian_radius(10, 10, 0.7);
    EXPECT_GT(r, 0.0);
    EXPECT_GE(worst_iou(10, 10, r), 0.7 - 1e-9);
    // Tight: a slightly larger displacement breaks one configuration.
    EXPECT_LT(worst_iou(10, 10, r + 1e-3), 0.7);
}

TEST(GaussianRadius, HoldsOverSweep) {
    for (double w = 2; w <= 60; w += 3.5) {
        for (double h = 2; h <= 60; h += 4.5) {
            const double r = gaussian_radius(w, h, 0.7);
            EXPECT_GE(worst_iou(w, h, r), 0.7 - 1e-9) << w << "x" << h;
        }
    }
}

TEST(GaussianRadius, MonotoneInExtents) {
    double prev = 0.0;
    for (double w = 1; w < 80; w += 0.5) {
        const double r = gaussian_radius(w, 20);
        EXPECT_GE(r, prev - 1e-12);
        prev = r;
    }
    prev = 0.0;
    for (double h = 1; h < 80; h += 0.5) {
        const double r = gaussian_radius(20, h);
        EXPECT_GE(r, prev - 1e-12);
        prev = r;
    }
}

TEST(GaussianRadius, RejectsBadInputs) {
    EXPECT_THROW(gaussian_radius(0, 5), Error);
    EXPECT_THROW(gaussian_radius(5, -1), Error);
    EXPECT_THROW(gaussian_radius(5, 5, 0.0), Error);
    EXPECT_THROW(gaussian_radius(5, 5, 1.5), Error);
}

TEST(EncodeTargets, RunningExampleCells) {
    const TrainingTargets t = encode_targets(std::vector{kRunning}, 3, 12, 12, 4);
    EXPECT_EQ(t.tl.heatmap.at(0, 1, 3, 2), 1.0);
    EXPECT_EQ(t.br.heatmap.at(0, 1, 7, 10), 1.0);
    EXPECT_EQ(t.tl.mask.at(0, 0, 3, 2), 1.0);
    EXPECT_EQ(t.br.mask.at(0, 0, 7, 10), 1.0);
    EXPECT_EQ(t.tl.offset.at(0, 0, 3, 2), 0.0);
    EXPECT_EQ(t.tl.offset.at(0, 1, 3, 2), 0.0);
    EXPECT_NEAR(t.tl.centripetal.at(0, 0, 3, 2), 1.3863, 1e-4);
    EXPECT_NEAR(t.tl.centripetal.at(0, 1, 3, 2), 0.6931, 1e-4);
    EXPECT_NEAR(t.br.guiding.at(0, 0, 7, 10), std::log(4.0), 1e-12);
    // Center (24, 20) lands in cell (row 5, col 6); bc uses the same encoding.
    EXPECT_EQ(t.center.heatmap.at(0, 1, 5, 6), 1.0);
    EXPECT_NEAR(t.center.bc.at(0, 0, 5, 6), std::log(4.0), 1e-12);
    EXPECT_NEAR(t.center.bc.at(0, 1, 5, 6), std::log(2.0), 1e-12);
    double mask_sum = 0.0;
    for (double v : t.tl.mask.data()) mask_sum += v;
    EXPECT_EQ(mask_sum, 1.0);
    EXPECT_EQ(t.num_objects, 1u);
}

TEST(EncodeTargets, FractionalCornerOffset) {
    const TrainingTargets t = encode_targets(std::vector{GroundTruthBox{{10, 12, 40, 28}, 0}}, 1, 12, 12, 4);
    EXPECT_EQ(t.tl.mask.at(0, 0, 3, 2), 1.0);
    EXPECT_DOUBLE_EQ(t.tl.offset.at(0, 0, 3, 2), 0.5);
}

TEST(EncodeTargets, HeatmapRangeAndRadialDecay) {
    const TrainingTargets t = encode_targets(std::vector{GroundTruthBox{{20, 20, 80, 76}, 0}}, 1, 24, 24, 4);
    for (double v : t.tl.heatmap.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    // Moving away from the tl peak at (5, 5) never increases the value.
    for (std::size_t d = 0; d + 1 < 6; ++d) {
        EXPECT_GE(t.tl.heatmap.at(0, 0, 5, 5 + d), t.tl.heatmap.at(0, 0, 5, 5 + d + 1));
        EXPECT_GE(t.tl.heatmap.at(0, 0, 5 + d, 5 + d), t.tl.heatmap.at(0, 0, 5 + d + 1, 5 + d + 1));
    }
    EXPECT_GT(t.tl.heatmap.at(0, 0, 5, 6), 0.0);
}

TEST(EncodeTargets, SameClassOverlapMaxMergesAndLaterBoxWins) {
    const std::vector<GroundTruthBox> boxes = {{{8, 12, 40, 28}, 0}, {{9, 13, 73, 45}, 0}};
    const TrainingTargets both = encode_targets(boxes, 1, 12, 20, 4);
    const TrainingTargets first = encode_targets(std::vector{boxes[0]}, 1, 12, 20, 4);
    const TrainingTargets second = encode_targets(std::vector{boxes[1]}, 1, 12, 20, 4);
    for (std::size_t i = 0; i < both.tl.heatmap.numel(); ++i) {
        EXPECT_EQ(both.tl.heatmap.data()[i], std::max(first.tl.heatmap.data()[i], second.tl.heatmap.data()[i]));
    }
    EXPECT_EQ(both.tl.centripetal.at(0, 0, 3, 2), std::log(8.0));
    EXPECT_EQ(both.tl.offset.at(0, 0, 3, 2), 0.25);
}

TEST(EncodeTargets, DegenerateCellBoxStillEncoded) {
    const TrainingTargets t = encode_targets(std::vector{GroundTruthBox{{4.2, 4.2, 6.9, 7.5}, 0}}, 1, 6, 6, 4);
    EXPECT_EQ(t.tl.heatmap.at(0, 0, 1, 1), 1.0);
    EXPECT_EQ(t.br.heatmap.at(0, 0, 1, 1), 1.0);
}

TEST(EncodeTargets, RejectsUnknownClass) {
    EXPECT_THROW(encode_targets(std::vector{GroundTruthBox{{1, 1, 5, 5}, 4}}, 3, 4, 4, 4), Error);
}

TEST(BoundingConstraint, Fixtures) {
    const BoundingConstraint bc = encode_bounding_constraint(kRunning.box, 4);
    EXPECT_NEAR(bc.bc_w, 1.3863, 1e-4);
    EXPECT_NEAR(bc.bc_h, 0.6931, 1e-4);
    const BoundingConstraint unit = encode_bounding_constraint({0, 0, 8, 8}, 4);
    EXPECT_EQ(unit.bc_w, 0.0);
    EXPECT_EQ(unit.bc_h, 0.0);
    const Box box = decode_bounding_constraint({0, 0}, 10, 10, 4);
    EXPECT_EQ(box.width(), 8.0);
    EXPECT_EQ(box.height(), 8.0);
    EXPECT_THROW(encode_bounding_constraint({5, 5, 5, 9}, 4), Error);
}

TEST(BoundingConstraint, RoundTripSweep) {
    NormalStream s(99);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double x = s.uniform() * 500, y = s.uniform() * 500;
        const Box b{x, y, x + 0.5 + s.uniform() * 400, y + 0.5 + s.uniform() * 400};
        const Box back = decode_bounding_constraint(encode_bounding_constraint(b, 4), 0.5 * (b.tl_x + b.br_x),
                                                    0.5 * (b.tl_y + b.br_y), 4);
        worst = std::max({worst, std::abs(back.width() - b.width()), std::abs(back.height() - b.height())});
    }
    EXPECT_LE(worst, 1e-6);
}

TEST(FocalLoss, SingleCellFixtures) {
    const Tensor half = Tensor::scalar(0.5);
    EXPECT_NEAR(gaussian_focal_loss(half, Tensor::scalar(1.0), 1).item(), 0.25 * std::log(2.0), 1e-12);
    EXPECT_NEAR(gaussian_focal_loss(half, Tensor::scalar(0.0), 1).item(), 0.25 * std::log(2.0), 1e-12);
    EXPECT_NEAR(gaussian_focal_loss(half, Tensor::scalar(1.0), 1).item(), 0.1733, 1e-4);
}

TEST(FocalLoss, NearPerfectApproachesZeroAndPositiveOtherwise) {
    const Tensor target = Tensor::from_data({1, 1, 1, 3}, {1.0, 0.3, 0.0});
    EXPECT_LT(gaussian_focal_loss(Tensor::from_data({1, 1, 1, 3}, {1 - 1e-9, 1e-9, 1e-9}), target, 1).item(), 1e-6);
    EXPECT_GT(gaussian_focal_loss(Tensor::from_data({1, 1, 1, 3}, {0.9, 0.2, 0.1}), target, 1).item(), 0.0);
}

TEST(FocalLoss, NormalisedByObjectCountFlooredAtOne) {
    const Tensor p = Tensor::scalar(0.5), t = Tensor::scalar(1.0);
    EXPECT_DOUBLE_EQ(gaussian_focal_loss(p, t, 0).item(), gaussian_focal_loss(p, t, 1).item());
    EXPECT_DOUBLE_EQ(gaussian_focal_loss(p, t, 4).item(), gaussian_focal_loss(p, t, 1).item() / 4.0);
}

TEST(SmoothL1, BranchFixtures) {
    const Tensor m = Tensor::scalar(1.0);
    EXPECT_DOUBLE_EQ(smooth_l1_masked(Tensor::scalar(0.5), Tensor::scalar(0.0), m).item(), 0.125);
    EXPECT_DOUBLE_EQ(smooth_l1_masked(Tensor::scalar(2.0), Tensor::scalar(0.0), m).item(), 1.5);
    EXPECT_DOUBLE_EQ(smooth_l1_masked(Tensor::scalar(3.0), Tensor::scalar(3.0), m).item(), 0.0);
    EXPECT_DOUBLE_EQ(smooth_l1_masked(Tensor::scalar(3.0), Tensor::scalar(0.0), Tensor::scalar(0.0)).item(), 0.0);
}

TEST(SmoothL1, MeanOverMaskedElements) {
    // Two channels, one masked cell: residuals 0.5 and 2 average to 0.8125.
    const Tensor p = Tensor::from_data({1, 2, 1, 2}, {0.5, 9, 2, 9});
    const Tensor m = Tensor::from_data({1, 1, 1, 2}, {1, 0});
    EXPECT_DOUBLE_EQ(smooth_l1_masked(p, Tensor::zeros(p.shape()), m).item(), (0.125 + 1.5) / 2.0);
}

TEST(LossGradients, MatchFiniteDifferences) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const Tensor target = uniform_tensor({2, 3, 4, 4}, seed, 0.0, 0.9);
        std::vector<double> t(target.data().begin(), target.data().end());
        t[5] = 1.0;
        t[40] = 1.0;
        const Tensor tgt = Tensor::from_data(target.shape(), t);
        const Tensor p = uniform_tensor({2, 3, 4, 4}, seed + 1, 0.05, 0.95, true);
        EXPECT_TRUE(finite_diff_check([&](const Tensor& x) { return gaussian_focal_loss(x, tgt, 2); }, p, 1e-4, 1e-4)
                        .pass);

        const Tensor mask = Tensor::from_data({2, 1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 1, 0, 0});
        const Tensor goal = random_tensor({2, 2, 3, 3}, seed + 2, 2.0);
        const Tensor pred = random_tensor({2, 2, 3, 3}, seed + 3, 2.0, true);
        EXPECT_TRUE(
            finite_diff_check([&](const Tensor& x) { return smooth_l1_masked(x, goal, mask); }, pred, 1e-4, 1e-4).pass);
    }
}

namespace {

RawPredictions predictions_from(const TrainingTargets& t, bool with_center) {
    auto corner = [](const BranchTargets& b) {
        CornerPredictions c;
        std::vector<double> h(b.heatmap.data().begin(), b.heatmap.data().end());
        for (double& v : h) v = v == 1.0 ? 1.0 - 1e-12 : 1e-12;
        c.heatmap = Tensor::from_data(b.heatmap.shape(), h);
        c.offset = b.offset.clone();
        c.centripetal = b.centripetal.clone();
        c.guiding = b.guiding.clone();
        return c;
    };
    RawPredictions p;
    p.tl = corner(t.tl);
    p.br = corner(t.br);
    if (with_center) {
        std::vector<double> h(t.center.heatmap.data().begin(), t.center.heatmap.data().end());
        for (double& v : h) v = v == 1.0 ? 1.0 - 1e-12 : 1e-12;
        p.center = CenterPredictions{Tensor::from_data(t.center.heatmap.shape(), h), t.center.offset.clone(),
                                     t.center.bc.clone()};
    }
    return p;
}

}  // namespace

TEST(TotalLoss, PerfectPredictionsGiveNearZero) {
    const TrainingTargets t = encode_targets(std::vector{kRunning}, 3, 12, 12, 4);
    const LossBreakdown l = total_loss(predictions_from(t, true), t);
    EXPECT_LT(l.total, 1e-6);
    EXPECT_GE(l.total, 0.0);
}

TEST(TotalLoss, EqualsSumOfParts) {
    const TrainingTargets t = encode_targets(std::vector{kRunning, GroundTruthBox{{30, 2, 44, 40}, 2}}, 3, 12, 12, 4);
    RawPredictions p;
    auto corner = [](std::uint64_t s) {
        return CornerPredictions{uniform_tensor({1, 3, 12, 12}, s, 0.01, 0.99), random_tensor({1, 2, 12, 12}, s + 1),
                                 random_tensor({1, 2, 12, 12}, s + 2), random_tensor({1, 2, 12, 12}, s + 3)};
    };
    p.tl = corner(10);
    p.br = corner(20);
    p.center = CenterPredictions{uniform_tensor({1, 3, 12, 12}, 30, 0.01, 0.99), random_tensor({1, 2, 12, 12}, 31),
                                 random_tensor({1, 2, 12, 12}, 32)};
    const LossBreakdown l = total_loss(p, t);
    const double parts = l.det_tl + l.off_tl + l.cs_tl + kGuidingWeight * l.guiding_tl + l.det_br + l.off_br +
                         l.cs_br + kGuidingWeight * l.guiding_br + l.det_ce + l.off_ce + l.ba;
    EXPECT_NEAR(l.total, parts, 1e-9);
    for (double v : {l.det_tl, l.off_tl, l.cs_tl, l.guiding_tl, l.det_ce, l.off_ce, l.ba}) EXPECT_GE(v, 0.0);

    const CornerLossParts tl = corner_loss(p.tl, t.tl, t.num_objects);
    EXPECT_NEAR(tl.total.item(),
                tl.det.item() + tl.off.item() + tl.cs.item() + kGuidingWeight * tl.guiding.item(), 1e-12);

    p.center.reset();
    const LossBreakdown corners_only = total_loss(p, t);
    EXPECT_EQ(corners_only.ba, 0.0);
    EXPECT_NEAR(corners_only.total, l.total - (l.det_ce + l.off_ce + l.ba), 1e-9);
}

TEST(TotalLoss, GuidingWeightIsFivePercent) {
    EXPECT_EQ(kGuidingWeight, 0.05);
    const TrainingTargets t = encode_targets(std::vector{kRunning}, 3, 12, 12, 4);
    RawPredictions p = predictions_from(t, false);
    const double base = total_loss(p, t).total;
    std::vector<double> g(p.tl.guiding.data().begin(), p.tl.guiding.data().end());
    g[p.tl.guiding.index(0, 0, 3, 2)] += 0.5;
    p.tl.guiding = Tensor::from_data(p.tl.guiding.shape(), g);
    const LossBreakdown l = total_loss(p, t);
    EXPECT_NEAR(l.total - base, 0.05 * l.guiding_tl, 1e-12);
    EXPECT_NEAR(l.guiding_tl, 0.125 / 2.0, 1e-12);
}

TEST(TotalLoss, DoublingResidualsIncreasesTotal) {
    const TrainingTargets t = encode_targets(std::vector{kRunning}, 3, 12, 12, 4);
    auto perturbed = [&](double d) {
        RawPredictions p = predictions_from(t, true);
        for (Tensor* m : {&p.tl.offset, &p.br.centripetal, &p.center->bc}) {
            std::vector<double> v(m->data().begin(), m->data().end());
            for (double& x : v) x += d;
            *m = Tensor::from_data(m->shape(), v);
        }
        return total_loss(p, t).total;
    };
    EXPECT_GT(perturbed(0.4), perturbed(0.2));
}

TEST(BccaLoss, RejectsMissingCenterBranch) {
    const TrainingTargets t = encode_targets(std::vector{kRunning}, 3, 12, 12, 4);
    EXPECT_THROW(bcca_loss(predictions_from(t, false), t), Error);
    EXPECT_LT(bcca_loss(predictions_from(t, true), t).total.item(), 1e-6);
}

TEST(StackTargets, ConcatenatesAlongBatch) {
    const TrainingTargets a = encode_targets(std::vector{kRunning}, 3, 12, 12, 4);
    const TrainingTargets b = encode_targets(std::vector<GroundTruthBox>{}, 3, 12, 12, 4);
    const TrainingTargets s = stack_targets({a, b});
    EXPECT_EQ(s.tl.heatmap.shape(), (Shape{2, 3, 12, 12}));
    EXPECT_EQ(s.num_objects, 1u);
    EXPECT_EQ(s.tl.heatmap.at(0, 1, 3, 2), 1.0);
}
