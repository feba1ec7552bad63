#include <gtest/gtest.h>

#include "cornerdet/evaluation.hpp"
#include "eval_oracle.hpp"

using namespace cornerdet;
using cornerdet::testing::random_eval_instance;
using cornerdet::testing::threshold_sweep_oracle;

namespace {

const std::vector<std::string> kNames = {"a", "b", "c"};

}  // namespace

TEST(Iou, Fixtures) {
    const Box a{0, 0, 10, 10};
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    EXPECT_NEAR(iou(a, Box{5, 5, 15, 15}), 25.0 / 175.0, 1e-12);
    EXPECT_EQ(iou(a, Box{20, 20, 30, 30}), 0.0);
    EXPECT_EQ(iou(a, Box{10, 0, 20, 10}), 0.0);
}

TEST(Match, Fixtures) {
    const Box g{0, 0, 10, 10};
    EXPECT_EQ(match_detections({g}, {g}), (std::vector<long>{0}));
    EXPECT_EQ(match_detections({g, g}, {g}), (std::vector<long>{0, -1}));
    EXPECT_EQ(match_detections({Box{0, 0, 10, 4}}, {g}), (std::vector<long>{-1}));
}

TEST(Match, TakesHighestIouUnmatchedGt) {
    const Box g1{0, 0, 10, 10}, g2{2, 0, 12, 10};
    // The first detection sits on g1, the second prefers g1 but falls back to g2.
    EXPECT_EQ(match_detections({g1, Box{1, 0, 11, 10}}, {g1, g2}), (std::vector<long>{0, 1}));
}

TEST(AveragePrecision, Fixtures) {
    EXPECT_DOUBLE_EQ(average_precision({true}, 1), 1.0);
    EXPECT_NEAR(average_precision({true, false, true}, 2), 0.5 + 0.5 * 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(average_precision({true, false, true}, 2), 0.8333, 1e-4);
    EXPECT_EQ(average_precision({false, false}, 3), 0.0);
    EXPECT_EQ(average_precision({}, 0), 0.0);
}

TEST(ScaleBuckets, Thresholds) {
    EXPECT_EQ(scale_bucket(900), ScaleBucket::small);
    EXPECT_EQ(scale_bucket(1024), ScaleBucket::small);
    EXPECT_EQ(scale_bucket(2500), ScaleBucket::medium);
    EXPECT_EQ(scale_bucket(9216), ScaleBucket::medium);
    EXPECT_EQ(scale_bucket(10000), ScaleBucket::large);
}

TEST(Evaluate, PerfectAndEmpty) {
    const std::vector<std::vector<GroundTruthBox>> gts = {
        {{{0, 0, 30, 30}, 0}, {{40, 40, 90, 90}, 1}}, {{{0, 0, 100, 100}, 2}}};
    std::vector<std::vector<Detection>> perfect;
    for (const auto& img : gts) {
        std::vector<Detection> d;
        for (const auto& g : img) d.push_back({g.box, g.class_id, 0.9});
        perfect.push_back(d);
    }
    const EvalResult r = evaluate(perfect, gts, kNames);
    EXPECT_EQ(r.map, 1.0);
    EXPECT_EQ(r.ap_small, 1.0);
    EXPECT_EQ(r.ap_medium, 1.0);
    EXPECT_EQ(r.ap_large, 1.0);
    const EvalResult none = evaluate({{}, {}}, gts, kNames);
    EXPECT_EQ(none.map, 0.0);
}

TEST(Evaluate, ClassesWithoutGtAreExcluded) {
    const std::vector<std::vector<GroundTruthBox>> gts = {{{{0, 0, 30, 30}, 0}}};
    const EvalResult r = evaluate({{{{0, 0, 30, 30}, 0, 0.9}, {{50, 50, 60, 60}, 2, 0.9}}}, gts, kNames);
    EXPECT_EQ(r.map, 1.0);
    EXPECT_FALSE(r.class_ap[1].has_value());
    EXPECT_FALSE(r.class_ap[2].has_value());
    EXPECT_FALSE(r.ap_large.has_value());
}

TEST(Evaluate, RejectsOutOfVocabularyClass) {
    EXPECT_THROW(evaluate({{{{0, 0, 5, 5}, 7, 0.5}}}, {{}}, kNames), Error);
    EXPECT_THROW(evaluate({{}}, {{{{0, 0, 5, 5}, 3}}}, kNames), Error);
}

TEST(Evaluate, OutOfBucketMatchesAreIgnored) {
    const std::vector<std::vector<GroundTruthBox>> gts = {{{{0, 0, 20, 20}, 0}, {{100, 100, 200, 200}, 0}}};
    // The large-box detection outranks the small one; in the small bucket it
    // must neither help nor hurt.
    const std::vector<std::vector<Detection>> dets = {
        {{{100, 100, 200, 200}, 0, 0.9}, {{0, 0, 20, 20}, 0, 0.8}, {{300, 0, 310, 10}, 0, 0.95}}};
    const EvalResult r = evaluate(dets, gts, {"a"});
    ASSERT_TRUE(r.ap_small && r.ap_large);
    EXPECT_NEAR(*r.ap_small, 0.5, 1e-12);
    EXPECT_NEAR(*r.ap_large, 0.5, 1e-12);
}

TEST(Evaluate, MatchesThresholdSweepOracle) {
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const auto inst = random_eval_instance(seed);
        const EvalResult r = evaluate(inst.dets, inst.gts, kNames);
        const auto o = threshold_sweep_oracle(inst.dets, inst.gts, 3);
        EXPECT_NEAR(r.map, o.map, 1e-9) << seed;
        for (std::size_t c = 0; c < 3; ++c) {
            ASSERT_EQ(r.class_ap[c].has_value(), o.class_ap[c].has_value());
            if (o.class_ap[c]) {
                EXPECT_NEAR(*r.class_ap[c], *o.class_ap[c], 1e-9);
            }
        }
        const std::optional<double> buckets[3] = {r.ap_small, r.ap_medium, r.ap_large};
        for (int b = 0; b < 3; ++b) {
            ASSERT_EQ(buckets[b].has_value(), o.bucket_ap[b].has_value()) << seed << " bucket " << b;
            if (buckets[b]) {
                EXPECT_NEAR(*buckets[b], *o.bucket_ap[b], 1e-9) << seed << " bucket " << b;
            }
        }
    }
}

TEST(Evaluate, EqualScorePermutationInvariance) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto inst = random_eval_instance(seed);
        const double before = evaluate(inst.dets, inst.gts, kNames).map;
        for (auto& d : inst.dets) std::reverse(d.begin(), d.end());
        EXPECT_EQ(evaluate(inst.dets, inst.gts, kNames).map, before);
    }
}

TEST(Evaluate, UnmatchedDetectionNeverRaisesAp) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto inst = random_eval_instance(seed);
        if (inst.dets.empty()) continue;
        const EvalResult before = evaluate(inst.dets, inst.gts, kNames);
        inst.dets[0].push_back({{900, 900, 950, 950}, seed % 3, 0.5});
        const EvalResult after = evaluate(inst.dets, inst.gts, kNames);
        EXPECT_LE(after.map, before.map + 1e-12);
        for (std::size_t c = 0; c < 3; ++c)
            if (before.class_ap[c]) {
                EXPECT_LE(*after.class_ap[c], *before.class_ap[c] + 1e-12);
            }
    }
}

TEST(Evaluate, SelfEvaluationIsExactlyOne) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto inst = random_eval_instance(seed);
        std::vector<std::vector<Detection>> self;
        bool any = false;
        for (const auto& img : inst.gts) {
            std::vector<Detection> d;
            for (const auto& g : img) d.push_back({g.box, g.class_id, 1.0}), any = true;
            self.push_back(d);
        }
        if (any) {
            EXPECT_EQ(evaluate(self, inst.gts, kNames).map, 1.0);
        }
    }
}

TEST(EvalResult, JsonAndCsv) {
    const std::vector<std::vector<GroundTruthBox>> gts = {{{{0, 0, 20, 20}, 0}}};
    const EvalResult r = evaluate({{{{0, 0, 20, 20}, 0, 0.9}}}, gts, kNames);
    const auto j = r.to_json();
    EXPECT_EQ(j.at("mAP"), 1.0);
    EXPECT_TRUE(j.at("ap_large").is_null());
    EXPECT_EQ(j.at("classes").size(), 3u);
    EXPECT_EQ(j.at("classes")[0].at("name"), "a");
    EXPECT_NE(r.curves_csv().find("class,recall,precision\na,1,1\n"), std::string::npos);
}
