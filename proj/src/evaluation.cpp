#include "cornerdet/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <tuple>

#include "cornerdet/tensor.hpp"

namespace cornerdet {

ScaleBucket scale_bucket(double area) {
    if (area <= 32.0 * 32.0) return ScaleBucket::small;
    if (area <= 96.0 * 96.0) return ScaleBucket::medium;
    return ScaleBucket::large;
}

std::string_view to_string(ScaleBucket b) {
    switch (b) {
        case ScaleBucket::small: return "small";
        case ScaleBucket::medium: return "medium";
        case ScaleBucket::large: return "large";
    }
    return "?";
}

std::vector<long> match_detections(const std::vector<Box>& dets, const std::vector<Box>& gts, double iou_thr) {
    std::vector<bool> taken(gts.size(), false);
    std::vector<long> out(dets.size(), -1);
    for (std::size_t d = 0; d < dets.size(); ++d) {
        long best = -1;
        double best_iou = -1.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g]) continue;
            const double v = iou(dets[d], gts[g]);
            if (v > best_iou) {
                best_iou = v;
                best = static_cast<long>(g);
            }
        }
        if (best >= 0 && best_iou >= iou_thr) {
            taken[static_cast<std::size_t>(best)] = true;
            out[d] = best;
        }
    }
    return out;
}

namespace {

PrCurve pr_curve(const std::vector<bool>& tp, std::size_t num_gt) {
    PrCurve c;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
        hits += tp[i] ? 1 : 0;
        c.recall.push_back(num_gt ? static_cast<double>(hits) / static_cast<double>(num_gt) : 0.0);
        c.precision.push_back(static_cast<double>(hits) / static_cast<double>(i + 1));
    }
    return c;
}

struct Scored {
    double score;
    std::size_t image;
    Box box;
};

}  // namespace

double average_precision(const std::vector<bool>& tp, std::size_t num_gt) {
    if (num_gt == 0) return 0.0;
    const PrCurve c = pr_curve(tp, num_gt);
    std::vector<double> envelope = c.precision;
    for (std::size_t i = envelope.size(); i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < envelope.size(); ++i) {
        ap += (c.recall[i] - prev_recall) * envelope[i];
        prev_recall = c.recall[i];
    }
    return ap;
}

EvalResult evaluate(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<GroundTruthBox>>& ground_truth,
                    const std::vector<std::string>& class_names, double iou_thr) {
    if (detections.size() != ground_truth.size()) {
        throw Error("evaluate: " + std::to_string(detections.size()) + " detection lists for " +
                    std::to_string(ground_truth.size()) + " images");
    }
    const std::size_t num_classes = class_names.size();
    auto check_class = [&](std::size_t c, const char* what) {
        if (c >= num_classes) {
            throw Error(std::string("evaluate: ") + what + " class id " + std::to_string(c) + " outside vocabulary of " +
                        std::to_string(num_classes));
        }
    };

    EvalResult r;
    r.class_names = class_names;
    r.class_ap.resize(num_classes);
    r.class_gt_count.assign(num_classes, 0);
    r.curves.resize(num_classes);

    constexpr std::size_t kBuckets = 3;
    std::vector<double> bucket_sum(kBuckets, 0.0);
    std::vector<std::size_t> bucket_classes(kBuckets, 0);

    std::vector<std::vector<std::vector<Box>>> gts(num_classes, std::vector<std::vector<Box>>(ground_truth.size()));
    for (std::size_t img = 0; img < ground_truth.size(); ++img) {
        for (const auto& g : ground_truth[img]) {
            check_class(g.class_id, "ground-truth");
            gts[g.class_id][img].push_back(g.box);
        }
    }
    std::vector<std::vector<Scored>> dets(num_classes);
    for (std::size_t img = 0; img < detections.size(); ++img) {
        for (const auto& d : detections[img]) {
            check_class(d.class_id, "detection");
            dets[d.class_id].push_back({d.score, img, d.box});
        }
    }

    double map_sum = 0.0;
    std::size_t map_count = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto& list = dets[c];
        std::sort(list.begin(), list.end(), [](const Scored& a, const Scored& b) {
            if (a.score != b.score) return a.score > b.score;
            return std::tie(a.image, a.box.tl_x, a.box.tl_y, a.box.br_x, a.box.br_y) <
                   std::tie(b.image, b.box.tl_x, b.box.tl_y, b.box.br_x, b.box.br_y);
        });

        // Matching is per image but must follow the global score order, so
        // walk the sorted list and keep per-image taken flags.
        std::vector<std::vector<bool>> taken(ground_truth.size());
        for (std::size_t img = 0; img < ground_truth.size(); ++img) taken[img].assign(gts[c][img].size(), false);
        std::vector<long> matched(list.size(), -1);
        for (std::size_t k = 0; k < list.size(); ++k) {
            const auto& g = gts[c][list[k].image];
            auto& t = taken[list[k].image];
            long best = -1;
            double best_iou = -1.0;
            for (std::size_t j = 0; j < g.size(); ++j) {
                if (t[j]) continue;
                const double v = iou(list[k].box, g[j]);
                if (v > best_iou) {
                    best_iou = v;
                    best = static_cast<long>(j);
                }
            }
            if (best >= 0 && best_iou >= iou_thr) {
                t[static_cast<std::size_t>(best)] = true;
                matched[k] = best;
            }
        }

        std::size_t num_gt = 0;
        std::vector<std::size_t> bucket_gt(kBuckets, 0);
        for (const auto& per_image : gts[c]) {
            num_gt += per_image.size();
            for (const Box& b : per_image) ++bucket_gt[static_cast<std::size_t>(scale_bucket(b.area()))];
        }
        r.class_gt_count[c] = num_gt;

        std::vector<bool> tp(list.size());
        for (std::size_t k = 0; k < list.size(); ++k) tp[k] = matched[k] >= 0;
        r.curves[c] = pr_curve(tp, num_gt);
        if (num_gt > 0) {
            const double ap = average_precision(tp, num_gt);
            r.class_ap[c] = ap;
            map_sum += ap;
            ++map_count;
        }

        for (std::size_t b = 0; b < kBuckets; ++b) {
            if (bucket_gt[b] == 0) continue;
            std::vector<bool> btp;
            for (std::size_t k = 0; k < list.size(); ++k) {
                if (matched[k] < 0) {
                    btp.push_back(false);
                    continue;
                }
                const Box& g = gts[c][list[k].image][static_cast<std::size_t>(matched[k])];
                if (static_cast<std::size_t>(scale_bucket(g.area())) == b) btp.push_back(true);
            }
            bucket_sum[b] += average_precision(btp, bucket_gt[b]);
            ++bucket_classes[b];
        }
    }
    r.map = map_count ? map_sum / static_cast<double>(map_count) : 0.0;
    auto bucket_ap = [&](std::size_t b) -> std::optional<double> {
        if (bucket_classes[b] == 0) return std::nullopt;
        return bucket_sum[b] / static_cast<double>(bucket_classes[b]);
    };
    r.ap_small = bucket_ap(0);
    r.ap_medium = bucket_ap(1);
    r.ap_large = bucket_ap(2);
    return r;
}

nlohmann::json EvalResult::to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        classes.push_back({{"name", class_names[c]}, {"ap", opt(class_ap[c])}, {"num_gt", class_gt_count[c]}});
    }
    return {{"mAP", map},
            {"classes", classes},
            {"ap_small", opt(ap_small)},
            {"ap_medium", opt(ap_medium)},
            {"ap_large", opt(ap_large)}};
}

std::string EvalResult::curves_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "class,recall,precision\n";
    for (std::size_t c = 0; c < curves.size(); ++c) {
        for (std::size_t i = 0; i < curves[c].recall.size(); ++i) {
            out << class_names[c] << ',' << curves[c].recall[i] << ',' << curves[c].precision[i] << '\n';
        }
    }
    return out.str();
}

}  // namespace cornerdet
