#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cornerdet/box.hpp"

namespace cornerdet {

enum class ScaleBucket { small, medium, large };

/// small: area <= 32^2, medium: <= 96^2, large: above.
ScaleBucket scale_bucket(double area);
std::string_view to_string(ScaleBucket b);

/// Per-detection TP flags for one class. Detections are visited in the
/// given order; each takes the highest-IoU GT not yet matched and is a TP
/// when that IoU reaches `iou_thr`. Returns the matched GT index or -1.
std::vector<long> match_detections(const std::vector<Box>& dets, const std::vector<Box>& gts, double iou_thr = 0.5);

/// All-point interpolated AP: area under the monotone precision envelope.
/// `tp` is ordered by descending score. Returns 0 when num_gt is 0.
double average_precision(const std::vector<bool>& tp, std::size_t num_gt);

struct PrCurve {
    std::vector<double> recall;
    std::vector<double> precision;
};

struct EvalResult {
    std::vector<std::string> class_names;
    std::vector<std::optional<double>> class_ap;  // empty for classes without GT
    std::vector<std::size_t> class_gt_count;
    std::vector<PrCurve> curves;
    double map = 0.0;
    std::optional<double> ap_small, ap_medium, ap_large;  // empty when the bucket has no GT

    nlohmann::json to_json() const;
    /// One row per curve point: class,recall,precision.
    std::string curves_csv() const;
};

/// `detections[i]` and `ground_truth[i]` belong to image i.
EvalResult evaluate(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<GroundTruthBox>>& ground_truth,
                    const std::vector<std::string>& class_names, double iou_thr = 0.5);

}  // namespace cornerdet
