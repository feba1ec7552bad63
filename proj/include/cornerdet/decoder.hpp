#pragma once

#include <cstddef>
#include <vector>

#include "cornerdet/box.hpp"
#include "cornerdet/network.hpp"

namespace cornerdet {

struct DecodeConfig {
    std::size_t top_k = 20;
    double score_threshold = 0.05;
    double mu = 0.3;  // central-region ratio
    double nms_iou = 0.5;

    void validate() const;
};

struct CornerCandidate {
    CornerType corner = CornerType::top_left;
    std::size_t class_id = 0;
    double score = 0.0;
    std::size_t row = 0, col = 0;
    double x = 0.0, y = 0.0;                // refined position, input pixels
    double center_x = 0.0, center_y = 0.0;  // predicted object center
};

/// Keeps a cell iff it equals its 3x3 maximum and no equal neighbour comes
/// earlier in row-major order. Applied to every [h, w] plane.
Tensor point_nms(const Tensor& heatmap);

/// Top-K cells over all classes of image `batch` of a point-NMS'd branch,
/// sorted by score descending then (class, row, col).
std::vector<CornerCandidate> topk_corners(const CornerPredictions& pred, const Tensor& peaks, CornerType corner,
                                          std::size_t stride, const DecodeConfig& config, std::size_t batch = 0);

/// Shared acceptance test: same class, tl strictly up-left of br, both
/// predicted centers within the mu-scaled central region.
bool corners_pair(const CornerCandidate& tl, const CornerCandidate& br, double mu);

/// Boxes are clamped to [0, width-1] x [0, height-1]; pairs that collapse
/// under clamping are dropped. Output is in canonical order.
std::vector<Detection> pair_corners(const std::vector<CornerCandidate>& tl, const std::vector<CornerCandidate>& br,
                                    const DecodeConfig& config, double image_width, double image_height);

/// Greedy per-class suppression of IoU > iou_thr (strict).
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thr);

/// Score descending, then class, then box lexicographic.
void sort_detections(std::vector<Detection>& dets);

/// Full pipeline for image `batch`. The image extent is the map extent times
/// the stride.
std::vector<Detection> decode(const RawPredictions& preds, const DecodeConfig& config, std::size_t batch = 0);

/// Exhaustive reference for decode. Rejects top_k > 20.
std::vector<Detection> brute_force_decode_oracle(const RawPredictions& preds, const DecodeConfig& config,
                                                 std::size_t batch = 0);

}  // namespace cornerdet
