#include "cornerdet/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace cornerdet {

void DecodeConfig::validate() const {
    if (top_k == 0) throw Error("decode config: top_k must be >= 1");
    if (!(mu > 0.0) || mu > 1.0) throw Error("decode config: mu must be in (0, 1]");
    if (!(nms_iou >= 0.0) || nms_iou > 1.0) throw Error("decode config: nms_iou must be in [0, 1]");
}

Tensor point_nms(const Tensor& heatmap) {
    const Shape& s = heatmap.shape();
    const auto in = heatmap.data();
    std::vector<double> out(in.size(), 0.0);
    const auto h = static_cast<long>(s.h);
    const auto w = static_cast<long>(s.w);
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const double* x = in.data() + p * s.plane();
        double* o = out.data() + p * s.plane();
        for (long i = 0; i < h; ++i) {
            for (long j = 0; j < w; ++j) {
                const double v = x[i * w + j];
                bool keep = true;
                for (long di = -1; di <= 1 && keep; ++di) {
                    for (long dj = -1; dj <= 1; ++dj) {
                        const long ii = i + di, jj = j + dj;
                        if ((di == 0 && dj == 0) || ii < 0 || jj < 0 || ii >= h || jj >= w) continue;
                        const double u = x[ii * w + jj];
                        const bool earlier = ii < i || (ii == i && jj < j);
                        if (u > v || (u == v && earlier)) {
                            keep = false;
                            break;
                        }
                    }
                }
                if (keep) o[i * w + j] = v;
            }
        }
    }
    return Tensor::from_data(s, std::move(out));
}

namespace {

bool candidate_before(const CornerCandidate& a, const CornerCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.class_id, a.row, a.col) < std::tie(b.class_id, b.row, b.col);
}

CornerCandidate make_candidate(const CornerPredictions& pred, CornerType corner, std::size_t stride,
                               std::size_t batch, std::size_t cls, std::size_t row, std::size_t col, double score) {
    const double s = static_cast<double>(stride);
    CornerCandidate c;
    c.corner = corner;
    c.class_id = cls;
    c.score = score;
    c.row = row;
    c.col = col;
    c.x = s * (static_cast<double>(col) + pred.offset.at(batch, 0, row, col));
    c.y = s * (static_cast<double>(row) + pred.offset.at(batch, 1, row, col));
    const double sign = corner == CornerType::top_left ? 1.0 : -1.0;
    c.center_x = c.x + sign * s * std::exp(pred.centripetal.at(batch, 0, row, col));
    c.center_y = c.y + sign * s * std::exp(pred.centripetal.at(batch, 1, row, col));
    return c;
}

Box clamp_box(Box b, double width, double height) {
    b.tl_x = std::clamp(b.tl_x, 0.0, width - 1.0);
    b.br_x = std::clamp(b.br_x, 0.0, width - 1.0);
    b.tl_y = std::clamp(b.tl_y, 0.0, height - 1.0);
    b.br_y = std::clamp(b.br_y, 0.0, height - 1.0);
    return b;
}

bool emit(const CornerCandidate& tl, const CornerCandidate& br, double width, double height, Detection& out) {
    out.box = clamp_box({tl.x, tl.y, br.x, br.y}, width, height);
    out.class_id = tl.class_id;
    out.score = 0.5 * (tl.score + br.score);
    return out.box.tl_x < out.box.br_x && out.box.tl_y < out.box.br_y;
}

void check_batch(const RawPredictions& preds, std::size_t batch) {
    if (batch >= preds.tl.heatmap.shape().n) {
        throw Error("decode: batch index " + std::to_string(batch) + " out of range for " +
                    preds.tl.heatmap.shape().str());
    }
}

}  // namespace

std::vector<CornerCandidate> topk_corners(const CornerPredictions& pred, const Tensor& peaks, CornerType corner,
                                          std::size_t stride, const DecodeConfig& config, std::size_t batch) {
    const Shape& s = peaks.shape();
    std::vector<CornerCandidate> all;
    for (std::size_t c = 0; c < s.c; ++c) {
        for (std::size_t i = 0; i < s.h; ++i) {
            for (std::size_t j = 0; j < s.w; ++j) {
                const double v = peaks.at(batch, c, i, j);
                if (v > 0.0 && v >= config.score_threshold) {
                    CornerCandidate cand;
                    cand.class_id = c;
                    cand.score = v;
                    cand.row = i;
                    cand.col = j;
                    all.push_back(cand);
                }
            }
        }
    }
    const std::size_t k = std::min(config.top_k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<long>(k), all.end(), candidate_before);
    all.resize(k);
    for (CornerCandidate& c : all) c = make_candidate(pred, corner, stride, batch, c.class_id, c.row, c.col, c.score);
    return all;
}

bool corners_pair(const CornerCandidate& tl, const CornerCandidate& br, double mu) {
    if (tl.class_id != br.class_id) return false;
    if (!(tl.x < br.x) || !(tl.y < br.y)) return false;
    const double cx = 0.5 * (tl.x + br.x);
    const double cy = 0.5 * (tl.y + br.y);
    const double hx = 0.5 * mu * (br.x - tl.x);
    const double hy = 0.5 * mu * (br.y - tl.y);
    auto inside = [&](const CornerCandidate& c) {
        return std::abs(c.center_x - cx) <= hx && std::abs(c.center_y - cy) <= hy;
    };
    return inside(tl) && inside(br);
}

void sort_detections(std::vector<Detection>& dets) {
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::tie(a.class_id, a.box.tl_x, a.box.tl_y, a.box.br_x, a.box.br_y) <
               std::tie(b.class_id, b.box.tl_x, b.box.tl_y, b.box.br_x, b.box.br_y);
    });
}

std::vector<Detection> pair_corners(const std::vector<CornerCandidate>& tl, const std::vector<CornerCandidate>& br,
                                    const DecodeConfig& config, double image_width, double image_height) {
    // Bucket bottom-right candidates by class so each top-left only meets
    // same-class partners.
    std::size_t classes = 0;
    for (const auto& c : br) classes = std::max(classes, c.class_id + 1);
    std::vector<std::vector<const CornerCandidate*>> by_class(classes);
    for (const auto& c : br) by_class[c.class_id].push_back(&c);

    std::vector<Detection> out;
    for (const CornerCandidate& a : tl) {
        if (a.class_id >= classes) continue;
        for (const CornerCandidate* b : by_class[a.class_id]) {
            Detection d;
            if (corners_pair(a, *b, config.mu) && emit(a, *b, image_width, image_height, d)) out.push_back(d);
        }
    }
    sort_detections(out);
    return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thr) {
    sort_detections(dets);
    std::vector<Detection> kept;
    for (const Detection& d : dets) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (k.class_id == d.class_id && iou(k.box, d.box) > iou_thr) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

std::vector<Detection> decode(const RawPredictions& preds, const DecodeConfig& config, std::size_t batch) {
    config.validate();
    check_batch(preds, batch);
    const Shape& s = preds.tl.heatmap.shape();
    const double width = static_cast<double>(s.w * preds.stride);
    const double height = static_cast<double>(s.h * preds.stride);
    const auto tl = topk_corners(preds.tl, point_nms(preds.tl.heatmap), CornerType::top_left, preds.stride, config,
                                 batch);
    const auto br = topk_corners(preds.br, point_nms(preds.br.heatmap), CornerType::bottom_right, preds.stride,
                                 config, batch);
    return nms(pair_corners(tl, br, config, width, height), config.nms_iou);
}

std::vector<Detection> brute_force_decode_oracle(const RawPredictions& preds, const DecodeConfig& config,
                                                 std::size_t batch) {
    config.validate();
    if (config.top_k > 20) {
        throw Error("brute_force_decode_oracle: top_k " + std::to_string(config.top_k) + " exceeds the limit of 20");
    }
    check_batch(preds, batch);
    const Shape& s = preds.tl.heatmap.shape();
    const double width = static_cast<double>(s.w * preds.stride);
    const double height = static_cast<double>(s.h * preds.stride);

    // Candidates straight from the raw heatmap: a cell is a peak when no
    // 3x3 neighbour beats it, counting equal earlier cells as beating it.
    auto extract = [&](const CornerPredictions& pred, CornerType corner) {
        std::vector<CornerCandidate> all;
        const Tensor& hm = pred.heatmap;
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t i = 0; i < s.h; ++i) {
                for (std::size_t j = 0; j < s.w; ++j) {
                    const double v = hm.at(batch, c, i, j);
                    bool peak = v > 0.0 && v >= config.score_threshold;
                    for (std::size_t ii = i == 0 ? 0 : i - 1; peak && ii <= std::min(i + 1, s.h - 1); ++ii) {
                        for (std::size_t jj = j == 0 ? 0 : j - 1; jj <= std::min(j + 1, s.w - 1); ++jj) {
                            if (ii == i && jj == j) continue;
                            const double u = hm.at(batch, c, ii, jj);
                            if (u > v || (u == v && ii * s.w + jj < i * s.w + j)) peak = false;
                        }
                    }
                    if (peak) all.push_back(make_candidate(pred, corner, preds.stride, batch, c, i, j, v));
                }
            }
        }
        std::sort(all.begin(), all.end(), candidate_before);
        if (all.size() > config.top_k) all.resize(config.top_k);
        return all;
    };
    const auto tl = extract(preds.tl, CornerType::top_left);
    const auto br = extract(preds.br, CornerType::bottom_right);

    std::vector<Detection> all;
    for (const auto& a : tl) {
        for (const auto& b : br) {
            Detection d;
            if (corners_pair(a, b, config.mu) && emit(a, b, width, height, d)) all.push_back(d);
        }
    }
    // Suppression by exhaustive pass over the canonically ordered list.
    sort_detections(all);
    std::vector<bool> alive(all.size(), true);
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (!alive[i]) continue;
        for (std::size_t j = i + 1; j < all.size(); ++j) {
            if (alive[j] && all[j].class_id == all[i].class_id && iou(all[i].box, all[j].box) > config.nms_iou) {
                alive[j] = false;
            }
        }
    }
    std::vector<Detection> out;
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (alive[i]) out.push_back(all[i]);
    }
    return out;
}

}  // namespace cornerdet
