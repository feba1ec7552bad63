#pragma once

#include <cmath>
#include <cstdint>

#include "cornerdet/network.hpp"
#include "test_util.hpp"

namespace cornerdet::testing {

/// Two 12x12 maps (stride 4) holding exactly the running-example pair: a
/// top-left corner at (8, 12) with score 0.9 and a bottom-right corner at
/// (40, 28) with score 0.8, both pointing at the center (24, 20).
inline RawPredictions hand_trace_predictions(std::size_t classes = 3, std::size_t cls = 1) {
    auto branch = [&](std::size_t row, std::size_t col, double score) {
        CornerPredictions c;
        c.heatmap = Tensor::zeros({1, classes, 12, 12});
        c.heatmap.mutable_data()[c.heatmap.index(0, cls, row, col)] = score;
        c.offset = Tensor::zeros({1, 2, 12, 12});
        c.centripetal = Tensor::zeros({1, 2, 12, 12});
        c.centripetal.mutable_data()[c.centripetal.index(0, 0, row, col)] = std::log(4.0);
        c.centripetal.mutable_data()[c.centripetal.index(0, 1, row, col)] = std::log(2.0);
        c.guiding = Tensor::zeros({1, 2, 12, 12});
        return c;
    };
    RawPredictions p;
    p.tl = branch(3, 2, 0.9);
    p.br = branch(7, 10, 0.8);
    return p;
}

/// Random maps: sparse noise peaks with quantised scores (to create ties)
/// plus a few planted objects whose corner shifts point near the shared
/// center, jittered so that some pairs fail the center gate.
inline RawPredictions random_predictions(std::uint64_t seed, std::size_t classes = 2, std::size_t h = 8,
                                         std::size_t w = 8) {
    NormalStream s(seed);
    auto branch = [&] {
        CornerPredictions c;
        std::vector<double> heat(classes * h * w);
        for (double& v : heat) v = s.uniform() < 0.08 ? std::round(s.uniform() * 20.0) / 20.0 : 0.0;
        c.heatmap = Tensor::from_data({1, classes, h, w}, heat);
        c.offset = uniform_tensor({1, 2, h, w}, seed * 7 + 1 + static_cast<std::uint64_t>(s.uniform() * 1e6), 0.0, 1.0);
        c.centripetal =
            uniform_tensor({1, 2, h, w}, seed * 7 + 2 + static_cast<std::uint64_t>(s.uniform() * 1e6), -0.5, 1.5);
        c.guiding = Tensor::zeros({1, 2, h, w});
        return c;
    };
    RawPredictions p;
    p.tl = branch();
    p.br = branch();

    constexpr double stride = 4.0;
    const std::size_t planted = 1 + static_cast<std::size_t>(s.uniform() * 3);
    for (std::size_t k = 0; k < planted && h > 1 && w > 1; ++k) {
        const std::size_t cls = static_cast<std::size_t>(s.uniform() * static_cast<double>(classes));
        const std::size_t r1 = static_cast<std::size_t>(s.uniform() * static_cast<double>(h - 1));
        const std::size_t c1 = static_cast<std::size_t>(s.uniform() * static_cast<double>(w - 1));
        const std::size_t r2 = r1 + 1 + static_cast<std::size_t>(s.uniform() * static_cast<double>(h - 1 - r1));
        const std::size_t c2 = c1 + 1 + static_cast<std::size_t>(s.uniform() * static_cast<double>(w - 1 - c1));
        const double x1 = stride * (static_cast<double>(c1) + p.tl.offset.at(0, 0, r1, c1));
        const double y1 = stride * (static_cast<double>(r1) + p.tl.offset.at(0, 1, r1, c1));
        const double x2 = stride * (static_cast<double>(c2) + p.br.offset.at(0, 0, r2, c2));
        const double y2 = stride * (static_cast<double>(r2) + p.br.offset.at(0, 1, r2, c2));
        if (x2 <= x1 || y2 <= y1) continue;
        auto plant = [&](CornerPredictions& c, std::size_t r, std::size_t col) {
            c.heatmap.mutable_data()[c.heatmap.index(0, cls, r, col)] = 0.5 + std::round(s.uniform() * 10.0) / 20.0;
            c.centripetal.mutable_data()[c.centripetal.index(0, 0, r, col)] =
                std::log((x2 - x1) / (2 * stride)) + 0.3 * (s.uniform() - 0.5);
            c.centripetal.mutable_data()[c.centripetal.index(0, 1, r, col)] =
                std::log((y2 - y1) / (2 * stride)) + 0.3 * (s.uniform() - 0.5);
        };
        plant(p.tl, r1, c1);
        plant(p.br, r2, c2);
    }
    return p;
}

}  // namespace cornerdet::testing
