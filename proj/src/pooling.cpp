#include "cornerdet/pooling.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>
#include <vector>

namespace cornerdet {

namespace {

thread_local std::size_t g_scans = 0;

bool is_vertical(Direction d) { return d == Direction::top || d == Direction::bottom; }

// top and left scan from the far end back toward index 0.
bool scans_backward(Direction d) { return d == Direction::top || d == Direction::left; }

/// Gradient routing for a scan: source[i] is the flat index of the input
/// cell whose value output cell i carries.
struct PoolNode final : detail::Node {
    std::vector<std::uint32_t> source;
    bool has_residual = false;

    void backward(const detail::TensorImpl& out) override {
        detail::TensorImpl& x = *inputs[0];
        if (x.requires_grad) {
            auto& dx = x.grad_buffer();
            for (std::size_t i = 0; i < source.size(); ++i) dx[source[i]] += out.grad[i];
        }
        if (has_residual && inputs[1]->requires_grad) {
            auto& dr = inputs[1]->grad_buffer();
            for (std::size_t i = 0; i < dr.size(); ++i) dr[i] += out.grad[i];
        }
    }
};

// Scans one plane. Vertical scans advance a whole row of running maxima at
// a time; horizontal scans walk each row. `base` offsets recorded sources to
// flat tensor indices.
template <bool Track>
void scan_plane(const double* x, const double* r, double* out, std::uint32_t* src, std::size_t base,
                std::size_t height, std::size_t width, Direction d) {
    if (is_vertical(d)) {
        const bool back = scans_backward(d);
        const std::size_t first = back ? height - 1 : 0;
        std::vector<double> run(x + first * width, x + (first + 1) * width);
        std::vector<std::uint32_t> arg;
        if constexpr (Track) {
            arg.resize(width);
            for (std::size_t j = 0; j < width; ++j) arg[j] = static_cast<std::uint32_t>(base + first * width + j);
        }
        for (std::size_t step = 0; step < height; ++step) {
            const std::size_t i = back ? height - 1 - step : step;
            const double* row = x + i * width;
            double* orow = out + i * width;
            const double* rrow = r ? r + i * width : nullptr;
            for (std::size_t j = 0; j < width; ++j) {
                if constexpr (Track) {
                    if (row[j] > run[j]) {
                        run[j] = row[j];
                        arg[j] = static_cast<std::uint32_t>(base + i * width + j);
                    }
                    src[i * width + j] = arg[j];
                } else {
                    run[j] = std::max(run[j], row[j]);
                }
                orow[j] = rrow ? run[j] + rrow[j] : run[j];
            }
        }
        return;
    }
    const bool back = scans_backward(d);
    for (std::size_t i = 0; i < height; ++i) {
        const double* row = x + i * width;
        double* orow = out + i * width;
        const double* rrow = r ? r + i * width : nullptr;
        const std::size_t first = back ? width - 1 : 0;
        double run = row[first];
        auto arg = static_cast<std::uint32_t>(base + i * width + first);
        for (std::size_t step = 0; step < width; ++step) {
            const std::size_t j = back ? width - 1 - step : step;
            if constexpr (Track) {
                if (row[j] > run) {
                    run = row[j];
                    arg = static_cast<std::uint32_t>(base + i * width + j);
                }
                src[i * width + j] = arg;
            } else {
                run = std::max(run, row[j]);
            }
            orow[j] = rrow ? run + rrow[j] : run;
        }
    }
}

}  // namespace

std::string_view to_string(Direction d) {
    switch (d) {
        case Direction::top: return "top";
        case Direction::bottom: return "bottom";
        case Direction::left: return "left";
        case Direction::right: return "right";
    }
    return "?";
}

std::string_view to_string(CornerType c) { return c == CornerType::top_left ? "top_left" : "bottom_right"; }

std::string_view to_string(PoolingVariant v) {
    switch (v) {
        case PoolingVariant::cp: return "CP";
        case PoolingVariant::ccp: return "CCP";
        case PoolingVariant::vhcp: return "VHCP";
    }
    return "?";
}

PoolingVariant parse_pooling_variant(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (lower == "cp") return PoolingVariant::cp;
    if (lower == "ccp") return PoolingVariant::ccp;
    if (lower == "vhcp") return PoolingVariant::vhcp;
    throw Error("unknown pooling variant '" + std::string(name) + "' (expected CP, CCP or VHCP)");
}

Direction vertical_direction(CornerType corner) {
    return corner == CornerType::top_left ? Direction::top : Direction::bottom;
}

Direction horizontal_direction(CornerType corner) {
    return corner == CornerType::top_left ? Direction::left : Direction::right;
}

Tensor pool_add(const Tensor& input, Direction d, const Tensor& residual) {
    const Shape& s = input.shape();
    if (residual.defined() && residual.shape() != s) {
        throw Error("pool_add: residual " + residual.shape().str() + " does not match input " + s.str());
    }
    ++g_scans;
    std::vector<double> out(s.numel());
    if (s.numel() == 0) return detail::make_result(s, std::move(out), nullptr);

    const bool track = detail::needs_grad({&input, &residual}) || detail::recording_decisions();
    std::vector<std::uint32_t> source(track ? s.numel() : 0);
    const double* x = input.data().data();
    const double* r = residual.defined() ? residual.data().data() : nullptr;
    const std::size_t plane = s.plane();
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const std::size_t base = p * plane;
        if (track) {
            scan_plane<true>(x + base, r ? r + base : nullptr, out.data() + base, source.data() + base, base, s.h, s.w,
                             d);
        } else {
            scan_plane<false>(x + base, r ? r + base : nullptr, out.data() + base, nullptr, base, s.h, s.w, d);
        }
    }
    if (detail::recording_decisions()) {
        std::uint64_t h = 0;
        for (std::uint32_t v : source) h = h * 1000003ULL + v;
        detail::record_decision(h);
    }

    std::shared_ptr<PoolNode> node;
    if (detail::needs_grad({&input, &residual})) {
        node = std::make_shared<PoolNode>();
        node->inputs.push_back(input.impl());
        if (residual.defined()) {
            node->inputs.push_back(residual.impl());
            node->has_residual = true;
        }
        node->source = std::move(source);
    }
    return detail::make_result(s, std::move(out), node);
}

Tensor directional_pool(const Tensor& input, Direction d) { return pool_add(input, d, Tensor()); }

Tensor naive_pool_oracle(const Tensor& input, Direction d) {
    const Shape& s = input.shape();
    std::vector<double> out(s.numel());
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t i = 0; i < s.h; ++i) {
                for (std::size_t j = 0; j < s.w; ++j) {
                    std::size_t i0 = i, i1 = i, j0 = j, j1 = j;  // inclusive ray bounds
                    switch (d) {
                        case Direction::top: i1 = s.h - 1; break;
                        case Direction::bottom: i0 = 0; break;
                        case Direction::left: j1 = s.w - 1; break;
                        case Direction::right: j0 = 0; break;
                    }
                    double best = input.at(n, c, i, j);
                    for (std::size_t ii = i0; ii <= i1; ++ii) {
                        for (std::size_t jj = j0; jj <= j1; ++jj) best = std::max(best, input.at(n, c, ii, jj));
                    }
                    out[input.index(n, c, i, j)] = best;
                }
            }
        }
    }
    return Tensor::from_data(s, std::move(out));
}

ScanCounter::ScanCounter() : start_(g_scans) {}
ScanCounter::~ScanCounter() = default;
std::size_t ScanCounter::count() const { return g_scans - start_; }

Tensor cp_core(const Tensor& a, const Tensor& b, CornerType corner) {
    return pool_add(b, horizontal_direction(corner), directional_pool(a, vertical_direction(corner)));
}

Tensor ccp_core(const Tensor& a1, const Tensor& a2, const Tensor& b1, const Tensor& b2, CornerType corner) {
    const Direction v = vertical_direction(corner);
    const Direction h = horizontal_direction(corner);
    const Tensor interior_then_edge = directional_pool(pool_add(a1, h, a2), v);
    return pool_add(pool_add(b1, v, b2), h, interior_then_edge);
}

Tensor vhcp_core(const Tensor& a, const Tensor& b, const Tensor& c, CornerType corner) {
    const Tensor margin = pool_add(a, vertical_direction(corner), b);
    return pool_add(margin, horizontal_direction(corner), c);
}

Tensor center_core(const Tensor& a, const Tensor& b) {
    const Tensor column_max = directional_pool(directional_pool(b, Direction::top), Direction::bottom);
    return pool_add(directional_pool(a, Direction::left), Direction::right, column_max);
}

}  // namespace cornerdet
