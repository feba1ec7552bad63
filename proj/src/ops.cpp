#include "cornerdet/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cornerdet {

namespace {

using detail::Node;
using detail::TensorImpl;

// Row-major C[M,N] = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          const double* b, double beta, double* c) {
    if (m == 0 || n == 0) return;
    if (k == 0) {
        if (beta == 0.0) std::fill(c, c + m * n, 0.0);
        return;
    }
    const auto lda = static_cast<int>(trans_a ? m : k);
    const auto ldb = static_cast<int>(trans_b ? k : n);
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, lda, b, ldb, beta, c,
                static_cast<int>(n));
}

struct ConvGeometry {
    std::size_t channels, height, width;  // image side
    std::size_t kh, kw, stride, pad;
    std::size_t out_h, out_w;  // column grid

    std::size_t rows() const { return channels * kh * kw; }
    std::size_t cols() const { return out_h * out_w; }
};

void im2col(const double* image, const ConvGeometry& g, double* col) {
    const auto h_in = static_cast<long>(g.height);
    const auto w_in = static_cast<long>(g.width);
    for (std::size_t c = 0; c < g.channels; ++c) {
        const double* plane = image + c * g.height * g.width;
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                double* row = col + ((c * g.kh + ki) * g.kw + kj) * g.cols();
                for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                    const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad);
                    double* dst = row + oh * g.out_w;
                    if (ih < 0 || ih >= h_in) {
                        std::fill(dst, dst + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = plane + ih * w_in;
                    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                        const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.pad);
                        dst[ow] = (iw >= 0 && iw < w_in) ? src[iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeometry& g, double* image) {
    const auto h_in = static_cast<long>(g.height);
    const auto w_in = static_cast<long>(g.width);
    for (std::size_t c = 0; c < g.channels; ++c) {
        double* plane = image + c * g.height * g.width;
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const double* row = col + ((c * g.kh + ki) * g.kw + kj) * g.cols();
                for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                    const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad);
                    if (ih < 0 || ih >= h_in) continue;
                    const double* src = row + oh * g.out_w;
                    double* dst = plane + ih * w_in;
                    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                        const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.pad);
                        if (iw >= 0 && iw < w_in) dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

bool is_pointwise(const ConvGeometry& g) { return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0; }

#define CORNERDET_REQUIRE(cond, message) \
    do {                                  \
        if (!(cond)) throw Error(message); \
    } while (false)

// ---------------------------------------------------------------- conv2d

struct Conv2dNode final : Node {
    ConvGeometry geo{};
    std::size_t out_channels = 0;
    bool has_bias = false;

    void backward(const TensorImpl& out) override {
        TensorImpl& x = *inputs[0];
        TensorImpl& w = *inputs[1];
        const std::size_t batch = x.shape.n;
        const std::size_t rows = geo.rows();
        const std::size_t cols = geo.cols();
        const std::size_t in_plane = geo.channels * geo.height * geo.width;
        const bool pointwise = is_pointwise(geo);
        std::vector<double> col(pointwise ? 0 : rows * cols);
        std::vector<double> dcol(x.requires_grad && !pointwise ? rows * cols : 0);

        for (std::size_t n = 0; n < batch; ++n) {
            const double* dy = out.grad.data() + n * out_channels * cols;
            const double* xn = x.data.data() + n * in_plane;
            if (w.requires_grad) {
                const double* colp = xn;
                if (!pointwise) {
                    im2col(xn, geo, col.data());
                    colp = col.data();
                }
                gemm(false, true, out_channels, rows, cols, 1.0, dy, colp, 1.0, w.grad_buffer().data());
            }
            if (has_bias && inputs[2]->requires_grad) {
                auto& db = inputs[2]->grad_buffer();
                for (std::size_t o = 0; o < out_channels; ++o) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < cols; ++p) acc += dy[o * cols + p];
                    db[o] += acc;
                }
            }
            if (x.requires_grad) {
                double* dx = x.grad_buffer().data() + n * in_plane;
                if (pointwise) {
                    gemm(true, false, rows, cols, out_channels, 1.0, w.data.data(), dy, 1.0, dx);
                } else {
                    gemm(true, false, rows, cols, out_channels, 1.0, w.data.data(), dy, 0.0, dcol.data());
                    col2im_add(dcol.data(), geo, dx);
                }
            }
        }
    }
};

// ---------------------------------------------------------- transpose conv

struct TransposeConvNode final : Node {
    ConvGeometry geo{};  // image side = output, column grid = input
    std::size_t in_channels = 0;

    void backward(const TensorImpl& out) override {
        TensorImpl& x = *inputs[0];
        TensorImpl& w = *inputs[1];
        const std::size_t rows = geo.rows();
        const std::size_t cols = geo.cols();
        const std::size_t out_plane = geo.channels * geo.height * geo.width;
        std::vector<double> dcol(rows * cols);
        for (std::size_t n = 0; n < x.shape.n; ++n) {
            im2col(out.grad.data() + n * out_plane, geo, dcol.data());
            const double* xn = x.data.data() + n * in_channels * cols;
            if (x.requires_grad) {
                double* dx = x.grad_buffer().data() + n * in_channels * cols;
                gemm(false, false, in_channels, cols, rows, 1.0, w.data.data(), dcol.data(), 1.0, dx);
            }
            if (w.requires_grad) {
                gemm(false, true, in_channels, rows, cols, 1.0, xn, dcol.data(), 1.0, w.grad_buffer().data());
            }
        }
    }
};

// -------------------------------------------------------------- batch norm

struct BatchNormNode final : Node {
    BatchNormMode mode = BatchNormMode::train;
    std::vector<double> mean;     // statistics actually used
    std::vector<double> inv_std;

    void backward(const TensorImpl& out) override {
        TensorImpl& x = *inputs[0];
        TensorImpl& gamma = *inputs[1];
        TensorImpl& beta = *inputs[2];
        const Shape s = x.shape;
        const std::size_t plane = s.plane();
        const auto count = static_cast<double>(s.n * plane);
        for (std::size_t c = 0; c < s.c; ++c) {
            double sum_dy = 0.0;
            double sum_dy_xhat = 0.0;
            for (std::size_t n = 0; n < s.n; ++n) {
                const std::size_t base = (n * s.c + c) * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    const double xhat = (x.data[base + p] - mean[c]) * inv_std[c];
                    sum_dy += out.grad[base + p];
                    sum_dy_xhat += out.grad[base + p] * xhat;
                }
            }
            if (gamma.requires_grad) gamma.grad_buffer()[c] += sum_dy_xhat;
            if (beta.requires_grad) beta.grad_buffer()[c] += sum_dy;
            if (!x.requires_grad) continue;
            auto& dx = x.grad_buffer();
            const double g = gamma.data[c] * inv_std[c];
            for (std::size_t n = 0; n < s.n; ++n) {
                const std::size_t base = (n * s.c + c) * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    if (mode == BatchNormMode::eval) {
                        dx[base + p] += g * out.grad[base + p];
                    } else {
                        const double xhat = (x.data[base + p] - mean[c]) * inv_std[c];
                        dx[base + p] += g * (out.grad[base + p] - sum_dy / count - xhat * sum_dy_xhat / count);
                    }
                }
            }
        }
    }
};

// ------------------------------------------------------------- elementwise

struct ReluNode final : Node {
    void backward(const TensorImpl& out) override {
        TensorImpl& x = *inputs[0];
        auto& dx = x.grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) {
            if (x.data[i] > 0.0) dx[i] += out.grad[i];
        }
    }
};

struct SigmoidNode final : Node {
    void backward(const TensorImpl& out) override {
        auto& dx = inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double s = out.data[i];
            dx[i] += out.grad[i] * s * (1.0 - s);
        }
    }
};

struct AddNode final : Node {
    void backward(const TensorImpl& out) override {
        for (auto& in : inputs) {
            if (!in->requires_grad) continue;
            auto& d = in->grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += out.grad[i];
        }
    }
};

struct ConcatNode final : Node {
    void backward(const TensorImpl& out) override {
        const TensorImpl& a = *inputs[0];
        const TensorImpl& b = *inputs[1];
        const std::size_t plane = out.shape.plane();
        const std::size_t ca = a.shape.c * plane;
        const std::size_t cb = b.shape.c * plane;
        for (std::size_t n = 0; n < out.shape.n; ++n) {
            const double* src = out.grad.data() + n * (ca + cb);
            if (a.requires_grad) {
                double* d = inputs[0]->grad_buffer().data() + n * ca;
                for (std::size_t i = 0; i < ca; ++i) d[i] += src[i];
            }
            if (b.requires_grad) {
                double* d = inputs[1]->grad_buffer().data() + n * cb;
                for (std::size_t i = 0; i < cb; ++i) d[i] += src[ca + i];
            }
        }
    }
};

struct MulNode final : Node {
    void backward(const TensorImpl& out) override {
        TensorImpl& a = *inputs[0];
        TensorImpl& b = *inputs[1];
        if (a.requires_grad) {
            auto& d = a.grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += out.grad[i] * b.data[i];
        }
        if (b.requires_grad) {
            auto& d = b.grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += out.grad[i] * a.data[i];
        }
    }
};

struct ScaleNode final : Node {
    double factor = 1.0;
    void backward(const TensorImpl& out) override {
        auto& d = inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * out.grad[i];
    }
};

struct SumNode final : Node {
    void backward(const TensorImpl& out) override {
        auto& d = inputs[0]->grad_buffer();
        const double g = out.grad[0];
        for (double& v : d) v += g;
    }
};

struct StackNode final : Node {
    void backward(const TensorImpl& out) override {
        std::size_t offset = 0;
        for (auto& in : inputs) {
            const std::size_t len = in->data.size();
            if (in->requires_grad) {
                auto& d = in->grad_buffer();
                for (std::size_t i = 0; i < len; ++i) d[i] += out.grad[offset + i];
            }
            offset += len;
        }
    }
};

// -------------------------------------------------------- bilinear sampling

/// The four taps of a bilinear read, with out-of-plane taps marked invalid.
struct BilinearTaps {
    long x0 = 0, y0 = 0;
    double fx = 0.0, fy = 0.0;  // fractional parts

    BilinearTaps(double x, double y) {
        const double xf = std::floor(x);
        const double yf = std::floor(y);
        x0 = static_cast<long>(xf);
        y0 = static_cast<long>(yf);
        fx = x - xf;
        fy = y - yf;
    }

    static bool inside(long xi, long yi, std::size_t h, std::size_t w) {
        return xi >= 0 && yi >= 0 && xi < static_cast<long>(w) && yi < static_cast<long>(h);
    }

    template <typename Fn>
    void for_each(std::size_t h, std::size_t w, Fn&& fn) const {
        const double wx[2] = {1.0 - fx, fx};
        const double wy[2] = {1.0 - fy, fy};
        for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
                const long xi = x0 + dx;
                const long yi = y0 + dy;
                if (inside(xi, yi, h, w)) fn(static_cast<std::size_t>(yi) * w + static_cast<std::size_t>(xi), wx[dx] * wy[dy], dx, dy);
            }
        }
    }

    /// Value plus partial derivatives with respect to x and y.
    void sample(const double* plane, std::size_t h, std::size_t w, double& value, double& d_x, double& d_y) const {
        double v[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
        for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
                const long xi = x0 + dx;
                const long yi = y0 + dy;
                if (inside(xi, yi, h, w)) v[dy][dx] = plane[static_cast<std::size_t>(yi) * w + static_cast<std::size_t>(xi)];
            }
        }
        value = (1 - fy) * ((1 - fx) * v[0][0] + fx * v[0][1]) + fy * ((1 - fx) * v[1][0] + fx * v[1][1]);
        d_x = (1 - fy) * (v[0][1] - v[0][0]) + fy * (v[1][1] - v[1][0]);
        d_y = (1 - fx) * (v[1][0] - v[0][0]) + fx * (v[1][1] - v[0][1]);
    }
};

void record_cell(const BilinearTaps& taps) {
    detail::record_decision(static_cast<std::uint64_t>(taps.x0 * 1000003L + taps.y0));
}

struct BilinearSampleNode final : Node {
    void backward(const TensorImpl& out) override {
        TensorImpl& x = *inputs[0];
        TensorImpl& coords = *inputs[1];
        const Shape s = x.shape;
        const std::size_t points = coords.shape.plane();
        for (std::size_t n = 0; n < s.n; ++n) {
            const double* cx = coords.data.data() + n * 2 * points;
            const double* cy = cx + points;
            for (std::size_t p = 0; p < points; ++p) {
                const BilinearTaps taps(cx[p], cy[p]);
                double gx = 0.0;
                double gy = 0.0;
                for (std::size_t c = 0; c < s.c; ++c) {
                    const double g = out.grad[(n * s.c + c) * points + p];
                    if (g == 0.0) continue;
                    const double* plane = x.data.data() + (n * s.c + c) * s.plane();
                    if (x.requires_grad) {
                        double* dplane = x.grad_buffer().data() + (n * s.c + c) * s.plane();
                        taps.for_each(s.h, s.w, [&](std::size_t idx, double wgt, int, int) { dplane[idx] += g * wgt; });
                    }
                    double v = 0.0, dvx = 0.0, dvy = 0.0;
                    taps.sample(plane, s.h, s.w, v, dvx, dvy);
                    gx += g * dvx;
                    gy += g * dvy;
                }
                if (coords.requires_grad) {
                    auto& dc = coords.grad_buffer();
                    dc[n * 2 * points + p] += gx;
                    dc[n * 2 * points + points + p] += gy;
                }
            }
        }
    }
};

// ------------------------------------------------------ deformable conv

struct DeformGeometry {
    std::size_t channels, height, width, k, pad;
    std::size_t taps() const { return k * k; }
    std::size_t rows() const { return channels * k * k; }
    std::size_t cols() const { return height * width; }
    double sample_x(std::size_t t, std::size_t w, const double* off, std::size_t p) const {
        return static_cast<double>(w) - static_cast<double>(pad) + static_cast<double>(t % k) + off[(2 * t) * cols() + p];
    }
    double sample_y(std::size_t t, std::size_t h, const double* off, std::size_t p) const {
        return static_cast<double>(h) - static_cast<double>(pad) + static_cast<double>(t / k) +
               off[(2 * t + 1) * cols() + p];
    }
};

void deform_im2col(const double* image, const double* off, const DeformGeometry& g, double* col) {
    const std::size_t cols = g.cols();
    const std::size_t plane = g.height * g.width;
    for (std::size_t t = 0; t < g.taps(); ++t) {
        for (std::size_t h = 0; h < g.height; ++h) {
            for (std::size_t w = 0; w < g.width; ++w) {
                const std::size_t p = h * g.width + w;
                const BilinearTaps taps(g.sample_x(t, w, off, p), g.sample_y(t, h, off, p));
                if (detail::recording_decisions()) record_cell(taps);
                for (std::size_t c = 0; c < g.channels; ++c) {
                    double v = 0.0;
                    const double* src = image + c * plane;
                    taps.for_each(g.height, g.width, [&](std::size_t idx, double wgt, int, int) { v += wgt * src[idx]; });
                    col[(c * g.taps() + t) * cols + p] = v;
                }
            }
        }
    }
}

struct DeformConvNode final : Node {
    DeformGeometry geo{};
    std::size_t out_channels = 0;
    bool has_bias = false;

    void backward(const TensorImpl& out) override {
        TensorImpl& x = *inputs[0];
        TensorImpl& off = *inputs[1];
        TensorImpl& w = *inputs[2];
        const std::size_t rows = geo.rows();
        const std::size_t cols = geo.cols();
        const std::size_t plane = geo.height * geo.width;
        const std::size_t in_size = geo.channels * plane;
        const std::size_t off_size = 2 * geo.taps() * cols;
        std::vector<double> col(rows * cols);
        std::vector<double> dcol(rows * cols);
        for (std::size_t n = 0; n < x.shape.n; ++n) {
            const double* xn = x.data.data() + n * in_size;
            const double* on = off.data.data() + n * off_size;
            const double* dy = out.grad.data() + n * out_channels * cols;
            if (w.requires_grad) {
                deform_im2col(xn, on, geo, col.data());
                gemm(false, true, out_channels, rows, cols, 1.0, dy, col.data(), 1.0, w.grad_buffer().data());
            }
            if (has_bias && inputs[3]->requires_grad) {
                auto& db = inputs[3]->grad_buffer();
                for (std::size_t o = 0; o < out_channels; ++o) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < cols; ++p) acc += dy[o * cols + p];
                    db[o] += acc;
                }
            }
            if (!x.requires_grad && !off.requires_grad) continue;
            gemm(true, false, rows, cols, out_channels, 1.0, w.data.data(), dy, 0.0, dcol.data());
            double* dx = x.requires_grad ? x.grad_buffer().data() + n * in_size : nullptr;
            double* doff = off.requires_grad ? off.grad_buffer().data() + n * off_size : nullptr;
            for (std::size_t t = 0; t < geo.taps(); ++t) {
                for (std::size_t h = 0; h < geo.height; ++h) {
                    for (std::size_t ww = 0; ww < geo.width; ++ww) {
                        const std::size_t p = h * geo.width + ww;
                        const BilinearTaps taps(geo.sample_x(t, ww, on, p), geo.sample_y(t, h, on, p));
                        double gx = 0.0;
                        double gy = 0.0;
                        for (std::size_t c = 0; c < geo.channels; ++c) {
                            const double g = dcol[(c * geo.taps() + t) * cols + p];
                            if (g == 0.0) continue;
                            if (dx != nullptr) {
                                double* dplane = dx + c * plane;
                                taps.for_each(geo.height, geo.width,
                                              [&](std::size_t idx, double wgt, int, int) { dplane[idx] += g * wgt; });
                            }
                            if (doff != nullptr) {
                                double v = 0.0, dvx = 0.0, dvy = 0.0;
                                taps.sample(xn + c * plane, geo.height, geo.width, v, dvx, dvy);
                                gx += g * dvx;
                                gy += g * dvy;
                            }
                        }
                        if (doff != nullptr) {
                            doff[(2 * t) * cols + p] += gx;
                            doff[(2 * t + 1) * cols + p] += gy;
                        }
                    }
                }
            }
        }
    }
};

template <typename NodeT>
std::shared_ptr<NodeT> make_node(std::initializer_list<const Tensor*> inputs) {
    auto node = std::make_shared<NodeT>();
    for (const Tensor* t : inputs) {
        if (t != nullptr && t->defined()) node->inputs.push_back(t->impl());
    }
    return node;
}

void check_bias(const Tensor& bias, std::size_t out_channels, const char* op) {
    if (!bias.defined()) return;
    CORNERDET_REQUIRE(bias.numel() == out_channels, std::string(op) + ": bias shape " + bias.shape().str() +
                                              " does not match " + std::to_string(out_channels) +
                                              " output channels");
}

void add_bias(std::vector<double>& out, const Tensor& bias, std::size_t batch, std::size_t channels,
              std::size_t plane) {
    if (!bias.defined()) return;
    const auto b = bias.data();
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            double* dst = out.data() + (n * channels + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] += b[c];
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    const Shape& xs = input.shape();
    const Shape& ks = kernel.shape();
    CORNERDET_REQUIRE(xs.c == ks.c, "conv2d: input " + xs.str() + " has " + std::to_string(xs.c) +
                              " channels but kernel " + ks.str() + " expects " + std::to_string(ks.c));
    CORNERDET_REQUIRE(stride >= 1, "conv2d: stride must be >= 1");
    CORNERDET_REQUIRE(xs.h + 2 * padding >= ks.h && xs.w + 2 * padding >= ks.w,
            "conv2d: kernel " + ks.str() + " larger than padded input " + xs.str());
    check_bias(bias, ks.n, "conv2d");

    ConvGeometry geo{xs.c, xs.h, xs.w, ks.h, ks.w, stride, padding, 0, 0};
    geo.out_h = (xs.h + 2 * padding - ks.h) / stride + 1;
    geo.out_w = (xs.w + 2 * padding - ks.w) / stride + 1;
    const Shape out_shape{xs.n, ks.n, geo.out_h, geo.out_w};
    const std::size_t cols = geo.cols();
    const std::size_t in_plane = xs.c * xs.h * xs.w;

    std::vector<double> out(out_shape.numel());
    std::vector<double> col(is_pointwise(geo) ? 0 : geo.rows() * cols);
    const auto x = input.data();
    for (std::size_t n = 0; n < xs.n; ++n) {
        const double* colp = x.data() + n * in_plane;
        if (!is_pointwise(geo)) {
            im2col(colp, geo, col.data());
            colp = col.data();
        }
        gemm(false, false, ks.n, cols, geo.rows(), 1.0, kernel.data().data(), colp, 0.0,
             out.data() + n * ks.n * cols);
    }
    add_bias(out, bias, xs.n, ks.n, cols);

    std::shared_ptr<Conv2dNode> node;
    if (detail::needs_grad({&input, &kernel, &bias})) {
        node = std::make_shared<Conv2dNode>();
        node->inputs = {input.impl(), kernel.impl()};
        if (bias.defined()) node->inputs.push_back(bias.impl());
        node->geo = geo;
        node->out_channels = ks.n;
        node->has_bias = bias.defined();
    }
    return detail::make_result(out_shape, std::move(out), node);
}

Tensor transpose_conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride) {
    const Shape& xs = input.shape();
    const Shape& ks = kernel.shape();
    CORNERDET_REQUIRE(stride >= 1, "transpose_conv2d: stride must be >= 1");
    CORNERDET_REQUIRE(xs.c == ks.n, "transpose_conv2d: input " + xs.str() + " has " + std::to_string(xs.c) +
                              " channels but kernel " + ks.str() + " expects " + std::to_string(ks.n));
    CORNERDET_REQUIRE(xs.h >= 1 && xs.w >= 1, "transpose_conv2d: empty input " + xs.str());

    ConvGeometry geo{ks.c, stride * (xs.h - 1) + ks.h, stride * (xs.w - 1) + ks.w, ks.h, ks.w, stride, 0, xs.h,
                     xs.w};
    const Shape out_shape{xs.n, ks.c, geo.height, geo.width};
    const std::size_t out_plane = ks.c * geo.height * geo.width;
    std::vector<double> out(out_shape.numel(), 0.0);
    std::vector<double> col(geo.rows() * geo.cols());
    for (std::size_t n = 0; n < xs.n; ++n) {
        gemm(true, false, geo.rows(), geo.cols(), xs.c, 1.0, kernel.data().data(),
             input.data().data() + n * xs.c * geo.cols(), 0.0, col.data());
        col2im_add(col.data(), geo, out.data() + n * out_plane);
    }

    std::shared_ptr<TransposeConvNode> node;
    if (detail::needs_grad({&input, &kernel})) {
        node = make_node<TransposeConvNode>({&input, &kernel});
        node->geo = geo;
        node->in_channels = xs.c;
    }
    return detail::make_result(out_shape, std::move(out), node);
}

Tensor deform_conv2d(const Tensor& input, const Tensor& offsets, const Tensor& kernel, const Tensor& bias) {
    const Shape& xs = input.shape();
    const Shape& ks = kernel.shape();
    const Shape& os = offsets.shape();
    CORNERDET_REQUIRE(ks.h == ks.w && ks.h % 2 == 1, "deform_conv2d: kernel must be square and odd, got " + ks.str());
    CORNERDET_REQUIRE(xs.c == ks.c, "deform_conv2d: input " + xs.str() + " does not match kernel " + ks.str());
    CORNERDET_REQUIRE(os.n == xs.n && os.c == 2 * ks.h * ks.w && os.h == xs.h && os.w == xs.w,
            "deform_conv2d: offsets " + os.str() + " do not match input " + xs.str() + " and kernel " + ks.str());
    check_bias(bias, ks.n, "deform_conv2d");

    const DeformGeometry geo{xs.c, xs.h, xs.w, ks.h, ks.h / 2};
    const Shape out_shape{xs.n, ks.n, xs.h, xs.w};
    const std::size_t cols = geo.cols();
    std::vector<double> out(out_shape.numel());
    std::vector<double> col(geo.rows() * cols);
    for (std::size_t n = 0; n < xs.n; ++n) {
        deform_im2col(input.data().data() + n * xs.c * cols, offsets.data().data() + n * os.c * cols, geo,
                      col.data());
        gemm(false, false, ks.n, cols, geo.rows(), 1.0, kernel.data().data(), col.data(), 0.0,
             out.data() + n * ks.n * cols);
    }
    add_bias(out, bias, xs.n, ks.n, cols);

    std::shared_ptr<DeformConvNode> node;
    if (detail::needs_grad({&input, &offsets, &kernel, &bias})) {
        node = make_node<DeformConvNode>({&input, &offsets, &kernel, &bias});
        node->geo = geo;
        node->out_channels = ks.n;
        node->has_bias = bias.defined();
    }
    return detail::make_result(out_shape, std::move(out), node);
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps, BatchNormMode mode,
                  RunningStats& stats, double momentum) {
    const Shape& s = input.shape();
    CORNERDET_REQUIRE(gamma.numel() == s.c && beta.numel() == s.c,
            "batch_norm: input " + s.str() + " does not match gamma " + gamma.shape().str() + " / beta " +
                beta.shape().str());
    CORNERDET_REQUIRE(stats.mean.size() == s.c && stats.var.size() == s.c,
            "batch_norm: running statistics sized for " + std::to_string(stats.mean.size()) +
                " channels, input " + s.str());
    CORNERDET_REQUIRE(eps >= 0.0, "batch_norm: eps must be non-negative");

    const std::size_t plane = s.plane();
    const std::size_t count = s.n * plane;
    const auto x = input.data();
    std::vector<double> mean(s.c);
    std::vector<double> inv_std(s.c);
    for (std::size_t c = 0; c < s.c; ++c) {
        if (mode == BatchNormMode::eval) {
            mean[c] = stats.mean[c];
            inv_std[c] = 1.0 / std::sqrt(stats.var[c] + eps);
            continue;
        }
        CORNERDET_REQUIRE(count > 0, "batch_norm: empty batch in train mode");
        double acc = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const double* src = x.data() + (n * s.c + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) acc += src[p];
        }
        const double mu = acc / static_cast<double>(count);
        double sq = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const double* src = x.data() + (n * s.c + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) sq += (src[p] - mu) * (src[p] - mu);
        }
        const double var = sq / static_cast<double>(count);
        mean[c] = mu;
        // eps == 0 on a constant channel would divide by zero; such a channel
        // has xhat == 0 everywhere, which inv_std = 0 reproduces.
        inv_std[c] = (var + eps) > 0.0 ? 1.0 / std::sqrt(var + eps) : 0.0;
        const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
        stats.mean[c] = (1.0 - momentum) * stats.mean[c] + momentum * mu;
        stats.var[c] = (1.0 - momentum) * stats.var[c] + momentum * unbiased;
    }

    std::vector<double> out(s.numel());
    const auto g = gamma.data();
    const auto b = beta.data();
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t base = (n * s.c + c) * plane;
            const double a = g[c] * inv_std[c];
            const double shift = b[c] - a * mean[c];
            for (std::size_t p = 0; p < plane; ++p) out[base + p] = a * x[base + p] + shift;
        }
    }

    std::shared_ptr<BatchNormNode> node;
    if (detail::needs_grad({&input, &gamma, &beta})) {
        node = make_node<BatchNormNode>({&input, &gamma, &beta});
        node->mode = mode;
        node->mean = std::move(mean);
        node->inv_std = std::move(inv_std);
    }
    return detail::make_result(s, std::move(out), node);
}

Tensor activation(const Tensor& input, Activation kind) {
    const auto x = input.data();
    std::vector<double> out(x.size());
    const bool tracked = detail::needs_grad({&input});
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
        if (detail::recording_decisions()) {
            std::uint64_t gates = 0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (x[i] > 0.0) gates = gates * 31 + i + 1;
            }
            detail::record_decision(gates);
        }
        std::shared_ptr<Node> node;
        if (tracked) node = make_node<ReluNode>({&input});
        return detail::make_result(input.shape(), std::move(out), node);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        // stable in both tails
        if (x[i] >= 0.0) {
            out[i] = 1.0 / (1.0 + std::exp(-x[i]));
        } else {
            const double e = std::exp(x[i]);
            out[i] = e / (1.0 + e);
        }
    }
    std::shared_ptr<Node> node;
    if (tracked) node = make_node<SigmoidNode>({&input});
    return detail::make_result(input.shape(), std::move(out), node);
}

Tensor combine(const Tensor& a, const Tensor& b, CombineMode mode) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (mode == CombineMode::sum) {
        CORNERDET_REQUIRE(sa == sb, "combine(sum): shapes " + sa.str() + " and " + sb.str() + " differ");
        std::vector<double> out(sa.numel());
        const auto x = a.data();
        const auto y = b.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
        std::shared_ptr<Node> node;
        if (detail::needs_grad({&a, &b})) node = make_node<AddNode>({&a, &b});
        return detail::make_result(sa, std::move(out), node);
    }
    CORNERDET_REQUIRE(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w,
            "combine(concat): shapes " + sa.str() + " and " + sb.str() + " differ outside channels");
    const Shape out_shape{sa.n, sa.c + sb.c, sa.h, sa.w};
    std::vector<double> out(out_shape.numel());
    const std::size_t ca = sa.c * sa.plane();
    const std::size_t cb = sb.c * sb.plane();
    for (std::size_t n = 0; n < sa.n; ++n) {
        std::copy_n(a.data().data() + n * ca, ca, out.data() + n * (ca + cb));
        std::copy_n(b.data().data() + n * cb, cb, out.data() + n * (ca + cb) + ca);
    }
    std::shared_ptr<Node> node;
    if (detail::needs_grad({&a, &b})) node = make_node<ConcatNode>({&a, &b});
    return detail::make_result(out_shape, std::move(out), node);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    CORNERDET_REQUIRE(a.shape() == b.shape(), "mul: shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    std::shared_ptr<Node> node;
    if (detail::needs_grad({&a, &b})) node = make_node<MulNode>({&a, &b});
    return detail::make_result(a.shape(), std::move(out), node);
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
    std::shared_ptr<ScaleNode> node;
    if (detail::needs_grad({&a})) {
        node = make_node<ScaleNode>({&a});
        node->factor = factor;
    }
    return detail::make_result(a.shape(), std::move(out), node);
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    std::shared_ptr<Node> node;
    if (detail::needs_grad({&a})) node = make_node<SumNode>({&a});
    return detail::make_result({1, 1, 1, 1}, {acc}, node);
}

double bilinear_sample(std::span<const double> plane, std::size_t height, std::size_t width, double x, double y) {
    CORNERDET_REQUIRE(plane.size() == height * width, "bilinear_sample: plane size does not match extents");
    double v = 0.0;
    const BilinearTaps taps(x, y);
    taps.for_each(height, width, [&](std::size_t idx, double wgt, int, int) { v += wgt * plane[idx]; });
    return v;
}

Tensor bilinear_sample(const Tensor& input, const Tensor& coords) {
    const Shape& s = input.shape();
    const Shape& cs = coords.shape();
    CORNERDET_REQUIRE(cs.n == s.n && cs.c == 2,
            "bilinear_sample: coords " + cs.str() + " must be [N,2,h,w] for input " + s.str());
    const Shape out_shape{s.n, s.c, cs.h, cs.w};
    const std::size_t points = cs.plane();
    std::vector<double> out(out_shape.numel());
    for (std::size_t n = 0; n < s.n; ++n) {
        const double* cx = coords.data().data() + n * 2 * points;
        const double* cy = cx + points;
        for (std::size_t p = 0; p < points; ++p) {
            const BilinearTaps taps(cx[p], cy[p]);
            if (detail::recording_decisions()) record_cell(taps);
            for (std::size_t c = 0; c < s.c; ++c) {
                const double* plane = input.data().data() + (n * s.c + c) * s.plane();
                double v = 0.0;
                taps.for_each(s.h, s.w, [&](std::size_t idx, double wgt, int, int) { v += wgt * plane[idx]; });
                out[(n * s.c + c) * points + p] = v;
            }
        }
    }
    std::shared_ptr<Node> node;
    if (detail::needs_grad({&input, &coords})) node = make_node<BilinearSampleNode>({&input, &coords});
    return detail::make_result(out_shape, std::move(out), node);
}

Tensor stack_batch(const std::vector<Tensor>& items) {
    CORNERDET_REQUIRE(!items.empty(), "stack_batch: no tensors");
    Shape s = items.front().shape();
    std::vector<double> out;
    std::size_t total = 0;
    bool tracked = false;
    for (const Tensor& t : items) {
        const Shape& ts = t.shape();
        CORNERDET_REQUIRE(ts.c == s.c && ts.h == s.h && ts.w == s.w,
                "stack_batch: shape " + ts.str() + " differs from " + s.str());
        total += ts.n;
        tracked = tracked || detail::needs_grad({&t});
    }
    out.reserve(total * s.c * s.plane());
    for (const Tensor& t : items) out.insert(out.end(), t.data().begin(), t.data().end());
    s.n = total;
    std::shared_ptr<Node> node;
    if (tracked) {
        node = std::make_shared<StackNode>();
        for (const Tensor& t : items) node->inputs.push_back(t.impl());
    }
    return detail::make_result(s, std::move(out), node);
}

}  // namespace cornerdet
