#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cornerdet/tensor.hpp"

namespace cornerdet {

// Convolution family. Kernels are [Cout, Cin, kh, kw] for conv2d and
// [Cin, Cout, kh, kw] for transpose_conv2d. An undefined bias means none.

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Output extent is stride*(H-1)+kh; overlapping taps are summed.
Tensor transpose_conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride);

/// Deformable kxk convolution, stride 1, "same" padding. `offsets` is
/// [N, 2*k*k, H, W]; channel 2t holds the x displacement of tap t (row-major
/// tap order) and channel 2t+1 the y displacement. Samples are bilinear with
/// zeros outside the map.
Tensor deform_conv2d(const Tensor& input, const Tensor& offsets, const Tensor& kernel, const Tensor& bias);

enum class BatchNormMode { train, eval };

struct RunningStats {
    std::vector<double> mean;
    std::vector<double> var;

    explicit RunningStats(std::size_t channels = 0) : mean(channels, 0.0), var(channels, 1.0) {}
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

/// gamma and beta are [1, C, 1, 1]. Train mode normalises with the batch's
/// population variance and folds the batch statistics into `stats`
/// (running variance uses the unbiased estimate).
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps,
                  BatchNormMode mode, RunningStats& stats, double momentum = kBatchNormMomentum);

enum class Activation { relu, sigmoid };

Tensor activation(const Tensor& input, Activation kind);
inline Tensor relu(const Tensor& x) { return activation(x, Activation::relu); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid); }

enum class CombineMode { sum, concat_channels };

Tensor combine(const Tensor& a, const Tensor& b, CombineMode mode);
inline Tensor add(const Tensor& a, const Tensor& b) { return combine(a, b, CombineMode::sum); }
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    return combine(a, b, CombineMode::concat_channels);
}

Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Sum of all elements as a [1,1,1,1] tensor.
Tensor sum(const Tensor& a);

/// Bilinear read of one H x W plane; neighbours outside the plane read as 0.
double bilinear_sample(std::span<const double> plane, std::size_t height, std::size_t width, double x,
                       double y);

/// Samples every channel of `input` at the points in `coords` ([N, 2, Hp, Wp],
/// channel 0 = x, channel 1 = y). Result is [N, C, Hp, Wp].
Tensor bilinear_sample(const Tensor& input, const Tensor& coords);

/// Concatenates along the batch axis.
Tensor stack_batch(const std::vector<Tensor>& items);

}  // namespace cornerdet
