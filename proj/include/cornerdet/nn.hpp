#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cornerdet/ops.hpp"
#include "cornerdet/optim.hpp"

namespace cornerdet {

enum class Mode { train, eval };

inline BatchNormMode bn_mode(Mode m) { return m == Mode::train ? BatchNormMode::train : BatchNormMode::eval; }

struct StatsBuffer {
    std::string name;
    std::shared_ptr<RunningStats> stats;
};

/// Creates and names every parameter of a model. Each tensor is initialised
/// from its own stream keyed by (seed, name), so adding or removing a branch
/// never changes the values of the others.
class ParameterRegistry {
public:
    explicit ParameterRegistry(std::uint64_t seed) : seed_(seed) {}

    /// Zero-mean normal with std sqrt(2 / fan_in); fan_in = shape.c*h*w.
    Tensor kernel(const std::string& name, Shape shape);
    /// He-normal for a transpose kernel [Cin, Cout, kh, kw]; fan_in = Cin*kh*kw.
    Tensor transpose_kernel(const std::string& name, Shape shape);
    Tensor constant(const std::string& name, Shape shape, double value);
    std::shared_ptr<RunningStats> running_stats(const std::string& name, std::size_t channels);

    std::vector<Parameter>& parameters() { return params_; }
    std::vector<StatsBuffer>& buffers() { return buffers_; }

private:
    Tensor add(const std::string& name, Tensor t);

    std::uint64_t seed_;
    std::vector<Parameter> params_;
    std::vector<StatsBuffer> buffers_;
};

/// Deterministic standard-normal stream (Box-Muller over xoshiro256**), so
/// initialisation does not depend on the standard library's distributions.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed);
    double next();
    double uniform();

private:
    std::uint64_t state_[4];
    std::optional<double> spare_;
    std::uint64_t raw();
};

std::uint64_t fnv1a(std::string_view text);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

struct Conv {
    Tensor weight;
    Tensor bias;  // undefined when the layer has none
    std::size_t stride = 1;
    std::size_t padding = 0;

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
};

Conv make_conv(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
               std::size_t stride, bool with_bias);

/// Conv (no bias) -> BatchNorm -> optional ReLU, "same" padding.
struct ConvBN {
    Conv conv;
    Tensor gamma;
    Tensor beta;
    std::shared_ptr<RunningStats> stats;
    bool relu = true;

    Tensor operator()(const Tensor& x, Mode mode) const;
};

ConvBN make_conv_bn(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                    std::size_t stride, bool relu);

/// 1x1 conv + ReLU + 1x1 conv: a prediction head.
struct Head {
    Conv hidden;
    Conv out;

    Tensor operator()(const Tensor& x) const { return out(relu(hidden(x))); }
};

Head make_head(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t hidden,
               std::size_t out, double out_bias = 0.0);

/// relu(ConvBN(ConvBN(x)) + skip(x)), where skip is a 1x1 ConvBN when the
/// unit changes width or stride.
struct ResidualUnit {
    ConvBN first;
    ConvBN second;
    std::optional<ConvBN> projection;

    Tensor operator()(const Tensor& x, Mode mode) const;
};

ResidualUnit make_residual_unit(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t out,
                                std::size_t stride);

}  // namespace cornerdet
