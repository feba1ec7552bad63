#include "cornerdet/nn.hpp"

#include <cmath>
#include <numbers>

namespace cornerdet {

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

NormalStream::NormalStream(std::uint64_t seed) {
    // xoshiro256** seeded through splitmix64
    std::uint64_t s = seed;
    for (auto& word : state_) {
        s += 0x9e3779b97f4a7c15ULL;
        word = mix_seed(s, 0);
    }
}

std::uint64_t NormalStream::raw() {
    auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double NormalStream::uniform() { return static_cast<double>(raw() >> 11) * 0x1.0p-53; }

double NormalStream::next() {
    if (spare_) {
        const double v = *spare_;
        spare_.reset();
        return v;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    return r * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor ParameterRegistry::add(const std::string& name, Tensor t) {
    for (const Parameter& p : params_) {
        if (p.name == name) throw Error("duplicate parameter name '" + name + "'");
    }
    t.set_requires_grad(true);
    params_.push_back({name, t});
    return t;
}

Tensor ParameterRegistry::kernel(const std::string& name, Shape shape) {
    NormalStream rng(mix_seed(seed_, fnv1a(name)));
    const double std_dev = std::sqrt(2.0 / static_cast<double>(shape.c * shape.h * shape.w));
    std::vector<double> v(shape.numel());
    for (double& x : v) x = std_dev * rng.next();
    return add(name, Tensor::from_data(shape, std::move(v)));
}

Tensor ParameterRegistry::transpose_kernel(const std::string& name, Shape shape) {
    NormalStream rng(mix_seed(seed_, fnv1a(name)));
    const double std_dev = std::sqrt(2.0 / static_cast<double>(shape.n * shape.h * shape.w));
    std::vector<double> v(shape.numel());
    for (double& x : v) x = std_dev * rng.next();
    return add(name, Tensor::from_data(shape, std::move(v)));
}

Tensor ParameterRegistry::constant(const std::string& name, Shape shape, double value) {
    return add(name, Tensor::full(shape, value));
}

std::shared_ptr<RunningStats> ParameterRegistry::running_stats(const std::string& name, std::size_t channels) {
    auto stats = std::make_shared<RunningStats>(channels);
    buffers_.push_back({name, stats});
    return stats;
}

Conv make_conv(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
               std::size_t stride, bool with_bias) {
    Conv c;
    c.weight = reg.kernel(name + ".weight", {out, in, k, k});
    if (with_bias) c.bias = reg.constant(name + ".bias", {1, out, 1, 1}, 0.0);
    c.stride = stride;
    c.padding = k / 2;
    return c;
}

Tensor ConvBN::operator()(const Tensor& x, Mode mode) const {
    Tensor y = batch_norm(conv(x), gamma, beta, kBatchNormEps, bn_mode(mode), *stats);
    return relu ? cornerdet::relu(y) : y;
}

ConvBN make_conv_bn(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                    std::size_t stride, bool relu) {
    ConvBN block;
    block.conv = make_conv(reg, name + ".conv", in, out, k, stride, false);
    block.gamma = reg.constant(name + ".bn.gamma", {1, out, 1, 1}, 1.0);
    block.beta = reg.constant(name + ".bn.beta", {1, out, 1, 1}, 0.0);
    block.stats = reg.running_stats(name + ".bn", out);
    block.relu = relu;
    return block;
}

Head make_head(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
               double out_bias) {
    Head head;
    head.hidden = make_conv(reg, name + ".hidden", in, hidden, 1, 1, true);
    head.out.weight = reg.kernel(name + ".out.weight", {out, hidden, 1, 1});
    head.out.bias = reg.constant(name + ".out.bias", {1, out, 1, 1}, out_bias);
    return head;
}

Tensor ResidualUnit::operator()(const Tensor& x, Mode mode) const {
    const Tensor body = second(first(x, mode), mode);
    const Tensor skip = projection ? (*projection)(x, mode) : x;
    return relu(add(body, skip));
}

ResidualUnit make_residual_unit(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t out,
                                std::size_t stride) {
    ResidualUnit unit;
    unit.first = make_conv_bn(reg, name + ".conv1", in, out, 3, stride, true);
    unit.second = make_conv_bn(reg, name + ".conv2", out, out, 3, 1, false);
    if (in != out || stride != 1) unit.projection = make_conv_bn(reg, name + ".proj", in, out, 1, stride, false);
    return unit;
}

}  // namespace cornerdet
