#include "cornerdet/pooling_modules.hpp"

namespace cornerdet {

std::size_t CornerPoolModule::branch_count(PoolingVariant v) {
    switch (v) {
        case PoolingVariant::cp: return 2;
        case PoolingVariant::vhcp: return 3;
        case PoolingVariant::ccp: return 4;
    }
    return 0;
}

CornerPoolModule::CornerPoolModule(ParameterRegistry& reg, const std::string& name, PoolingVariant variant,
                                   CornerType corner, std::size_t channels)
    : variant_(variant), corner_(corner) {
    for (std::size_t i = 0; i < branch_count(variant); ++i) {
        branches_.push_back(make_conv_bn(reg, name + ".branch" + std::to_string(i), channels, channels, 3, 1, true));
    }
    fuse_ = make_conv_bn(reg, name + ".fuse", channels, channels, 3, 1, false);
    skip_ = make_conv_bn(reg, name + ".skip", channels, channels, 1, 1, false);
}

Tensor CornerPoolModule::core(const std::vector<Tensor>& b) const {
    switch (variant_) {
        case PoolingVariant::cp: return cp_core(b[0], b[1], corner_);
        case PoolingVariant::vhcp: return vhcp_core(b[0], b[1], b[2], corner_);
        case PoolingVariant::ccp: return ccp_core(b[0], b[1], b[2], b[3], corner_);
    }
    throw Error("unknown pooling variant");
}

Tensor CornerPoolModule::operator()(const Tensor& x, Mode mode) const {
    if (identity_) return core(std::vector<Tensor>(branch_count(variant_), x));
    std::vector<Tensor> outs;
    outs.reserve(branches_.size());
    for (const ConvBN& branch : branches_) outs.push_back(branch(x, mode));
    return relu(add(fuse_(core(outs), mode), skip_(x, mode)));
}

CenterPoolModule::CenterPoolModule(ParameterRegistry& reg, const std::string& name, std::size_t channels) {
    horizontal_ = make_conv_bn(reg, name + ".branch_h", channels, channels, 3, 1, true);
    vertical_ = make_conv_bn(reg, name + ".branch_v", channels, channels, 3, 1, true);
    fuse_ = make_conv_bn(reg, name + ".fuse", channels, channels, 3, 1, false);
    skip_ = make_conv_bn(reg, name + ".skip", channels, channels, 1, 1, false);
}

Tensor CenterPoolModule::operator()(const Tensor& x, Mode mode) const {
    if (identity_) return center_core(x, x);
    const Tensor pooled = center_core(horizontal_(x, mode), vertical_(x, mode));
    return relu(add(fuse_(pooled, mode), skip_(x, mode)));
}

}  // namespace cornerdet
