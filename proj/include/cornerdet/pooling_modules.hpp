#pragma once

#include <string>
#include <vector>

#include "cornerdet/nn.hpp"
#include "cornerdet/pooling.hpp"

namespace cornerdet {

/// Corner pooling block of one corner branch:
///
///   out = relu( ConvBN3x3( core(branches(F)) ) + ConvBN1x1(F) )
///
/// where the branches are independent Conv-BN-ReLU blocks (2 for CP,
/// 3 for VHCP, 4 for CCP) and core is cp_core / vhcp_core / ccp_core.
class CornerPoolModule {
public:
    CornerPoolModule() = default;
    CornerPoolModule(ParameterRegistry& reg, const std::string& name, PoolingVariant variant, CornerType corner,
                     std::size_t channels);

    Tensor operator()(const Tensor& x, Mode mode) const;

    /// Branches become the identity and the final/skip convolutions are
    /// bypassed, so the output is the bare pooling core of F.
    void set_identity_branches(bool on) { identity_ = on; }

    PoolingVariant variant() const { return variant_; }
    CornerType corner() const { return corner_; }
    static std::size_t branch_count(PoolingVariant v);

private:
    Tensor core(const std::vector<Tensor>& b) const;

    PoolingVariant variant_ = PoolingVariant::vhcp;
    CornerType corner_ = CornerType::top_left;
    std::vector<ConvBN> branches_;
    ConvBN fuse_;
    ConvBN skip_;
    bool identity_ = false;
};

/// relu( ConvBN3x3( right(left(A(F))) + bottom(top(B(F))) ) + ConvBN1x1(F) ).
class CenterPoolModule {
public:
    CenterPoolModule() = default;
    CenterPoolModule(ParameterRegistry& reg, const std::string& name, std::size_t channels);

    Tensor operator()(const Tensor& x, Mode mode) const;
    void set_identity_branches(bool on) { identity_ = on; }

private:
    ConvBN horizontal_;
    ConvBN vertical_;
    ConvBN fuse_;
    ConvBN skip_;
    bool identity_ = false;
};

}  // namespace cornerdet
