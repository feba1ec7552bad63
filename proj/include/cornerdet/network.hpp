#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"

#include "cornerdet/nn.hpp"
#include "cornerdet/pooling_modules.hpp"

namespace cornerdet {

/// Pixels per prediction-map cell.
inline constexpr std::size_t kOutputStride = 4;

struct ModelConfig {
    std::size_t num_classes = 5;
    /// Width at stride 4; strides 8 and 16 use 2x and 4x.
    std::size_t channel_base = 16;
    /// Width of the aggregated map and of every head.
    std::size_t head_channels = 16;
    std::size_t deform_kernel = 3;
    PoolingVariant pooling_variant = PoolingVariant::vhcp;
    bool with_bcca = true;
    std::size_t input_height = 96;
    std::size_t input_width = 96;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    /// FNV-1a over the canonical JSON; checkpoints carry it to reject
    /// mismatched loads.
    std::uint64_t hash() const;
};

struct FeaturePyramid {
    Tensor f4;  // stride 4, base channels
    Tensor f5;  // stride 8, 2*base
    Tensor f6;  // stride 16, 4*base
};

struct CornerPredictions {
    Tensor heatmap;      // [N, C, h, w], sigmoid
    Tensor offset;       // [N, 2, h, w], sub-cell (x, y)
    Tensor centripetal;  // [N, 2, h, w], log half-extents in cells
    Tensor guiding;      // [N, 2, h, w], same encoding
};

struct CenterPredictions {
    Tensor heatmap;
    Tensor offset;
    Tensor bc;  // [N, 2, h, w], (log(w/2s), log(h/2s))
};

struct RawPredictions {
    CornerPredictions tl;
    CornerPredictions br;
    std::optional<CenterPredictions> center;  // training-mode only
    std::size_t stride = kOutputStride;
};

/// Deformable 3x3 conv whose offset field is a 3x3 conv of the guiding
/// shift map. Offsets of zero make it a plain 3x3 conv.
struct CrossStarDeformConv {
    Conv offset_field;
    Tensor weight;
    Tensor bias;

    Tensor operator()(const Tensor& features, const Tensor& guiding) const;
    Tensor offsets(const Tensor& guiding) const { return offset_field(guiding); }
};

CrossStarDeformConv make_cross_star(ParameterRegistry& reg, const std::string& name, std::size_t channels,
                                    std::size_t kernel);

/// Corner-keypoint detector: residual backbone, iterative feature
/// aggregation, two corner branches and an optional training-only
/// center-attention branch. Parameters are shared handles, so a Model is
/// move-only.
class Model {
public:
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    FeaturePyramid extract_features(const Tensor& image, Mode mode) const;
    Tensor aggregate_features(const FeaturePyramid& pyramid, Mode mode) const;
    /// In eval mode the center branch never runs, present or not.
    RawPredictions forward(const Tensor& image, Mode mode) const;

    /// Drops the center branch and its parameters. Returns false (with a
    /// warning on stderr) when there is nothing to prune.
    bool prune_bcca();
    bool bcca_present() const { return center_.has_value(); }

    std::size_t param_count() const;
    const ModelConfig& config() const { return config_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    std::vector<StatsBuffer>& buffers() { return buffers_; }
    const std::vector<StatsBuffer>& buffers() const { return buffers_; }

    /// Test hook: turns every pooling module into its identity-branch form.
    void set_identity_pooling(bool on);

private:
    friend Model build_model(const ModelConfig& config, std::uint64_t seed);
    explicit Model(ModelConfig config) : config_(std::move(config)) {}

    struct Upsample {
        ConvBN conv;
        Tensor kernel;  // [Cin, Cin/2, 2, 2]
        Tensor operator()(const Tensor& x, Mode mode) const { return transpose_conv2d(conv(x, mode), kernel, 2); }
    };

    struct GuidingHead {
        ConvBN hidden;
        Conv out;
        Tensor operator()(const Tensor& x, Mode mode) const { return out(hidden(x, mode)); }
    };

    struct CornerBranch {
        CornerPoolModule pool;
        GuidingHead guiding;
        CrossStarDeformConv deform;
        Head heatmap;
        Head offset;
        Head centripetal;
    };

    struct CenterBranch {
        CenterPoolModule pool;
        Head heatmap;
        Head offset;
        Head bc;
    };

    CornerPredictions run_corner(const CornerBranch& branch, const Tensor& features, Mode mode) const;
    static Upsample make_upsample(ParameterRegistry& reg, const std::string& name, std::size_t in);
    static CornerBranch make_corner_branch(ParameterRegistry& reg, const std::string& name, const ModelConfig& cfg,
                                           CornerType corner);

    ModelConfig config_;
    std::vector<Parameter> params_;
    std::vector<StatsBuffer> buffers_;

    ConvBN stem_;
    std::vector<std::vector<ResidualUnit>> stages_;
    Upsample up6_, up5_, up65_;
    ConvBN fuse65_, fuse54_, fuse_out_;
    CornerBranch tl_, br_;
    std::optional<CenterBranch> center_;
};

/// Deterministic in `seed`; parameter count depends on the config only.
Model build_model(const ModelConfig& config, std::uint64_t seed);

/// Bias that makes the initial heatmap sigmoid output 0.1.
inline constexpr double kHeatmapPriorBias = -2.1972245773362196;

}  // namespace cornerdet
