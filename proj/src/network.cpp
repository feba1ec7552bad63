#include "cornerdet/network.hpp"

#include <algorithm>
#include <iostream>

namespace cornerdet {

void ModelConfig::validate() const {
    if (num_classes == 0) throw Error("model config: num_classes must be >= 1");
    if (channel_base == 0 || head_channels == 0) throw Error("model config: channel widths must be >= 1");
    if (deform_kernel == 0 || deform_kernel % 2 == 0) throw Error("model config: deform_kernel must be odd");
    if (input_height == 0 || input_width == 0 || input_height % 16 != 0 || input_width % 16 != 0) {
        throw Error("model config: input size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                    " must be a positive multiple of 16");
    }
}

nlohmann::json ModelConfig::to_json() const {
    return {{"num_classes", num_classes},
            {"channel_base", channel_base},
            {"head_channels", head_channels},
            {"deform_kernel", deform_kernel},
            {"pooling_variant", std::string(to_string(pooling_variant))},
            {"with_bcca", with_bcca},
            {"input_size", {input_height, input_width}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {"num_classes", "channel_base", "head_channels", "deform_kernel",
                                                   "pooling_variant", "with_bcca", "input_size"};
    if (!j.is_object()) throw Error("model config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw Error("unknown key '" + key + "' in model config");
        }
    }
    ModelConfig c;
    c.num_classes = j.value("num_classes", c.num_classes);
    c.channel_base = j.value("channel_base", c.channel_base);
    c.head_channels = j.value("head_channels", c.head_channels);
    c.deform_kernel = j.value("deform_kernel", c.deform_kernel);
    if (j.contains("pooling_variant")) c.pooling_variant = parse_pooling_variant(j.at("pooling_variant").get<std::string>());
    c.with_bcca = j.value("with_bcca", c.with_bcca);
    if (j.contains("input_size")) {
        const auto& size = j.at("input_size");
        if (!size.is_array() || size.size() != 2) throw Error("model config: input_size must be [H, W]");
        c.input_height = size[0].get<std::size_t>();
        c.input_width = size[1].get<std::size_t>();
    }
    return c;
}

std::uint64_t ModelConfig::hash() const { return fnv1a(to_json().dump()); }

Tensor CrossStarDeformConv::operator()(const Tensor& features, const Tensor& guiding) const {
    return deform_conv2d(features, offsets(guiding), weight, bias);
}

CrossStarDeformConv make_cross_star(ParameterRegistry& reg, const std::string& name, std::size_t channels,
                                    std::size_t kernel) {
    CrossStarDeformConv d;
    d.offset_field = make_conv(reg, name + ".offset_field", 2, 2 * kernel * kernel, 3, 1, true);
    d.weight = reg.kernel(name + ".weight", {channels, channels, kernel, kernel});
    d.bias = reg.constant(name + ".bias", {1, channels, 1, 1}, 0.0);
    return d;
}

Model::Upsample Model::make_upsample(ParameterRegistry& reg, const std::string& name, std::size_t in) {
    Upsample up;
    up.conv = make_conv_bn(reg, name + ".conv", in, in, 3, 1, true);
    up.kernel = reg.transpose_kernel(name + ".tconv", {in, std::max<std::size_t>(1, in / 2), 2, 2});
    return up;
}

Model::CornerBranch Model::make_corner_branch(ParameterRegistry& reg, const std::string& name,
                                              const ModelConfig& cfg, CornerType corner) {
    const std::size_t hc = cfg.head_channels;
    CornerBranch b;
    b.pool = CornerPoolModule(reg, name + ".pool", cfg.pooling_variant, corner, hc);
    b.guiding.hidden = make_conv_bn(reg, name + ".guiding.hidden", hc, hc, 3, 1, true);
    b.guiding.out = make_conv(reg, name + ".guiding.out", hc, 2, 1, 1, true);
    b.deform = make_cross_star(reg, name + ".deform", hc, cfg.deform_kernel);
    b.heatmap = make_head(reg, name + ".heatmap", hc, hc, cfg.num_classes, kHeatmapPriorBias);
    b.offset = make_head(reg, name + ".offset", hc, hc, 2);
    b.centripetal = make_head(reg, name + ".centripetal", hc, hc, 2);
    return b;
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m(config);
    ParameterRegistry reg(seed);
    const std::size_t base = config.channel_base;
    const std::size_t hc = config.head_channels;
    const std::size_t stem_width = std::max<std::size_t>(1, base / 4);

    m.stem_ = make_conv_bn(reg, "backbone.stem", 3, stem_width, 7, 1, true);
    const std::size_t widths[4] = {stem_width, base, 2 * base, 4 * base};
    std::size_t in = stem_width;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::string name = "backbone.stage" + std::to_string(s + 1);
        std::vector<ResidualUnit> stage;
        stage.push_back(make_residual_unit(reg, name + ".unit1", in, widths[s], 2));
        stage.push_back(make_residual_unit(reg, name + ".unit2", widths[s], widths[s], 1));
        m.stages_.push_back(std::move(stage));
        in = widths[s];
    }

    const std::size_t half_hc = std::max<std::size_t>(1, hc / 2);
    m.up6_ = Model::make_upsample(reg, "aggregate.up6", 4 * base);
    m.fuse65_ = make_conv_bn(reg, "aggregate.fuse65", 2 * base + 2 * base, hc, 1, 1, true);
    m.up65_ = Model::make_upsample(reg, "aggregate.up65", hc);
    m.up5_ = Model::make_upsample(reg, "aggregate.up5", 2 * base);
    m.fuse54_ = make_conv_bn(reg, "aggregate.fuse54", base + base, hc, 1, 1, true);
    m.fuse_out_ = make_conv_bn(reg, "aggregate.fuse_out", hc + half_hc, hc, 1, 1, true);

    m.tl_ = Model::make_corner_branch(reg, "tl", config, CornerType::top_left);
    m.br_ = Model::make_corner_branch(reg, "br", config, CornerType::bottom_right);

    if (config.with_bcca) {
        Model::CenterBranch c;
        c.pool = CenterPoolModule(reg, "center.pool", hc);
        c.heatmap = make_head(reg, "center.heatmap", hc, hc, config.num_classes, kHeatmapPriorBias);
        c.offset = make_head(reg, "center.offset", hc, hc, 2);
        c.bc = make_head(reg, "center.bc", hc, hc, 2);
        m.center_ = std::move(c);
    }
    m.params_ = std::move(reg.parameters());
    m.buffers_ = std::move(reg.buffers());
    return m;
}

FeaturePyramid Model::extract_features(const Tensor& image, Mode mode) const {
    const Shape& s = image.shape();
    if (s.c != 3) throw Error("extract_features: expected a 3-channel image, got " + s.str());
    if (s.h == 0 || s.w == 0 || s.h % 16 != 0 || s.w % 16 != 0) {
        throw Error("extract_features: image " + s.str() + " spatial size must be a positive multiple of 16");
    }
    Tensor x = stem_(image, mode);
    std::vector<Tensor> levels;
    for (const auto& stage : stages_) {
        for (const ResidualUnit& unit : stage) x = unit(x, mode);
        levels.push_back(x);
    }
    return {levels[1], levels[2], levels[3]};
}

Tensor Model::aggregate_features(const FeaturePyramid& p, Mode mode) const {
    // F_out = c{ c[T(F5), F4], T[c(T(F6), F5)] }
    const Tensor deep = fuse65_(concat_channels(up6_(p.f6, mode), p.f5), mode);
    const Tensor shallow = fuse54_(concat_channels(up5_(p.f5, mode), p.f4), mode);
    return fuse_out_(concat_channels(shallow, up65_(deep, mode)), mode);
}

CornerPredictions Model::run_corner(const CornerBranch& b, const Tensor& features, Mode mode) const {
    const Tensor pooled = b.pool(features, mode);
    CornerPredictions out;
    out.guiding = b.guiding(pooled, mode);
    const Tensor enriched = relu(b.deform(pooled, out.guiding));
    out.heatmap = sigmoid(b.heatmap(enriched));
    out.offset = b.offset(enriched);
    out.centripetal = b.centripetal(enriched);
    return out;
}

RawPredictions Model::forward(const Tensor& image, Mode mode) const {
    const Tensor features = aggregate_features(extract_features(image, mode), mode);
    RawPredictions out;
    out.tl = run_corner(tl_, features, mode);
    out.br = run_corner(br_, features, mode);
    if (mode == Mode::train && center_) {
        const Tensor pooled = center_->pool(features, mode);
        out.center = CenterPredictions{sigmoid(center_->heatmap(pooled)), center_->offset(pooled), center_->bc(pooled)};
    }
    return out;
}

bool Model::prune_bcca() {
    if (!center_) {
        std::cerr << "warning: prune_bcca: center branch already absent, nothing to prune\n";
        return false;
    }
    auto is_center = [](const std::string& name) { return name.rfind("center.", 0) == 0; };
    std::erase_if(params_, [&](const Parameter& p) { return is_center(p.name); });
    std::erase_if(buffers_, [&](const StatsBuffer& b) { return is_center(b.name); });
    center_.reset();
    config_.with_bcca = false;
    return true;
}

std::size_t Model::param_count() const {
    std::size_t total = 0;
    for (const Parameter& p : params_) total += p.tensor.numel();
    return total;
}

void Model::set_identity_pooling(bool on) {
    tl_.pool.set_identity_branches(on);
    br_.pool.set_identity_branches(on);
    if (center_) center_->pool.set_identity_branches(on);
}

}  // namespace cornerdet
