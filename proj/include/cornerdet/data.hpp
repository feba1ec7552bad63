#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cornerdet/box.hpp"
#include "cornerdet/tensor.hpp"

namespace cornerdet {

/// Hardhat vocabulary of the construction-site dataset.
const std::vector<std::string>& hardhat_classes();

struct Sample {
    Tensor image;  // [1, 3, H, W], values in [0, 1]
    std::vector<GroundTruthBox> boxes;
    std::string id;
};

/// Reads VOC annotation XML. VOC pixel indices are 1-based; boxes come back
/// 0-based. Unknown class names and malformed XML throw.
std::vector<GroundTruthBox> parse_voc_xml(std::string_view xml, const std::vector<std::string>& classes);

/// Inverse of parse_voc_xml for the fields it reads.
std::string write_voc_xml(const std::vector<GroundTruthBox>& boxes, const std::vector<std::string>& classes,
                          std::string_view filename, std::size_t width, std::size_t height);

struct SplitSpec {
    double train = 0.5;
    double val = 0.25;
    double test = 0.25;
    std::uint64_t seed = 0;
};

struct Splits {
    std::vector<std::string> train, val, test;
};

/// Seeded Fisher-Yates shuffle, then the ratio partition (val and test sizes
/// are floored; train takes the remainder).
Splits split_dataset(std::vector<std::string> ids, const SplitSpec& spec);

enum class Background { noise, gradient, texture };
Background parse_background(std::string_view name);

struct SynthConfig {
    std::size_t height = 96;
    std::size_t width = 96;
    std::vector<std::string> classes = {"yellow", "blue", "none"};
    std::size_t min_objects = 1;
    std::size_t max_objects = 3;
    /// Box width range in pixels when not bucket-balanced.
    double min_box = 14.0;
    double max_box = 40.0;
    /// Draw each object's area bucket uniformly from the buckets that fit.
    bool bucket_balanced = false;
    Background background = Background::gradient;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Sample i depends on (config, i) only, so prefixes of a larger run match
/// a smaller one.
Sample generate_synthetic_sample(const SynthConfig& config, std::size_t index);
std::vector<Sample> generate_synthetic(const SynthConfig& config, std::size_t count);

/// Mirrors pixels and boxes: x' = W - 1 - x.
Sample flip_augment(const Sample& sample);

/// Resizes to height x width and rescales boxes.
Sample resize_sample(const Sample& sample, std::size_t height, std::size_t width);

/// images/<id>.png, annotations/<id>.xml and splits.json (class list plus
/// id lists).
struct DatasetLayout {
    std::filesystem::path root;
    std::vector<std::string> classes;
    Splits splits;

    static DatasetLayout open(const std::filesystem::path& root);
    /// Loads one sample resized to the given input size.
    Sample load(const std::string& id, std::size_t height, std::size_t width) const;
    const std::vector<std::string>& split(std::string_view name) const;
};

void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples,
                   const std::vector<std::string>& classes, const Splits& splits);

}  // namespace cornerdet
