#pragma once

#include <cstddef>
#include <filesystem>

#include "cornerdet/box.hpp"
#include "cornerdet/tensor.hpp"

namespace cornerdet {

/// Decodes PNG, binary PPM (P6) or JPEG into [1, 3, H, W] with values in
/// [0, 1]. Grey and alpha inputs are expanded or dropped to RGB.
Tensor read_image(const std::filesystem::path& path);

/// Writes PNG or PPM depending on the extension; values are clamped to
/// [0, 1] and rounded to 8 bits.
void write_image(const std::filesystem::path& path, const Tensor& image);

/// Bilinear resize with half-pixel centers.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

/// Rescales pixel coordinates by (width ratio, height ratio).
Box scale_box(const Box& box, double sx, double sy);

struct Rgb {
    double r = 0, g = 0, b = 0;
};

/// Writes `color` into the 1-pixel outline of `box` (rounded to pixels).
void draw_rectangle(Tensor& image, const Box& box, Rgb color, std::size_t thickness = 1);

/// Tiny 3x5 bitmap text; supports digits, '.', and lowercase letters used
/// by class names. Unknown characters are skipped.
void draw_text(Tensor& image, std::size_t x, std::size_t y, std::string_view text, Rgb color);

}  // namespace cornerdet
