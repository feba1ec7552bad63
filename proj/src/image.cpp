#include "cornerdet/image.hpp"

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace cornerdet {

namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
    if (!f) throw Error("cannot open image '" + path.string() + "'");
    return f;
}

std::string lower_extension(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

Tensor from_rgb8(const std::vector<unsigned char>& rgb, std::size_t height, std::size_t width) {
    std::vector<double> out(3 * height * width);
    const std::size_t plane = height * width;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) out[c * plane + i] = rgb[3 * i + c] / 255.0;
    }
    return Tensor::from_data({1, 3, height, width}, std::move(out));
}

std::vector<unsigned char> to_rgb8(const Tensor& image) {
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3) throw Error("write_image: expected [1,3,H,W], got " + s.str());
    const std::size_t plane = s.plane();
    const auto d = image.data();
    std::vector<unsigned char> rgb(3 * plane);
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            rgb[3 * i + c] = static_cast<unsigned char>(std::lround(std::clamp(d[c * plane + i], 0.0, 1.0) * 255.0));
        }
    }
    return rgb;
}

Tensor read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw Error("cannot decode PNG '" + path.string() + "': " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, rgb.data(), 0, nullptr)) {
        png_image_free(&img);
        throw Error("cannot decode PNG '" + path.string() + "': " + img.message);
    }
    return from_rgb8(rgb, img.height, img.width);
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
    const std::vector<unsigned char> rgb = to_rgb8(image);
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.shape().w);
    img.height = static_cast<png_uint_32>(image.shape().h);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, rgb.data(), 0, nullptr)) {
        throw Error("cannot write PNG '" + path.string() + "': " + img.message);
    }
}

// Reads one whitespace/comment separated header token of a PPM.
std::string ppm_token(std::istream& in) {
    std::string tok;
    char ch;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string skip;
            std::getline(in, skip);
        } else if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!tok.empty()) break;
        } else {
            tok.push_back(ch);
        }
    }
    return tok;
}

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open image '" + path.string() + "'");
    const std::string magic = ppm_token(in);
    if (magic != "P6") throw Error("unsupported pixmap '" + path.string() + "' (only binary P6)");
    std::size_t width = 0, height = 0, maxval = 0;
    try {
        width = std::stoul(ppm_token(in));
        height = std::stoul(ppm_token(in));
        maxval = std::stoul(ppm_token(in));
    } catch (const std::exception&) {
        throw Error("malformed PPM header in '" + path.string() + "'");
    }
    if (maxval != 255 || width == 0 || height == 0) throw Error("unsupported PPM header in '" + path.string() + "'");
    std::vector<unsigned char> rgb(3 * width * height);
    if (!in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()))) {
        throw Error("truncated PPM '" + path.string() + "'");
    }
    return from_rgb8(rgb, height, width);
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    const std::vector<unsigned char> rgb = to_rgb8(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write image '" + path.string() + "'");
    out << "P6\n" << image.shape().w << ' ' << image.shape().h << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!out) throw Error("cannot write image '" + path.string() + "'");
}

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

Tensor read_jpeg(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    jpeg_decompress_struct info{};
    JpegError err{};
    info.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = [](j_common_ptr cinfo) {
        auto* e = reinterpret_cast<JpegError*>(cinfo->err);
        (*cinfo->err->format_message)(cinfo, e->message);
        std::longjmp(e->jump, 1);
    };
    std::vector<unsigned char> rgb;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&info);
        throw Error("cannot decode JPEG '" + path.string() + "': " + err.message);
    }
    jpeg_create_decompress(&info);
    jpeg_stdio_src(&info, f.get());
    jpeg_read_header(&info, TRUE);
    info.out_color_space = JCS_RGB;
    jpeg_start_decompress(&info);
    const std::size_t width = info.output_width, height = info.output_height;
    rgb.resize(3 * width * height);
    while (info.output_scanline < info.output_height) {
        unsigned char* row = rgb.data() + 3 * width * info.output_scanline;
        jpeg_read_scanlines(&info, &row, 1);
    }
    jpeg_finish_decompress(&info);
    jpeg_destroy_decompress(&info);
    return from_rgb8(rgb, height, width);
}

}  // namespace

Tensor read_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error("image not found: '" + path.string() + "'");
    const std::string ext = lower_extension(path);
    if (ext == ".png") return read_png(path);
    if (ext == ".ppm") return read_ppm(path);
    if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
    throw Error("unsupported image format '" + path.string() + "' (png, ppm, jpg)");
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
    const std::string ext = lower_extension(path);
    if (ext == ".png") return write_png(path, image);
    if (ext == ".ppm") return write_ppm(path, image);
    throw Error("unsupported output format '" + path.string() + "' (png, ppm)");
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
    const Shape& s = image.shape();
    if (height == 0 || width == 0) throw Error("resize_bilinear: empty target size");
    if (s.h == height && s.w == width) return image.detach();
    const double sy = static_cast<double>(s.h) / static_cast<double>(height);
    const double sx = static_cast<double>(s.w) / static_cast<double>(width);
    std::vector<double> out(s.n * s.c * height * width);
    const auto in = image.data();
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const double* src = in.data() + p * s.plane();
        double* dst = out.data() + p * height * width;
        for (std::size_t i = 0; i < height; ++i) {
            const double y = std::clamp((static_cast<double>(i) + 0.5) * sy - 0.5, 0.0, static_cast<double>(s.h - 1));
            const auto y0 = static_cast<std::size_t>(y);
            const std::size_t y1 = std::min(y0 + 1, s.h - 1);
            const double fy = y - static_cast<double>(y0);
            for (std::size_t j = 0; j < width; ++j) {
                const double x =
                    std::clamp((static_cast<double>(j) + 0.5) * sx - 0.5, 0.0, static_cast<double>(s.w - 1));
                const auto x0 = static_cast<std::size_t>(x);
                const std::size_t x1 = std::min(x0 + 1, s.w - 1);
                const double fx = x - static_cast<double>(x0);
                const double top = src[y0 * s.w + x0] * (1 - fx) + src[y0 * s.w + x1] * fx;
                const double bottom = src[y1 * s.w + x0] * (1 - fx) + src[y1 * s.w + x1] * fx;
                dst[i * width + j] = top * (1 - fy) + bottom * fy;
            }
        }
    }
    return Tensor::from_data({s.n, s.c, height, width}, std::move(out));
}

Box scale_box(const Box& box, double sx, double sy) {
    return {box.tl_x * sx, box.tl_y * sy, box.br_x * sx, box.br_y * sy};
}

namespace {

void put_pixel(Tensor& image, long x, long y, Rgb color) {
    const Shape& s = image.shape();
    if (x < 0 || y < 0 || x >= static_cast<long>(s.w) || y >= static_cast<long>(s.h)) return;
    auto d = image.mutable_data();
    const std::size_t i = static_cast<std::size_t>(y) * s.w + static_cast<std::size_t>(x);
    d[i] = color.r;
    d[s.plane() + i] = color.g;
    d[2 * s.plane() + i] = color.b;
}

// 3x5 glyphs, one row per 3-bit group, top row in the high bits.
std::uint16_t glyph(char ch) {
    static const std::array<std::uint16_t, 10> digits = {0x7B6F, 0x2C97, 0x73E7, 0x73CF, 0x5BC9,
                                                         0x79CF, 0x79EF, 0x7249, 0x7BEF, 0x7BCF};
    static const std::array<std::uint16_t, 26> letters = {
        0x2BED, 0x6BAE, 0x7927, 0x6B6E, 0x79A7, 0x79A4, 0x796F, 0x5BED, 0x7497, 0x126A, 0x5BAD, 0x4927, 0x5FED,
        0x7B6D, 0x2B6A, 0x6BA4, 0x2B79, 0x6BAD, 0x388E, 0x7492, 0x5B6F, 0x5B6A, 0x5BFD, 0x5AAD, 0x5A92, 0x72A7};
    if (ch >= '0' && ch <= '9') return digits[static_cast<std::size_t>(ch - '0')];
    if (ch >= 'a' && ch <= 'z') return letters[static_cast<std::size_t>(ch - 'a')];
    if (ch >= 'A' && ch <= 'Z') return letters[static_cast<std::size_t>(ch - 'A')];
    if (ch == '.') return 0x0002;
    return 0;
}

}  // namespace

void draw_rectangle(Tensor& image, const Box& box, Rgb color, std::size_t thickness) {
    const long x0 = std::lround(box.tl_x), y0 = std::lround(box.tl_y);
    const long x1 = std::lround(box.br_x), y1 = std::lround(box.br_y);
    for (long t = 0; t < static_cast<long>(thickness); ++t) {
        for (long x = x0; x <= x1; ++x) {
            put_pixel(image, x, y0 + t, color);
            put_pixel(image, x, y1 - t, color);
        }
        for (long y = y0; y <= y1; ++y) {
            put_pixel(image, x0 + t, y, color);
            put_pixel(image, x1 - t, y, color);
        }
    }
}

void draw_text(Tensor& image, std::size_t x, std::size_t y, std::string_view text, Rgb color) {
    long cx = static_cast<long>(x);
    for (char ch : text) {
        const std::uint16_t g = glyph(ch);
        for (long row = 0; row < 5; ++row) {
            for (long col = 0; col < 3; ++col) {
                if (g >> (14 - 3 * row - col) & 1) put_pixel(image, cx + col, static_cast<long>(y) + row, color);
            }
        }
        cx += 4;
    }
}

}  // namespace cornerdet
