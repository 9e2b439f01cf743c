#include "mmcd/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "mmcd/errors.hpp"

namespace mmcd {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::string& path, const Image8& img) {
    if (img.channels != 1 && img.channels != 3) throw InvalidArgument("png writer supports 1 or 3 channels");
    if (img.width <= 0 || img.height <= 0) throw InvalidArgument("png writer needs positive extents");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png == nullptr) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (info == nullptr) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    const long stride = img.width * img.channels;
    for (long y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(img.pixels.data() + y * stride);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image8 read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open for reading: " + path);
    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0)
        throw IoError("not a png file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png == nullptr) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (info == nullptr) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if ((color & PNG_COLOR_MASK_ALPHA) != 0) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const png_size_t rowbytes = png_get_rowbytes(png, info);
    const long channels = static_cast<long>(rowbytes / w);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported png layout: " + path);
    }
    Image8 img;
    img.width = static_cast<long>(w);
    img.height = static_cast<long>(h);
    img.channels = channels;
    img.pixels.resize(static_cast<std::size_t>(img.width * img.height * channels));
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (long y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] = img.pixels.data() + y * img.width * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

Image8 quantize_chw(const Tensor& t) {
    if (t.ndim() != 3) throw ShapeError("quantize expects (C,H,W)");
    const long c = t.dim(0), h = t.dim(1), w = t.dim(2);
    if (c != 1 && c != 3) throw ShapeError("quantize supports 1 or 3 channels");
    Image8 img;
    img.width = w;
    img.height = h;
    img.channels = c;
    img.pixels.resize(static_cast<std::size_t>(c * h * w));
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (long ch = 0; ch < c; ++ch) {
                const double v = std::min(1.0, std::max(0.0, t.at({ch, y, x})));
                img.at(y, x, ch) = static_cast<std::uint8_t>(std::lround(255.0 * v));
            }
    return img;
}

Tensor dequantize_chw(const Image8& img) {
    Tensor t({img.channels, img.height, img.width});
    for (long y = 0; y < img.height; ++y)
        for (long x = 0; x < img.width; ++x)
            for (long ch = 0; ch < img.channels; ++ch)
                t.data()[(ch * img.height + y) * img.width + x] = static_cast<double>(img.at(y, x, ch)) / 255.0;
    return t;
}

}  // namespace mmcd
