#pragma once

// 8-bit PNG load/save for Image. Values map linearly between [0,1] and
// 0..255; no gamma transform is applied.

#include "palm/raster.hpp"

#include <png.h>

#include <cstdio>

namespace palm {

inline void save_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3 && img.channels != 4)
        throw DataError("save_png: channels must be 1, 3 or 4");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw DataError("save_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw DataError("save_png: libpng failure for " + path);
    }
    png_init_io(png, fp);
    int color = img.channels == 1   ? PNG_COLOR_TYPE_GRAY
                : img.channels == 3 ? PNG_COLOR_TYPE_RGB
                                    : PNG_COLOR_TYPE_RGBA;
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8, color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(size_t(img.width) * size_t(img.channels));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double v = std::clamp(img.at(x, y, c), 0.0, 1.0);
                row[size_t(x * img.channels + c)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Image load_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw DataError("load_png: cannot open " + path);
    unsigned char header[8];
    if (std::fread(header, 1, 8, fp) != 8 || png_sig_cmp(header, 0, 8)) {
        std::fclose(fp);
        throw DataError("load_png: not a PNG file: " + path);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw DataError("load_png: libpng failure for " + path);
    }
    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_packing(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
        png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const int w = int(png_get_image_width(png, info));
    const int h = int(png_get_image_height(png, info));
    const int ch = int(png_get_channels(png, info));
    Image img(w, h, ch);
    std::vector<unsigned char> row(png_get_rowbytes(png, info));
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c)
                img.at(x, y, c) = row[size_t(x * ch + c)] / 255.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

}  // namespace palm
