// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#include "corea/image_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include <png.h>

namespace corea {

namespace {

float byteswap_f32(float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    u = __builtin_bswap32(u);
    std::memcpy(&v, &u, 4);
    return v;
}

void write_pfm_impl(const std::string& path, int width, int height, int channels,
                    const std::vector<float>& pixels) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f << (channels == 3 ? "PF" : "Pf") << "\n" << width << " " << height << "\n" << "1.0\n";
    // Positive scale means big-endian payload; scanlines run bottom-up.
    std::vector<float> row(size_t(width) * channels);
    for (int y = height - 1; y >= 0; --y) {
        const float* src = pixels.data() + size_t(y) * width * channels;
        for (size_t i = 0; i < row.size(); ++i) row[i] = byteswap_f32(src[i]);
        f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * 4));
    }
    if (!f) throw io_error("write failed: " + path);
}

std::vector<float> read_pfm_impl(const std::string& path, int& width, int& height,
                                 int expected_channels) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    std::string tag;
    double scale;
    f >> tag >> width >> height >> scale;
    if (!f || width <= 0 || height <= 0) throw io_error(path + ": malformed PFM header");
    int channels = tag == "PF" ? 3 : (tag == "Pf" ? 1 : 0);
    if (channels == 0) throw io_error(path + ": not a PFM file");
    if (channels != expected_channels)
        throw io_error(path + ": expected " + std::to_string(expected_channels) + " channels");
    f.get(); // single whitespace after the scale
    bool big_endian = scale > 0.0;
    std::vector<float> pixels(size_t(width) * height * channels);
    std::vector<float> row(size_t(width) * channels);
    for (int y = height - 1; y >= 0; --y) {
        f.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * 4));
        if (f.gcount() != std::streamsize(row.size() * 4)) throw io_error(path + ": truncated PFM");
        float* dst = pixels.data() + size_t(y) * width * channels;
        for (size_t i = 0; i < row.size(); ++i)
            dst[i] = big_endian ? byteswap_f32(row[i]) : row[i];
    }
    return pixels;
}

} // namespace

void write_pfm(const std::string& path, const ImageRGB& img) {
    std::vector<float> px(img.data.size() * 3);
    for (size_t i = 0; i < img.data.size(); ++i)
        for (int c = 0; c < 3; ++c) px[i * 3 + c] = float(img.data[i][c]);
    write_pfm_impl(path, img.width, img.height, 3, px);
}

void write_pfm(const std::string& path, const ImageD& img) {
    std::vector<float> px(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) px[i] = float(img.data[i]);
    write_pfm_impl(path, img.width, img.height, 1, px);
}

ImageRGB read_pfm_rgb(const std::string& path) {
    int w, h;
    auto px = read_pfm_impl(path, w, h, 3);
    ImageRGB img(w, h);
    for (size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = Vec3(px[i * 3], px[i * 3 + 1], px[i * 3 + 2]);
    return img;
}

ImageD read_pfm_gray(const std::string& path) {
    int w, h;
    auto px = read_pfm_impl(path, w, h, 1);
    ImageD img(w, h);
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = px[i];
    return img;
}

void write_png(const std::string& path, const ImageRGB& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw io_error("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw io_error("png encode failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(size_t(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const Vec3& c = img.at(x, y);
            for (int ch = 0; ch < 3; ++ch)
                row[size_t(x) * 3 + ch] = png_byte(std::lround(clamp01(c[ch]) * 255.0));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

} // namespace corea
