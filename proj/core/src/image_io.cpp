#include "gsdiff/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace gsdiff {

namespace {

uint8_t quantize(Real v) {
    return static_cast<uint8_t>(
        std::clamp<long>(std::lround(double(v) * 255.0), 0, 255));
}

Real dequantize(uint8_t b) { return Real(b) / Real(255); }

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

} // namespace

// ---------------------------------------------------------------------------
// PNG

Image read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw io_error("png: cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                             nullptr);
    if (!png) throw io_error("png: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw io_error("png: out of memory");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("png: failed to read " + path);
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = static_cast<int>(png_get_channels(png, info));
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("png: unsupported channel count in " + path);
    }

    std::vector<uint8_t> raw(static_cast<size_t>(width) * height * channels);
    std::vector<png_bytep> rows(height);
    for (int r = 0; r < height; ++r)
        rows[r] = raw.data() + static_cast<size_t>(r) * width * channels;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(width, height, channels);
    for (size_t i = 0; i < raw.size(); ++i) img.data[i] = dequantize(raw[i]);
    return img;
}

void write_png(const std::string& path, const Image& img) {
    require(img.channels == 1 || img.channels == 3, "png: 1 or 3 channels only");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw io_error("png: cannot write " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                              nullptr);
    if (!png) throw io_error("png: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw io_error("png: out of memory");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("png: failed to write " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> raw(static_cast<size_t>(img.width) * img.height *
                             img.channels);
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = quantize(img.data[i]);
    std::vector<png_bytep> rows(img.height);
    for (int r = 0; r < img.height; ++r)
        rows[r] = raw.data() + static_cast<size_t>(r) * img.width * img.channels;
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// PPM / PGM

namespace {

/// Reads the P6/P5 header: magic, dims, maxval, one whitespace byte.
void read_pnm_header(std::ifstream& in, const char* magic, int& width, int& height,
                     const std::string& path) {
    std::string m;
    in >> m;
    if (m != magic) throw io_error("pnm: bad magic in " + path);
    int maxval = 0;
    auto skip_comments = [&in] {
        in >> std::ws;
        while (in.peek() == '#') {
            std::string line;
            std::getline(in, line);
            in >> std::ws;
        }
    };
    skip_comments();
    in >> width;
    skip_comments();
    in >> height;
    skip_comments();
    in >> maxval;
    if (!in || width <= 0 || height <= 0 || maxval != 255)
        throw io_error("pnm: unsupported header in " + path);
    in.get(); // single whitespace before binary data
}

} // namespace

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("ppm: cannot open " + path);
    int w = 0, h = 0;
    read_pnm_header(in, "P6", w, h, path);
    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw io_error("ppm: truncated file " + path);
    Image img(w, h, 3);
    for (size_t i = 0; i < raw.size(); ++i) img.data[i] = dequantize(raw[i]);
    return img;
}

void write_ppm(const std::string& path, const Image& img) {
    require(img.channels == 3, "ppm: 3 channels required");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("ppm: cannot write " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> raw(img.data.size());
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = quantize(img.data[i]);
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size()));
}

Image read_pgm_mask(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("pgm: cannot open " + path);
    int w = 0, h = 0;
    read_pnm_header(in, "P5", w, h, path);
    std::vector<uint8_t> raw(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw io_error("pgm: truncated file " + path);
    Image img(w, h, 1);
    for (size_t i = 0; i < raw.size(); ++i)
        img.data[i] = raw[i] >= 128 ? Real(1) : Real(0);
    return img;
}

void write_pgm_mask(const std::string& path, const Image& mask) {
    require(mask.channels == 1, "pgm: single channel required");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("pgm: cannot write " + path);
    out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    std::vector<uint8_t> raw(mask.data.size());
    for (size_t i = 0; i < raw.size(); ++i)
        raw[i] = mask.data[i] != Real(0) ? 255 : 0;
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size()));
}

// ---------------------------------------------------------------------------
// PFM (grayscale, little-endian, bottom-up scanlines)

Image read_pfm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("pfm: cannot open " + path);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0;
    in >> magic >> w >> h >> scale;
    if (magic != "Pf" || w <= 0 || h <= 0)
        throw io_error("pfm: unsupported header in " + path);
    if (scale >= 0) throw io_error("pfm: big-endian files are not supported: " + path);
    in.get();
    std::vector<float> raw(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!in) throw io_error("pfm: truncated file " + path);
    Image img(w, h, 1);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            img.at(r, c) = Real(raw[static_cast<size_t>(h - 1 - r) * w + c]);
    return img;
}

void write_pfm(const std::string& path, const Image& img) {
    require(img.channels == 1, "pfm: single channel required");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("pfm: cannot write " + path);
    out << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
    std::vector<float> raw(img.data.size());
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            raw[static_cast<size_t>(img.height - 1 - r) * img.width + c] =
                static_cast<float>(img.at(r, c));
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size() * sizeof(float)));
}

Image read_image(const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0)
        return read_png(path);
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".ppm") == 0)
        return read_ppm(path);
    throw io_error("read_image: unsupported extension: " + path);
}

} // namespace gsdiff
