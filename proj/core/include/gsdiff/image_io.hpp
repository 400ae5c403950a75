#pragma once

#include "gsdiff/types.hpp"

#include <string>

namespace gsdiff {

class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// 8-bit color codecs; values map through round(v * 255) / 255.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

Image read_ppm(const std::string& path); // binary P6
void write_ppm(const std::string& path, const Image& img);

// Masks: P5, 255 = static, 0 = dynamic, thresholded at 128 on read.
Image read_pgm_mask(const std::string& path);
void write_pgm_mask(const std::string& path, const Image& mask);

// Little-endian grayscale PFM (rows bottom-up, scale -1).
Image read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Image& img);

/// Dispatch on extension (.png/.ppm).
Image read_image(const std::string& path);

} // namespace gsdiff
