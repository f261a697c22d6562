// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "corea/image.hpp"

#include <string>

namespace corea {

/// PFM with a positive (big-endian) scale and bottom-up scanlines, 3-channel.
void write_pfm(const std::string& path, const ImageRGB& img);

/// Single-channel PFM ("Pf").
void write_pfm(const std::string& path, const ImageD& img);

/// Reads either endianness; throws io_error on malformed headers.
ImageRGB read_pfm_rgb(const std::string& path);
ImageD read_pfm_gray(const std::string& path);

/// 8-bit RGB PNG from a [0,1] image (values clamped).
void write_png(const std::string& path, const ImageRGB& img);

} // namespace corea
