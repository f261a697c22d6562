// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "corea/image.hpp"

namespace corea {

/// Peak signal-to-noise ratio over all channels of [0,1] images, in dB,
/// capped at 99 for identical inputs.
double psnr(const ImageRGB& a, const ImageRGB& b);

/// Mean single-scale SSIM over valid 11x11 windows (Gaussian weights,
/// sigma 1.5, k1 = 0.01, k2 = 0.03, dynamic range 1). Images must be at
/// least 11x11.
double ssim(const ImageRGB& a, const ImageRGB& b);

/// ssim value plus d(ssim)/d(a) for every pixel of the first image.
double ssim_with_gradient(const ImageRGB& a, const ImageRGB& b, ImageRGB& d_a);

/// Gamma 1/2.2 followed by a clamp to [0,1]; negative radiance maps to 0.
ImageRGB tonemap(const ImageRGB& linear);

/// Mean absolute difference over all pixels and channels, plus optionally
/// d(loss)/d(a).
double l1_loss(const ImageRGB& a, const ImageRGB& b, ImageRGB* d_a = nullptr);

/// Binary cross entropy between accumulated alpha and a {0,1} mask, with the
/// alpha clamped to [1e-6, 1-1e-6]; optional gradient wrt alpha.
double mask_bce_loss(const ImageD& alpha, const Mask& mask, ImageD* d_alpha = nullptr);

} // namespace corea
