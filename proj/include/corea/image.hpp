// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "corea/common.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace corea {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// A zeroed T. Eigen's fixed-size types leave their coefficients
/// uninitialized on default construction, so T{} is not enough.
template <typename T>
T zero_value() {
    if constexpr (requires { T::Zero(); })
        return T::Zero();
    else
        return T{};
}

/// Dense row-major raster; (x, y) with y selecting the row.
template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h) : Image(w, h, zero_value<T>()) {}
    Image(int w, int h, const T& fill) : width(w), height(h), data(size_t(w) * h, fill) {
        COREA_CHECK_ARG(w > 0 && h > 0, "image dimensions must be positive");
    }

    T& at(int x, int y) { return data[size_t(y) * width + x]; }
    const T& at(int x, int y) const { return data[size_t(y) * width + x]; }

    bool inside(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
    size_t pixel_count() const { return data.size(); }
    bool same_shape(int w, int h) const { return width == w && height == h; }
};

using ImageRGB = Image<Vec3>;
using ImageD = Image<double>;
using ImageV3 = Image<Vec3>;
using Mask = Image<uint8_t>;

} // namespace corea
