// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "corea/image.hpp"

#include <array>
#include <vector>

namespace corea {

/// Unit-norm convention is the caller's job unless stated; normalized() is
/// always safe to call (identity fallback for a zero quaternion).
struct Quaternion {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    Quaternion() = default;
    Quaternion(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    Quaternion normalized() const {
        double n = norm();
        if (n < 1e-300) return Quaternion();
        return Quaternion(w / n, x / n, y / n, z / n);
    }

    static Quaternion from_axis_angle(const Vec3& axis, double angle);
};

/// Symmetric 3x3 stored as its six unique entries.
struct SymMat3 {
    double xx = 0, xy = 0, xz = 0, yy = 0, yz = 0, zz = 0;

    Mat3 to_matrix() const {
        Mat3 m;
        m << xx, xy, xz, xy, yy, yz, xz, yz, zz;
        return m;
    }

    static SymMat3 from_matrix(const Mat3& m) {
        // Off-diagonal pairs are averaged so tiny asymmetries cannot leak in.
        SymMat3 s;
        s.xx = m(0, 0);
        s.yy = m(1, 1);
        s.zz = m(2, 2);
        s.xy = 0.5 * (m(0, 1) + m(1, 0));
        s.xz = 0.5 * (m(0, 2) + m(2, 0));
        s.yz = 0.5 * (m(1, 2) + m(2, 1));
        return s;
    }

    SymMat3 operator+(const SymMat3& o) const {
        return {xx + o.xx, xy + o.xy, xz + o.xz, yy + o.yy, yz + o.yz, zz + o.zz};
    }

    SymMat3 operator*(double k) const { return {xx * k, xy * k, xz * k, yy * k, yz * k, zz * k}; }
};

struct EigenPair {
    double value = 0.0;
    Vec3 vector = Vec3::UnitX();
};

/// Rotation matrix of a quaternion; the input is normalized internally.
/// Throws invalid_argument on non-finite or zero-norm input.
Mat3 quat_to_rotation(const Quaternion& q);

/// World covariance R * diag(s^2) * R^T for per-axis sigmas s (world units).
/// Throws invalid_argument if any sigma is not strictly positive and finite.
SymMat3 covariance_from(const Vec3& scale, const Quaternion& q);

/// All eigenpairs of a symmetric 3x3, ascending by eigenvalue. Closed-form
/// characteristic-polynomial solve with a cyclic-Jacobi fallback when the
/// discriminant is too small to trust the trigonometric branch.
std::array<EigenPair, 3> sym3_eigen(const SymMat3& m);

/// Minimum eigenpair; unit eigenvector with A v = lambda v to 1e-8.
EigenPair sym3_min_eig(const SymMat3& m);

/// Deterministic orthonormal frame; columns (t1, t2, n) with t1 x t2 = n.
/// n = +z yields exactly the identity frame.
Mat3 orthonormal_basis(const Vec3& n);

/// Spherical Fibonacci lattice over the hemisphere around `normal`.
/// All directions are unit and satisfy dot(dir, normal) > 0; n == 1 returns
/// {normal} by convention. Throws invalid_argument for n < 1 or a zero normal.
std::vector<Vec3> fibonacci_hemisphere(int n, const Vec3& normal);

struct GradientImage {
    Image<Vec2> grad;  // (d/dx, d/dy) in pixel units
    Mask valid;
};

/// Per-pixel gradients of a masked scalar image: central differences where
/// both neighbors are valid, one-sided at valid borders. Pixels that are
/// masked out, or have no valid neighbor along either axis, are flagged
/// invalid and get a zero gradient.
GradientImage image_gradient(const ImageD& img, const Mask& valid);

} // namespace corea
