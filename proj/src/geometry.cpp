// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#include "corea/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace corea {

Quaternion Quaternion::from_axis_angle(const Vec3& axis, double angle) {
    double n = axis.norm();
    COREA_CHECK_ARG(n > 0.0 && std::isfinite(n), "axis must be nonzero and finite");
    double h = 0.5 * angle;
    double s = std::sin(h) / n;
    return Quaternion(std::cos(h), axis.x() * s, axis.y() * s, axis.z() * s);
}

Mat3 quat_to_rotation(const Quaternion& q) {
    COREA_CHECK_ARG(is_finite(q.w) && is_finite(q.x) && is_finite(q.y) && is_finite(q.z),
                    "quaternion must be finite");
    double n = q.norm();
    COREA_CHECK_ARG(n > 1e-12, "quaternion norm must be nonzero");
    double w = q.w / n, x = q.x / n, y = q.y / n, z = q.z / n;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

SymMat3 covariance_from(const Vec3& scale, const Quaternion& q) {
    COREA_CHECK_ARG(scale.allFinite(), "scale must be finite");
    COREA_CHECK_ARG(scale.minCoeff() > 0.0, "scale sigmas must be positive");
    Mat3 r = quat_to_rotation(q);
    Mat3 cov = r * scale.cwiseProduct(scale).asDiagonal() * r.transpose();
    return SymMat3::from_matrix(cov);
}

namespace {

// One cyclic Jacobi sweep set; enough for 3x3 to reach machine precision.
std::array<EigenPair, 3> jacobi_eigen(const SymMat3& m) {
    Mat3 a = m.to_matrix();
    Mat3 v = Mat3::Identity();
    for (int sweep = 0; sweep < 32; ++sweep) {
        double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
        if (off < 1e-30) break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                Mat3 rot = Mat3::Identity();
                rot(p, p) = c;
                rot(q, q) = c;
                rot(p, q) = s;
                rot(q, p) = -s;
                a = rot.transpose() * a * rot;
                a(p, q) = a(q, p) = 0.0;
                v = v * rot;
            }
        }
    }
    std::array<int, 3> order = {0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int i, int j) { return a(i, i) < a(j, j); });
    std::array<EigenPair, 3> out;
    for (int k = 0; k < 3; ++k) {
        out[k].value = a(order[k], order[k]);
        out[k].vector = v.col(order[k]).normalized();
    }
    return out;
}

Vec3 eigenvector_for(const Mat3& a, double lambda, bool& ok) {
    Mat3 b = a - lambda * Mat3::Identity();
    Vec3 r0 = b.row(0), r1 = b.row(1), r2 = b.row(2);
    Vec3 c01 = r0.cross(r1), c02 = r0.cross(r2), c12 = r1.cross(r2);
    double n01 = c01.squaredNorm(), n02 = c02.squaredNorm(), n12 = c12.squaredNorm();
    Vec3 best = c01;
    double nb = n01;
    if (n02 > nb) { best = c02; nb = n02; }
    if (n12 > nb) { best = c12; nb = n12; }
    double scale = std::max({std::abs(a(0, 0)), std::abs(a(1, 1)), std::abs(a(2, 2)), 1e-300});
    ok = nb > 1e-24 * scale * scale * scale * scale;
    return ok ? Vec3(best.normalized()) : Vec3::UnitX();
}

} // namespace

std::array<EigenPair, 3> sym3_eigen(const SymMat3& m) {
    COREA_CHECK_ARG(is_finite(m.xx) && is_finite(m.xy) && is_finite(m.xz) &&
                        is_finite(m.yy) && is_finite(m.yz) && is_finite(m.zz),
                    "matrix must be finite");
    Mat3 a = m.to_matrix();
    double p1 = m.xy * m.xy + m.xz * m.xz + m.yz * m.yz;
    double scale = std::max({std::abs(m.xx), std::abs(m.yy), std::abs(m.zz), 1.0});
    if (p1 <= 1e-28 * scale * scale) {
        // Already diagonal.
        std::array<int, 3> order = {0, 1, 2};
        std::array<double, 3> d = {m.xx, m.yy, m.zz};
        std::sort(order.begin(), order.end(), [&](int i, int j) { return d[i] < d[j]; });
        std::array<EigenPair, 3> out;
        for (int k = 0; k < 3; ++k) {
            out[k].value = d[order[k]];
            out[k].vector = Mat3::Identity().col(order[k]);
        }
        return out;
    }
    double q = (m.xx + m.yy + m.zz) / 3.0;
    double p2 = (m.xx - q) * (m.xx - q) + (m.yy - q) * (m.yy - q) + (m.zz - q) * (m.zz - q) +
                2.0 * p1;
    double p = std::sqrt(p2 / 6.0);
    if (!(p > 1e-14 * scale)) return jacobi_eigen(m);
    Mat3 b = (a - q * Mat3::Identity()) / p;
    double detb = b.determinant();
    double r = std::clamp(0.5 * detb, -1.0, 1.0);
    // Near-degenerate discriminant: the acos branch loses accuracy, fall back.
    if (std::abs(std::abs(r) - 1.0) < 1e-10) return jacobi_eigen(m);
    double phi = std::acos(r) / 3.0;
    double e0 = q + 2.0 * p * std::cos(phi);
    double e2 = q + 2.0 * p * std::cos(phi + 2.0 * M_PI / 3.0);
    double e1 = 3.0 * q - e0 - e2;
    std::array<double, 3> vals = {e2, e1, e0}; // ascending
    std::array<EigenPair, 3> out;
    for (int k = 0; k < 3; ++k) {
        bool ok = false;
        out[k].value = vals[k];
        out[k].vector = eigenvector_for(a, vals[k], ok);
        if (!ok) return jacobi_eigen(m);
        Vec3 resid = a * out[k].vector - vals[k] * out[k].vector;
        if (resid.norm() > 1e-8 * std::max(1.0, scale)) return jacobi_eigen(m);
    }
    return out;
}

EigenPair sym3_min_eig(const SymMat3& m) { return sym3_eigen(m)[0]; }

Mat3 orthonormal_basis(const Vec3& n) {
    COREA_CHECK_ARG(n.allFinite() && n.norm() > 1e-12, "normal must be nonzero");
    Vec3 z = n.normalized();
    Vec3 t1;
    if (std::abs(z.z()) < 0.999999) {
        t1 = Vec3(-z.y(), z.x(), 0.0).normalized(); // cross(+z_world, z)
    } else {
        t1 = Vec3(z.z() > 0 ? 1.0 : -1.0, 0.0, 0.0); // identity frame at the pole
    }
    Vec3 t2 = z.cross(t1);
    Mat3 b;
    b.col(0) = t1;
    b.col(1) = t2;
    b.col(2) = z;
    return b;
}

std::vector<Vec3> fibonacci_hemisphere(int n, const Vec3& normal) {
    COREA_CHECK_ARG(n >= 1, "sample count must be >= 1");
    COREA_CHECK_ARG(normal.allFinite() && normal.norm() > 1e-12, "normal must be nonzero");
    Vec3 nz = normal.normalized();
    if (n == 1) return {nz};
    Mat3 frame = orthonormal_basis(nz);
    const double golden_angle = M_PI * (3.0 - std::sqrt(5.0));
    std::vector<Vec3> dirs;
    dirs.reserve(n);
    for (int k = 0; k < n; ++k) {
        double z = (k + 0.5) / double(n);
        double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        double phi = golden_angle * k;
        Vec3 local(r * std::cos(phi), r * std::sin(phi), z);
        dirs.push_back(frame * local);
    }
    return dirs;
}

GradientImage image_gradient(const ImageD& img, const Mask& valid) {
    COREA_CHECK_ARG(valid.same_shape(img.width, img.height), "mask shape mismatch");
    GradientImage out;
    out.grad = Image<Vec2>(img.width, img.height, Vec2::Zero());
    out.valid = Mask(img.width, img.height, 0);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            if (!valid.at(x, y)) continue;
            bool xm = x > 0 && valid.at(x - 1, y);
            bool xp = x + 1 < img.width && valid.at(x + 1, y);
            bool ym = y > 0 && valid.at(x, y - 1);
            bool yp = y + 1 < img.height && valid.at(x, y + 1);
            if (!(xm || xp) || !(ym || yp)) continue;
            double gx, gy;
            if (xm && xp)
                gx = 0.5 * (img.at(x + 1, y) - img.at(x - 1, y));
            else if (xp)
                gx = img.at(x + 1, y) - img.at(x, y);
            else
                gx = img.at(x, y) - img.at(x - 1, y);
            if (ym && yp)
                gy = 0.5 * (img.at(x, y + 1) - img.at(x, y - 1));
            else if (yp)
                gy = img.at(x, y + 1) - img.at(x, y);
            else
                gy = img.at(x, y) - img.at(x, y - 1);
            out.grad.at(x, y) = Vec2(gx, gy);
            out.valid.at(x, y) = 1;
        }
    }
    return out;
}

} // namespace corea
