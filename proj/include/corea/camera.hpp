// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "corea/image.hpp"

namespace corea {

/// Pinhole camera, OpenCV-style frame: x right, y down, z forward.
/// x_cam = rot * x_world + trans. Pixel (ix, iy) samples at (ix+0.5, iy+0.5).
struct Camera {
    int width = 0;
    int height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    Mat3 rot = Mat3::Identity();
    Vec3 trans = Vec3::Zero();

    Vec3 center() const { return -rot.transpose() * trans; }
    Vec3 to_camera(const Vec3& p) const { return rot * p + trans; }
    Vec3 to_world(const Vec3& p) const { return rot.transpose() * (p - trans); }

    /// Unit world-space direction through the center of pixel (ix, iy).
    Vec3 pixel_direction(int ix, int iy) const {
        Vec3 d((ix + 0.5 - cx) / fx, (iy + 0.5 - cy) / fy, 1.0);
        return (rot.transpose() * d).normalized();
    }

    /// View depth (camera z) of a world point along the pixel ray direction:
    /// converts a ray parameter t into view depth and back.
    double ray_t_to_depth(int ix, int iy, double t) const {
        Vec3 d((ix + 0.5 - cx) / fx, (iy + 0.5 - cy) / fy, 1.0);
        return t / d.norm(); // unit ray dir has cam-z component 1/|d|
    }
    double depth_to_ray_t(int ix, int iy, double depth) const {
        Vec3 d((ix + 0.5 - cx) / fx, (iy + 0.5 - cy) / fy, 1.0);
        return depth * d.norm();
    }

    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint, int width,
                          int height, double fov_y_deg);
};

} // namespace corea
