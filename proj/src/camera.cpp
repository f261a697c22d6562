// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#include "corea/camera.hpp"

namespace corea {

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint, int width,
                       int height, double fov_y_deg) {
    COREA_CHECK_ARG(width > 0 && height > 0, "resolution must be positive");
    COREA_CHECK_ARG(fov_y_deg > 0.0 && fov_y_deg < 180.0, "field of view out of range");
    Vec3 fwd = target - eye;
    COREA_CHECK_ARG(fwd.norm() > 1e-12, "eye and target coincide");
    fwd.normalize();
    Vec3 right = fwd.cross(up_hint);
    if (right.norm() < 1e-9) right = fwd.cross(Vec3(0.0, 1.0, 0.0));
    right.normalize();
    Vec3 down = fwd.cross(right);

    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fy = 0.5 * height / std::tan(0.5 * fov_y_deg * M_PI / 180.0);
    cam.fx = cam.fy;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.rot.row(0) = right;
    cam.rot.row(1) = down;
    cam.rot.row(2) = fwd;
    cam.trans = -cam.rot * eye;
    return cam;
}

} // namespace corea
