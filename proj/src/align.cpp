// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#include "corea/align.hpp"

#include "corea/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace corea {

namespace {

constexpr int kRegularizerCoverPoints = 512;

double halton(uint32_t i, uint32_t base) {
    double f = 1.0, r = 0.0;
    while (i > 0) {
        f /= base;
        r += f * (i % base);
        i /= base;
    }
    return r;
}

} // namespace

std::vector<Vec3> alignment_regularizer_points(const AlignmentBatch& batch,
                                               const SdfGrid& grid) {
    std::vector<Vec3> pts;
    pts.reserve(kRegularizerCoverPoints + size_t(batch.joint_count));
    // Low-discrepancy cover of the lattice bounds; the same points every call
    // so steps stay deterministic.
    Vec3 lo = grid.lo(), ext = grid.hi() - grid.lo();
    for (uint32_t i = 1; i <= kRegularizerCoverPoints; ++i)
        pts.push_back(lo + Vec3(halton(i, 2) * ext.x(), halton(i, 3) * ext.y(),
                                halton(i, 5) * ext.z()));
    for (int y = 0; y < batch.cam.height; ++y)
        for (int x = 0; x < batch.cam.width; ++x)
            if (batch.sdf_valid.at(x, y))
                pts.push_back(batch.hit_point[size_t(y) * batch.cam.width + x]);
    return pts;
}

namespace {

/// Entry/exit ray parameters against an axis-aligned box, or false.
bool ray_box(const Vec3& lo, const Vec3& hi, const Vec3& o, const Vec3& d, double& t0,
             double& t1) {
    t0 = kNearClip;
    t1 = std::numeric_limits<double>::max();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
            if (o[a] < lo[a] || o[a] > hi[a]) return false;
            continue;
        }
        double ta = (lo[a] - o[a]) / d[a];
        double tb = (hi[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
    }
    return t1 > t0 + 1e-9;
}

void check_unit(const Vec3& n, const char* what) {
    COREA_CHECK_ARG(std::abs(n.norm() - 1.0) < 1e-6, what);
}

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

} // namespace

AlignmentBatch build_alignment_batch(const ForwardCache& cache, const SdfGrid& grid,
                                     const AlignmentOptions& opt) {
    COREA_CHECK_ARG(opt.window_cells > 0.0, "window halfwidth must be positive");
    const Camera& cam = cache.cam;
    const RenderBuffers& buf = cache.buffers;

    AlignmentBatch b;
    b.cam = cam;
    b.gauss_depth = buf.depth;
    b.gauss_normal = ImageV3(cam.width, cam.height, Vec3::Zero());
    b.gauss_pseudo_normal = ImageV3(cam.width, cam.height, Vec3::Zero());
    b.gauss_valid = Mask(cam.width, cam.height, 0);
    b.sdf_depth = ImageD(cam.width, cam.height, 0.0);
    b.sdf_normal = ImageV3(cam.width, cam.height, Vec3::Zero());
    b.sdf_valid = Mask(cam.width, cam.height, 0);
    b.joint = Mask(cam.width, cam.height, 0);
    b.rays.resize(size_t(cam.width) * cam.height);
    b.hit_point.assign(size_t(cam.width) * cam.height, Vec3::Zero());

    PseudoNormals pn = pseudo_normals(buf.depth, buf.valid, cam);
    const Mat3 cam_to_world = cam.rot.transpose();

    const Vec3 origin = cam.center();
    const double delta = opt.window_cells * grid.spacing().maxCoeff();

    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            size_t i = size_t(y) * cam.width + x;

            if (buf.valid.at(x, y) && pn.valid.at(x, y) &&
                buf.normal.at(x, y).squaredNorm() > 1e-18) {
                b.gauss_valid.at(x, y) = 1;
                b.gauss_normal.at(x, y) = buf.normal.at(x, y);
                b.gauss_pseudo_normal.at(x, y) = cam_to_world * pn.normal.at(x, y);
            }

            Vec3 dir = cam.pixel_direction(x, y);
            SdfRay& ray = b.rays[i];
            if (buf.valid.at(x, y)) {
                double center_t = cam.depth_to_ray_t(x, y, buf.depth.at(x, y));
                ray = sdf_render_adaptive(grid, origin, dir, center_t, delta);
            } else {
                double t0, t1;
                if (ray_box(grid.lo(), grid.hi(), origin, dir, t0, t1))
                    ray = sdf_render_fallback(grid, origin, dir, t0, t1);
            }

            if (ray.valid) {
                Vec3 p = origin + ray.depth_t * dir;
                SdfNormal sn = surface_normal(grid, p);
                if (sn.ok) {
                    b.sdf_valid.at(x, y) = 1;
                    b.sdf_depth.at(x, y) = cam.ray_t_to_depth(x, y, ray.depth_t);
                    b.sdf_normal.at(x, y) = sn.n;
                    b.hit_point[i] = p;
                }
            }

            if (b.gauss_valid.at(x, y) && b.sdf_valid.at(x, y)) {
                b.joint.at(x, y) = 1;
                ++b.joint_count;
            }
        }
    }
    return b;
}

LossValue loss_depth(const AlignmentBatch& b) {
    if (b.joint_count == 0) return {0.0, true};
    double sum = 0.0;
    for (int y = 0; y < b.cam.height; ++y)
        for (int x = 0; x < b.cam.width; ++x)
            if (b.joint.at(x, y)) sum += std::abs(b.sdf_depth.at(x, y) - b.gauss_depth.at(x, y));
    return {sum / double(b.joint_count), false};
}

namespace {

LossValue cosine_loss(const AlignmentBatch& b, const ImageV3& a_field, const ImageV3& b_field) {
    if (b.joint_count == 0) return {0.0, true};
    double sum = 0.0;
    for (int y = 0; y < b.cam.height; ++y)
        for (int x = 0; x < b.cam.width; ++x) {
            if (!b.joint.at(x, y)) continue;
            const Vec3& u = a_field.at(x, y);
            const Vec3& v = b_field.at(x, y);
            check_unit(u, "normals must be unit on joint pixels");
            check_unit(v, "normals must be unit on joint pixels");
            sum += 1.0 - u.dot(v);
        }
    return {sum / double(b.joint_count), false};
}

} // namespace

LossValue loss_sdf_normal(const AlignmentBatch& b) {
    return cosine_loss(b, b.sdf_normal, b.gauss_pseudo_normal);
}

LossValue loss_gauss_normal(const AlignmentBatch& b) {
    return cosine_loss(b, b.gauss_normal, b.sdf_normal);
}

double projection_penalty(const GaussianScene& scene, const SdfGrid& grid,
                          std::vector<Vec3>* d_position) {
    COREA_CHECK_ARG(scene.size() > 0, "scene must be nonempty");
    if (d_position) d_position->assign(scene.size(), Vec3::Zero());
    const double inv_n = 1.0 / double(scene.size());
    double sum = 0.0;
    for (size_t i = 0; i < scene.size(); ++i) {
        double f = grid.sample(scene[i].position);
        sum += std::abs(f);
        if (d_position) (*d_position)[i] = sgn(f) * inv_n * grid.gradient(scene[i].position);
    }
    return sum * inv_n;
}

DsaTerms dsa_step(const AlignmentBatch& b, const SdfGrid& grid, const Mask& object_mask,
                  const DsaWeights& w, SdfGradients& grads) {
    const Camera& cam = b.cam;
    COREA_CHECK_ARG(object_mask.same_shape(cam.width, cam.height), "mask shape mismatch");
    grads.d_values.assign(grid.node_count(), 0.0);
    grads.d_s_vr = 0.0;

    DsaTerms terms;
    terms.joint_pixels = b.joint_count;
    terms.empty_joint = b.joint_count == 0;

    LossValue ld = loss_depth(b);
    LossValue ln = loss_sdf_normal(b);
    terms.depth = ld.value;
    terms.normal = ln.value;

    const double inv_pixels = 1.0 / double(size_t(cam.width) * cam.height);
    const double inv_joint = terms.empty_joint ? 0.0 : 1.0 / double(b.joint_count);
    double sil_sum = 0.0;

    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const SdfRay& ray = b.ray_at(x, y);
            double target = object_mask.at(x, y) ? 1.0 : 0.0;
            double d_alpha = 0.0, d_depth_t = 0.0;

            sil_sum += std::abs(ray.alpha - target);
            if (ray.samples >= 2)
                d_alpha += w.silhouette * sgn(ray.alpha - target) * inv_pixels;

            if (b.joint.at(x, y)) {
                double diff = b.sdf_depth.at(x, y) - b.gauss_depth.at(x, y);
                // View depth is t divided by the pixel ray's camera-frame length.
                double dz_dt = 1.0 / cam.depth_to_ray_t(x, y, 1.0);
                d_depth_t += w.depth * sgn(diff) * inv_joint * dz_dt;

                Vec3 d_n = -w.normal * inv_joint * b.gauss_pseudo_normal.at(x, y);
                surface_normal_backward(grid, b.hit_point[size_t(y) * cam.width + x], d_n,
                                        grads.d_values);
            }

            if (ray.samples >= 2 && (d_alpha != 0.0 || d_depth_t != 0.0))
                sdf_render_ray_backward(grid, ray, d_depth_t, d_alpha, grads.d_values,
                                        grads.d_s_vr);
        }
    }
    terms.silhouette = sil_sum * inv_pixels;

    // Regularizers: fixed cover of the bounds plus the surface hit points.
    std::vector<Vec3> pts = alignment_regularizer_points(b, grid);
    std::vector<double> tmp(grid.node_count(), 0.0);
    terms.eikonal = eikonal_loss(grid, pts, &tmp);
    for (size_t i = 0; i < tmp.size(); ++i) grads.d_values[i] += w.eikonal * tmp[i];
    std::fill(tmp.begin(), tmp.end(), 0.0);
    terms.curvature = curvature_loss(grid, pts, &tmp);
    for (size_t i = 0; i < tmp.size(); ++i) grads.d_values[i] += w.curvature * tmp[i];

    terms.total = w.silhouette * terms.silhouette + w.depth * terms.depth +
                  w.normal * terms.normal + w.eikonal * terms.eikonal +
                  w.curvature * terms.curvature;
    return terms;
}

NgaTerms nga_step(const GaussianScene& scene, const ForwardCache& cache,
                  const AlignmentBatch& b, const SdfGrid& grid, const ImageRGB& gt_image,
                  const Mask& object_mask, const NgaWeights& w, GradientSet& grads,
                  GradientSet& normal_grads) {
    const Camera& cam = cache.cam;
    COREA_CHECK_ARG(gt_image.same_shape(cam.width, cam.height), "image shape mismatch");
    COREA_CHECK_ARG(object_mask.same_shape(cam.width, cam.height), "mask shape mismatch");
    COREA_CHECK_ARG(b.cam.width == cam.width && b.cam.height == cam.height,
                    "batch/camera shape mismatch");

    NgaTerms terms;
    terms.joint_pixels = b.joint_count;
    terms.empty_joint = b.joint_count == 0;

    Upstream up;
    up.d_color = ImageRGB(cam.width, cam.height, Vec3::Zero());
    up.d_depth = ImageD(cam.width, cam.height, 0.0);
    up.d_alpha = ImageD(cam.width, cam.height, 0.0);
    up.d_normal = ImageV3(cam.width, cam.height, Vec3::Zero());
    up.d_depth_var = ImageD(cam.width, cam.height, 0.0);

    ImageRGB d_l1;
    terms.photometric = l1_loss(cache.buffers.color, gt_image, &d_l1);
    for (size_t i = 0; i < d_l1.data.size(); ++i) up.d_color.data[i] += w.l1 * d_l1.data[i];

    if (cam.width >= 11 && cam.height >= 11) {
        ImageRGB d_ssim;
        double s = ssim_with_gradient(cache.buffers.color, gt_image, d_ssim);
        terms.ssim = 1.0 - s;
        for (size_t i = 0; i < d_ssim.data.size(); ++i)
            up.d_color.data[i] -= w.ssim * d_ssim.data[i];
    }

    ImageD d_bce;
    terms.mask = mask_bce_loss(cache.buffers.alpha, object_mask, &d_bce);
    for (size_t i = 0; i < d_bce.data.size(); ++i) up.d_alpha.data[i] += w.mask * d_bce.data[i];

    // Blend depth dispersion over the valid silhouette.
    ImageD var = depth_variance(cache);
    int64_t n_valid = 0;
    for (uint8_t v : cache.buffers.valid.data) n_valid += v ? 1 : 0;
    if (n_valid > 0) {
        double sum = 0.0;
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x)
                if (cache.buffers.valid.at(x, y)) {
                    sum += var.at(x, y);
                    up.d_depth_var.at(x, y) = w.depth_var / double(n_valid);
                }
        terms.depth_var = sum / double(n_valid);
    }

    LossValue ld = loss_depth(b);
    LossValue ln = loss_gauss_normal(b);
    terms.depth = ld.value;
    terms.normal = ln.value;

    Upstream normal_up;
    normal_up.d_normal = ImageV3(cam.width, cam.height, Vec3::Zero());
    if (!terms.empty_joint) {
        const double inv_joint = 1.0 / double(b.joint_count);
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) {
                if (!b.joint.at(x, y)) continue;
                double diff = b.sdf_depth.at(x, y) - b.gauss_depth.at(x, y);
                up.d_depth.at(x, y) -= w.depth * sgn(diff) * inv_joint;
                Vec3 d_n = -inv_joint * b.sdf_normal.at(x, y); // raw-loss gradient
                normal_up.d_normal.at(x, y) = d_n;
                up.d_normal.at(x, y) += w.normal * d_n;
            }
    }

    grads = render_backward(scene, cache, up);
    normal_grads = render_backward(scene, cache, normal_up);

    std::vector<Vec3> d_pos;
    terms.projection = projection_penalty(scene, grid, &d_pos);
    for (size_t i = 0; i < d_pos.size(); ++i) grads.d_position[i] += w.depth * d_pos[i];

    terms.total = w.l1 * terms.photometric + w.ssim * terms.ssim + w.mask * terms.mask +
                  w.depth_var * terms.depth_var + w.depth * (terms.depth + terms.projection) +
                  w.normal * terms.normal;
    return terms;
}

AlignPhase alternate(int64_t iteration, bool simultaneous) {
    if (simultaneous) return AlignPhase::Both;
    return iteration % 2 == 0 ? AlignPhase::Sdf : AlignPhase::Gaussian;
}

} // namespace corea
