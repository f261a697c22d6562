// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#include "corea/render.hpp"

#include <algorithm>
#include <cmath>

namespace corea {

namespace {

// q = d' Sigma^-1 d beyond which alpha falls under kAlphaCutoff for o <= 1.
const double kQMax = -2.0 * std::log(kAlphaCutoff);

struct BlendState {
    Vec3 color_sum = Vec3::Zero();
    double depth_sum = 0.0;
    double alpha_sum = 0.0;
    Vec3 normal_sum = Vec3::Zero();
    double transmittance = 1.0;
};

inline double record_alpha(const ProjectedGaussian& pg, double gauss) {
    return std::min(kAlphaClamp, pg.opacity * gauss);
}

// Adjoints accumulated per projected Gaussian before the once-per-Gaussian
// chain through projection.
struct ProjAdjoint {
    Vec2 d_mean2d = Vec2::Zero();
    Mat2 d_cov2d = Mat2::Zero(); // symmetric
    double d_z = 0.0;
    Vec3 d_color = Vec3::Zero();
    Vec3 d_normal = Vec3::Zero();
    double d_pre_opacity = 0.0; // sum of d_alpha * gauss over records

    void add(const ProjAdjoint& o) {
        d_mean2d += o.d_mean2d;
        d_cov2d += o.d_cov2d;
        d_z += o.d_z;
        d_color += o.d_color;
        d_normal += o.d_normal;
        d_pre_opacity += o.d_pre_opacity;
    }
};

// d(R)/d(quat normalized components), written as four 3x3 slices.
std::array<Mat3, 4> rotation_quat_slices(double w, double x, double y, double z) {
    std::array<Mat3, 4> s;
    s[0] << 0, -z, y, z, 0, -x, -y, x, 0;
    s[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    s[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    s[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    for (auto& m : s) m *= 2.0;
    return s;
}

// Chains an adjoint on the rotation matrix into the raw (unnormalized)
// quaternion storage.
std::array<double, 4> rotation_backward(const Quaternion& q_raw, const Mat3& d_rot) {
    double n = q_raw.norm();
    double w = q_raw.w / n, x = q_raw.x / n, y = q_raw.y / n, z = q_raw.z / n;
    auto slices = rotation_quat_slices(w, x, y, z);
    Eigen::Vector4d d_hat;
    for (int i = 0; i < 4; ++i) d_hat[i] = (d_rot.array() * slices[i].array()).sum();
    Eigen::Vector4d hat(w, x, y, z);
    Eigen::Vector4d d_raw = (d_hat - hat * hat.dot(d_hat)) / n;
    return {d_raw[0], d_raw[1], d_raw[2], d_raw[3]};
}

} // namespace

std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& g, const Camera& cam,
                                                  const Vec3* color_override) {
    COREA_CHECK_ARG(g.position.allFinite(), "gaussian position must be finite");
    Vec3 t = cam.to_camera(g.position);
    if (t.z() <= kNearClip) return std::nullopt;

    Eigen::Matrix<double, 2, 3> jac;
    double iz = 1.0 / t.z();
    jac << cam.fx * iz, 0.0, -cam.fx * t.x() * iz * iz,
           0.0, cam.fy * iz, -cam.fy * t.y() * iz * iz;

    Mat3 cov3 = covariance_from(g.scale(), g.rotation).to_matrix();
    Eigen::Matrix<double, 2, 3> m = jac * cam.rot;
    Mat2 cov2 = m * cov3 * m.transpose();
    cov2(0, 0) += kCovarianceDilation;
    cov2(1, 1) += kCovarianceDilation;

    double det = cov2.determinant();
    if (!(det > 0.0) || !cov2.allFinite())
        throw numerical_error("screen covariance is not positive definite");

    ProjectedGaussian pg;
    pg.id = g.id;
    pg.mean2d = Vec2(cam.fx * t.x() * iz + cam.cx, cam.fy * t.y() * iz + cam.cy);
    pg.cov2d = cov2;
    pg.cov_inv << cov2(1, 1) / det, -cov2(0, 1) / det, -cov2(0, 1) / det, cov2(0, 0) / det;
    pg.z = t.z();
    pg.opacity = g.opacity();

    double half_tr = 0.5 * (cov2(0, 0) + cov2(1, 1));
    double disc = std::sqrt(std::max(0.0, half_tr * half_tr - det));
    pg.radius3 = 3.0 * std::sqrt(std::max(0.0, half_tr + disc));

    double rx = std::sqrt(kQMax * cov2(0, 0));
    double ry = std::sqrt(kQMax * cov2(1, 1));
    pg.x0 = std::max(0, int(std::ceil(pg.mean2d.x() - rx - 0.5)));
    pg.x1 = std::min(cam.width - 1, int(std::floor(pg.mean2d.x() + rx - 0.5)));
    pg.y0 = std::max(0, int(std::ceil(pg.mean2d.y() - ry - 0.5)));
    pg.y1 = std::min(cam.height - 1, int(std::floor(pg.mean2d.y() + ry - 0.5)));
    if (pg.x0 > pg.x1 || pg.y0 > pg.y1) return std::nullopt;

    pg.view_dir = (g.position - cam.center()).normalized();
    pg.normal = gaussian_normal(g, pg.view_dir);
    if (color_override) {
        pg.color = *color_override;
    } else {
        pg.sh_eval = evaluate_sh_color(g, pg.view_dir);
        pg.color = pg.sh_eval.color;
    }
    return pg;
}

ForwardCache render_forward(const GaussianScene& scene, const Camera& cam,
                            const RenderOptions& opt) {
    COREA_CHECK_ARG(cam.width > 0 && cam.height > 0, "camera resolution must be positive");
    if (opt.color_override)
        COREA_CHECK_ARG(opt.color_override->size() == scene.size(), "override size mismatch");

    ForwardCache cache;
    cache.cam = cam;
    cache.background = opt.background;
    cache.used_override = opt.color_override != nullptr;
    cache.scene_revision = scene.revision();
    cache.buffers.color = ImageRGB(cam.width, cam.height, opt.background);
    cache.buffers.depth = ImageD(cam.width, cam.height, 0.0);
    cache.buffers.alpha = ImageD(cam.width, cam.height, 0.0);
    cache.buffers.normal = ImageV3(cam.width, cam.height, Vec3::Zero());
    cache.buffers.valid = Mask(cam.width, cam.height, 0);
    cache.records.assign(size_t(cam.width) * cam.height, {});

    cache.projected.reserve(scene.size());
    for (uint32_t i = 0; i < scene.size(); ++i) {
        const Vec3* ov = opt.color_override ? &(*opt.color_override)[i] : nullptr;
        auto pg = project_gaussian(scene[i], cam, ov);
        if (pg) {
            pg->index = i;
            cache.projected.push_back(*pg);
        }
    }

    const auto& projected = cache.projected;
    parallel_for_blocks(cam.height, 8, [&](int64_t row0, int64_t row1) {
        std::vector<std::pair<uint32_t, double>> hits; // (proj idx, gauss value)
        for (int y = int(row0); y < int(row1); ++y) {
            for (int x = 0; x < cam.width; ++x) {
                hits.clear();
                Vec2 pix(x + 0.5, y + 0.5);
                for (uint32_t p = 0; p < projected.size(); ++p) {
                    const auto& pg = projected[p];
                    if (x < pg.x0 || x > pg.x1 || y < pg.y0 || y > pg.y1) continue;
                    Vec2 d = pix - pg.mean2d;
                    double q = d.dot(pg.cov_inv * d);
                    if (q > kQMax) continue;
                    double gauss = std::exp(-0.5 * q);
                    if (pg.opacity * gauss < kAlphaCutoff) continue;
                    hits.emplace_back(p, gauss);
                }
                std::sort(hits.begin(), hits.end(), [&](const auto& a, const auto& b) {
                    const auto& ga = projected[a.first];
                    const auto& gb = projected[b.first];
                    if (ga.z != gb.z) return ga.z < gb.z;
                    return ga.id < gb.id;
                });

                BlendState st;
                auto& recs = cache.records[size_t(y) * cam.width + x];
                recs.reserve(hits.size());
                for (const auto& [p, gauss] : hits) {
                    const auto& pg = projected[p];
                    double a = record_alpha(pg, gauss);
                    double w = a * st.transmittance;
                    st.color_sum += w * pg.color;
                    st.depth_sum += w * pg.z;
                    st.alpha_sum += w;
                    st.normal_sum += w * pg.normal;
                    st.transmittance *= (1.0 - a);
                    recs.push_back({p, gauss});
                    if (st.transmittance < kTransmittanceFloor) break;
                }

                auto& buf = cache.buffers;
                buf.color.at(x, y) = st.color_sum + st.transmittance * opt.background;
                buf.alpha.at(x, y) = st.alpha_sum;
                buf.depth.at(x, y) = st.depth_sum / std::max(st.alpha_sum, kDepthAlphaFloor);
                double nn = st.normal_sum.norm();
                buf.normal.at(x, y) = nn > 1e-12 ? Vec3(st.normal_sum / nn) : Vec3::Zero();
                buf.valid.at(x, y) = st.alpha_sum > kValidAlpha ? 1 : 0;
            }
        }
    });

    for (const auto& pg : cache.projected)
        if (!pg.color.allFinite() || !std::isfinite(pg.z))
            throw numerical_error("non-finite projection state");
    return cache;
}

ImageD depth_variance(const ForwardCache& cache) {
    const auto& cam = cache.cam;
    ImageD out(cam.width, cam.height, 0.0);
    parallel_for_blocks(cam.height, 8, [&](int64_t row0, int64_t row1) {
        for (int y = int(row0); y < int(row1); ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const auto& recs = cache.records_at(x, y);
                if (recs.empty()) continue;
                double depth = cache.buffers.depth.at(x, y);
                double amax = std::max(cache.buffers.alpha.at(x, y), kDepthAlphaFloor);
                double t = 1.0, acc = 0.0;
                for (const auto& r : recs) {
                    const auto& pg = cache.projected[r.proj];
                    double a = record_alpha(pg, r.gauss);
                    double w = a * t;
                    acc += w * (pg.z - depth) * (pg.z - depth);
                    t *= (1.0 - a);
                }
                out.at(x, y) = acc / amax;
            }
        }
    });
    return out;
}

void GradientSet::resize(size_t n, bool with_override) {
    d_position.assign(n, Vec3::Zero());
    d_rotation.assign(n, {0, 0, 0, 0});
    d_log_scale.assign(n, Vec3::Zero());
    d_opacity_logit.assign(n, 0.0);
    std::array<Vec3, kShCoeffs> zero_sh;
    zero_sh.fill(Vec3::Zero());
    d_sh.assign(n, zero_sh);
    if (with_override) d_color_override.assign(n, Vec3::Zero());
    else d_color_override.clear();
}

void GradientSet::accumulate(const GradientSet& o, double weight) {
    COREA_CHECK_ARG(o.d_position.size() == d_position.size(), "gradient size mismatch");
    for (size_t i = 0; i < d_position.size(); ++i) {
        d_position[i] += weight * o.d_position[i];
        for (int k = 0; k < 4; ++k) d_rotation[i][k] += weight * o.d_rotation[i][k];
        d_log_scale[i] += weight * o.d_log_scale[i];
        d_opacity_logit[i] += weight * o.d_opacity_logit[i];
        for (int k = 0; k < kShCoeffs; ++k) d_sh[i][k] += weight * o.d_sh[i][k];
    }
    if (!d_color_override.empty() && !o.d_color_override.empty())
        for (size_t i = 0; i < d_color_override.size(); ++i)
            d_color_override[i] += weight * o.d_color_override[i];
}

bool GradientSet::all_finite() const {
    for (size_t i = 0; i < d_position.size(); ++i) {
        if (!d_position[i].allFinite() || !d_log_scale[i].allFinite()) return false;
        if (!std::isfinite(d_opacity_logit[i])) return false;
        for (int k = 0; k < 4; ++k)
            if (!std::isfinite(d_rotation[i][k])) return false;
        for (int k = 0; k < kShCoeffs; ++k)
            if (!d_sh[i][k].allFinite()) return false;
    }
    for (const auto& c : d_color_override)
        if (!c.allFinite()) return false;
    return true;
}

GradientSet render_backward(const GaussianScene& scene, const ForwardCache& cache,
                            const Upstream& up) {
    COREA_CHECK_STATE(cache.scene_revision == scene.revision(),
                      "contribution records are stale: scene changed since forward");
    const auto& cam = cache.cam;
    auto check_shape = [&](const auto& img, const char* name) {
        if (img.width != 0)
            COREA_CHECK_ARG(img.same_shape(cam.width, cam.height), std::string(name) + " shape mismatch");
    };
    check_shape(up.d_color, "d_color");
    check_shape(up.d_depth, "d_depth");
    check_shape(up.d_alpha, "d_alpha");
    check_shape(up.d_normal, "d_normal");
    check_shape(up.d_depth_var, "d_depth_var");

    const auto& projected = cache.projected;
    const int64_t nblocks = (cam.height + 7) / 8;
    std::vector<std::vector<ProjAdjoint>> block_adj(size_t(nblocks),
                                                    std::vector<ProjAdjoint>(projected.size()));

    parallel_for_blocks(cam.height, 8, [&](int64_t row0, int64_t row1) {
        auto& adj = block_adj[size_t(row0 / 8)];
        std::vector<double> trans, wbuf, abuf, dw;
        for (int y = int(row0); y < int(row1); ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const auto& recs = cache.records_at(x, y);
                if (recs.empty()) continue;

                Vec3 u_color = up.d_color.width ? up.d_color.at(x, y) : Vec3::Zero();
                double u_depth = up.d_depth.width ? up.d_depth.at(x, y) : 0.0;
                double u_alpha = up.d_alpha.width ? up.d_alpha.at(x, y) : 0.0;
                Vec3 u_normal = up.d_normal.width ? up.d_normal.at(x, y) : Vec3::Zero();
                double u_var = up.d_depth_var.width ? up.d_depth_var.at(x, y) : 0.0;
                if (u_color.isZero(0.0) && u_depth == 0.0 && u_alpha == 0.0 &&
                    u_normal.isZero(0.0) && u_var == 0.0)
                    continue;

                size_t n = recs.size();
                trans.resize(n);
                wbuf.resize(n);
                abuf.resize(n);
                dw.assign(n, 0.0);

                double t = 1.0, asum = 0.0, zsum = 0.0;
                Vec3 nsum = Vec3::Zero();
                for (size_t k = 0; k < n; ++k) {
                    const auto& pg = projected[recs[k].proj];
                    double a = record_alpha(pg, recs[k].gauss);
                    trans[k] = t;
                    abuf[k] = a;
                    wbuf[k] = a * t;
                    asum += wbuf[k];
                    zsum += wbuf[k] * pg.z;
                    nsum += wbuf[k] * pg.normal;
                    t *= (1.0 - a);
                }
                double amax = std::max(asum, kDepthAlphaFloor);
                bool a_live = asum > kDepthAlphaFloor;
                double depth = zsum / amax;

                // Depth variance pieces (general form; the cross term SzD
                // vanishes when the alpha floor is inactive).
                double var = 0.0, szd = 0.0;
                if (u_var != 0.0) {
                    for (size_t k = 0; k < n; ++k) {
                        const auto& pg = projected[recs[k].proj];
                        var += wbuf[k] * (pg.z - depth) * (pg.z - depth);
                        szd += wbuf[k] * (pg.z - depth);
                    }
                    var /= amax;
                }

                double d_zsum = u_depth / amax;
                double d_asum = u_alpha - u_color.dot(cache.background);
                if (a_live) d_asum -= u_depth * zsum / (amax * amax);

                Vec3 d_nsum = Vec3::Zero();
                double nn = nsum.norm();
                if (nn > 1e-12) {
                    Vec3 nhat = nsum / nn;
                    d_nsum = (u_normal - nhat * nhat.dot(u_normal)) / nn;
                }

                if (u_var != 0.0 && a_live) d_asum -= u_var * var / amax;

                for (size_t k = 0; k < n; ++k) {
                    const auto& pg = projected[recs[k].proj];
                    double zk = pg.z;
                    double g = u_color.dot(pg.color) + d_zsum * zk + d_asum + d_nsum.dot(pg.normal);
                    double dz = d_zsum * wbuf[k];
                    if (u_var != 0.0) {
                        double dD_dw = a_live ? (zk / amax - zsum / (amax * amax)) : zk / amax;
                        g += u_var * ((zk - depth) * (zk - depth) - 2.0 * szd * dD_dw) / amax;
                        double dD_dz = wbuf[k] / amax;
                        dz += u_var * (2.0 * wbuf[k] * (zk - depth) - 2.0 * szd * dD_dz) / amax;
                    }
                    dw[k] += g;
                    auto& a = adj[recs[k].proj];
                    a.d_color += wbuf[k] * u_color;
                    a.d_normal += wbuf[k] * d_nsum;
                    a.d_z += dz;
                }

                // w_k = alpha_k prod_{j<k}(1-alpha_j), reversed accumulation.
                double suffix = 0.0;
                Vec2 pix(x + 0.5, y + 0.5);
                for (size_t kk = n; kk-- > 0;) {
                    const auto& rec = recs[kk];
                    const auto& pg = projected[rec.proj];
                    double d_alpha_k = trans[kk] * dw[kk] - suffix / (1.0 - abuf[kk]);
                    suffix += dw[kk] * wbuf[kk];

                    bool clamped = pg.opacity * rec.gauss > kAlphaClamp;
                    if (clamped) continue;
                    auto& a = adj[rec.proj];
                    a.d_pre_opacity += d_alpha_k * rec.gauss;
                    double d_gauss = d_alpha_k * pg.opacity;
                    double d_q = -0.5 * rec.gauss * d_gauss;
                    Vec2 delta = pix - pg.mean2d;
                    Vec2 md = pg.cov_inv * delta;
                    a.d_mean2d += -2.0 * d_q * md;
                    a.d_cov2d += -d_q * md * md.transpose();
                }
            }
        }
    });

    std::vector<ProjAdjoint> adj(projected.size());
    for (const auto& blk : block_adj)
        for (size_t p = 0; p < projected.size(); ++p) adj[p].add(blk[p]);

    GradientSet grads;
    grads.resize(scene.size(), cache.used_override);

    parallel_for_blocks(int64_t(projected.size()), 16, [&](int64_t lo, int64_t hi) {
        for (int64_t p = lo; p < hi; ++p) {
            const auto& pg = projected[size_t(p)];
            const auto& a = adj[size_t(p)];
            const auto& g = scene[pg.index];
            uint32_t i = pg.index;
            if (a.d_mean2d.isZero(0.0) && a.d_cov2d.isZero(0.0) && a.d_z == 0.0 &&
                a.d_color.isZero(0.0) && a.d_normal.isZero(0.0) && a.d_pre_opacity == 0.0)
                continue;

            // Color: override array or SH coefficients + view direction.
            if (cache.used_override) {
                grads.d_color_override[i] += a.d_color;
            } else {
                Vec3 d_view = Vec3::Zero();
                auto dbasis = sh_basis_gradient(pg.view_dir);
                for (int k = 0; k < kShCoeffs; ++k) {
                    Vec3 dc = a.d_color;
                    for (int ch = 0; ch < 3; ++ch)
                        if (pg.sh_eval.clamped[ch]) dc[ch] = 0.0;
                    grads.d_sh[i][k] += pg.sh_eval.basis[k] * dc;
                    d_view += dc.dot(g.sh[k]) * dbasis[k];
                }
                double dist = (g.position - cam.center()).norm();
                grads.d_position[i] +=
                    (d_view - pg.view_dir * pg.view_dir.dot(d_view)) / dist;
            }

            // Opacity logit.
            double o = pg.opacity;
            grads.d_opacity_logit[i] += a.d_pre_opacity * o * (1.0 - o);

            Mat3 d_rot_accum = Mat3::Zero();

            // Normal: rotated shortest axis with a view-dependent sign.
            if (!a.d_normal.isZero(0.0)) {
                Vec3 s = g.log_scale;
                int axis = 0;
                if (s.y() < s[axis]) axis = 1;
                if (s.z() < s[axis]) axis = 2;
                Mat3 rot = quat_to_rotation(g.rotation);
                double sign = rot.col(axis).dot(pg.view_dir) > 0.0 ? -1.0 : 1.0;
                d_rot_accum.col(axis) += sign * a.d_normal;
            }

            // Projection chain: mean2d, cov2d, z -> position, rotation, scale.
            Vec3 t = cam.to_camera(g.position);
            double iz = 1.0 / t.z();
            Eigen::Matrix<double, 2, 3> jac;
            jac << cam.fx * iz, 0.0, -cam.fx * t.x() * iz * iz,
                   0.0, cam.fy * iz, -cam.fy * t.y() * iz * iz;
            Eigen::Matrix<double, 2, 3> m = jac * cam.rot;
            Mat3 cov3 = covariance_from(g.scale(), g.rotation).to_matrix();

            Mat2 d_cov2 = 0.5 * (a.d_cov2d + a.d_cov2d.transpose());
            Vec3 d_t = Vec3::Zero();
            d_t.z() += a.d_z;
            d_t.x() += jac(0, 0) * a.d_mean2d.x();
            d_t.z() += jac(0, 2) * a.d_mean2d.x();
            d_t.y() += jac(1, 1) * a.d_mean2d.y();
            d_t.z() += jac(1, 2) * a.d_mean2d.y();

            Mat3 d_cov3 = m.transpose() * d_cov2 * m;
            Eigen::Matrix<double, 2, 3> d_m = 2.0 * d_cov2 * m * cov3;
            Eigen::Matrix<double, 2, 3> d_jac = d_m * cam.rot.transpose();
            d_t.x() += d_jac(0, 2) * (-cam.fx * iz * iz);
            d_t.y() += d_jac(1, 2) * (-cam.fy * iz * iz);
            d_t.z() += d_jac(0, 0) * (-cam.fx * iz * iz) +
                       d_jac(0, 2) * (2.0 * cam.fx * t.x() * iz * iz * iz) +
                       d_jac(1, 1) * (-cam.fy * iz * iz) +
                       d_jac(1, 2) * (2.0 * cam.fy * t.y() * iz * iz * iz);

            grads.d_position[i] += cam.rot.transpose() * d_t;

            // World covariance -> rotation and log-scale.
            Mat3 rot = quat_to_rotation(g.rotation);
            Vec3 scale = g.scale();
            Mat3 d_cov3_sym = 0.5 * (d_cov3 + d_cov3.transpose());
            d_rot_accum += 2.0 * d_cov3_sym * rot * scale.cwiseProduct(scale).asDiagonal();
            for (int ax = 0; ax < 3; ++ax) {
                Vec3 col = rot.col(ax);
                double ds = 2.0 * scale[ax] * col.dot(d_cov3_sym * col);
                grads.d_log_scale[i][ax] += ds * scale[ax];
            }

            if (!d_rot_accum.isZero(0.0)) {
                auto dq = rotation_backward(g.rotation, d_rot_accum);
                for (int k = 0; k < 4; ++k) grads.d_rotation[i][k] += dq[k];
            }
        }
    });

    if (!grads.all_finite()) throw numerical_error("non-finite gradient in render_backward");
    return grads;
}

PseudoNormals pseudo_normals(const ImageD& depth, const Mask& valid, const Camera& cam) {
    COREA_CHECK_ARG(depth.same_shape(cam.width, cam.height), "depth shape mismatch");
    COREA_CHECK_ARG(valid.same_shape(cam.width, cam.height), "mask shape mismatch");
    PseudoNormals out;
    out.normal = ImageV3(cam.width, cam.height, Vec3::Zero());
    out.valid = Mask(cam.width, cam.height, 0);

    auto unproject = [&](int x, int y) {
        double d = depth.at(x, y);
        return Vec3(d * (x + 0.5 - cam.cx) / cam.fx, d * (y + 0.5 - cam.cy) / cam.fy, d);
    };

    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            if (!valid.at(x, y)) continue;
            bool xm = x > 0 && valid.at(x - 1, y);
            bool xp = x + 1 < cam.width && valid.at(x + 1, y);
            bool ym = y > 0 && valid.at(x, y - 1);
            bool yp = y + 1 < cam.height && valid.at(x, y + 1);
            if (!(xm || xp) || !(ym || yp)) continue;

            Vec3 tx, ty;
            if (xm && xp) tx = unproject(x + 1, y) - unproject(x - 1, y);
            else if (xp) tx = unproject(x + 1, y) - unproject(x, y);
            else tx = unproject(x, y) - unproject(x - 1, y);
            if (ym && yp) ty = unproject(x, y + 1) - unproject(x, y - 1);
            else if (yp) ty = unproject(x, y + 1) - unproject(x, y);
            else ty = unproject(x, y) - unproject(x, y - 1);

            Vec3 n = tx.cross(ty);
            double nn = n.norm();
            if (nn < 1e-12) continue;
            n /= nn;
            if (n.dot(unproject(x, y)) > 0.0) n = -n;
            out.normal.at(x, y) = n;
            out.valid.at(x, y) = 1;
        }
    }
    return out;
}

ProbePixel blend_pixel(const ForwardCache& cache, int x, int y, const ProbeOverride& ov) {
    struct Hit {
        double z;
        uint64_t id;
        double alpha;
        const ProjectedGaussian* pg;
    };
    std::vector<Hit> hits;
    const auto& recs = cache.records_at(x, y);
    hits.reserve(recs.size() + ov.add.size());
    for (const auto& r : recs) {
        const auto& pg = cache.projected[r.proj];
        if (int64_t(pg.index) == ov.remove_index) continue;
        hits.push_back({pg.z, pg.id, record_alpha(pg, r.gauss), &pg});
    }
    Vec2 pix(x + 0.5, y + 0.5);
    for (const auto& pg : ov.add) {
        if (x < pg.x0 || x > pg.x1 || y < pg.y0 || y > pg.y1) continue;
        Vec2 d = pix - pg.mean2d;
        double q = d.dot(pg.cov_inv * d);
        if (q > kQMax) continue;
        double gauss = std::exp(-0.5 * q);
        if (pg.opacity * gauss < kAlphaCutoff) continue;
        hits.push_back({pg.z, pg.id, record_alpha(pg, gauss), &pg});
    }
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        if (a.z != b.z) return a.z < b.z;
        return a.id < b.id;
    });

    BlendState st;
    for (const auto& h : hits) {
        double w = h.alpha * st.transmittance;
        st.color_sum += w * h.pg->color;
        st.depth_sum += w * h.z;
        st.alpha_sum += w;
        st.normal_sum += w * h.pg->normal;
        st.transmittance *= (1.0 - h.alpha);
        if (st.transmittance < kTransmittanceFloor) break;
    }
    ProbePixel out;
    out.color = st.color_sum + st.transmittance * cache.background;
    out.alpha = st.alpha_sum;
    out.depth = st.depth_sum / std::max(st.alpha_sum, kDepthAlphaFloor);
    double nn = st.normal_sum.norm();
    out.normal = nn > 1e-12 ? Vec3(st.normal_sum / nn) : Vec3::Zero();
    return out;
}

} // namespace corea
