// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "corea/camera.hpp"
#include "corea/gaussian.hpp"

#include <string>
#include <vector>

namespace corea {

/// Dense signed-distance lattice over an axis-aligned box. Values live on
/// nodes; queries are trilinear over the enclosing cell, with out-of-bounds
/// points clamped to the boundary cell. The volume-render sharpness s_vr is
/// part of the field state and is checkpointed with it.
class SdfGrid {
public:
    SdfGrid() = default;
    SdfGrid(int nx, int ny, int nz, const Vec3& lo, const Vec3& hi, double init = 1.0);

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nz() const { return nz_; }
    size_t node_count() const { return values_.size(); }
    const Vec3& lo() const { return lo_; }
    const Vec3& hi() const { return hi_; }
    Vec3 spacing() const; // per-axis node distance (world units)

    size_t node_index(int ix, int iy, int iz) const {
        return (size_t(ix) * ny_ + iy) * nz_ + iz;
    }
    Vec3 node_position(int ix, int iy, int iz) const;

    double& value(int ix, int iy, int iz) { return values_[node_index(ix, iy, iz)]; }
    double value(int ix, int iy, int iz) const { return values_[node_index(ix, iy, iz)]; }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    double s_vr() const { return s_vr_; }
    void set_s_vr(double s);

    double sample(const Vec3& p) const;
    /// Analytic gradient of the trilinear interpolant. Piecewise constant per
    /// cell along each axis; faces belong to the lower cell.
    Vec3 gradient(const Vec3& p) const;

    /// Corner footprint of one sample: node indices and interpolation
    /// weights (sample) or weight gradients (gradient), for adjoints.
    struct Stencil {
        size_t node[8];
        double weight[8];
        Vec3 weight_grad[8];
    };
    Stencil stencil(const Vec3& p) const;

    void save(const std::string& path) const;
    static SdfGrid load(const std::string& path);

private:
    int nx_ = 0, ny_ = 0, nz_ = 0;
    Vec3 lo_ = Vec3::Zero(), hi_ = Vec3::Zero();
    double s_vr_ = 20.0;
    std::vector<double> values_;
};

/// Mean (|grad f| - 1)^2 over the sample points; optionally accumulates the
/// exact adjoint into a lattice-sized gradient vector.
double eikonal_loss(const SdfGrid& grid, const std::vector<Vec3>& points,
                    std::vector<double>* d_values = nullptr);

/// Mean squared 6-neighbor discrete Laplacian over the interior lattice nodes
/// of the cells enclosing the sample points (duplicates counted as sampled).
double curvature_loss(const SdfGrid& grid, const std::vector<Vec3>& points,
                      std::vector<double>* d_values = nullptr);

/// One volume-rendered ray segment: n samples t_k spanning [t0, t1],
/// logistic-CDF opacities a_k = max(0, (S(f_k) - S(f_{k+1})) / max(S(f_k),
/// eps)) with S(f) = sigmoid(s_vr * f) over consecutive sample pairs, and
/// front-to-back weights w_k = a_k T_k attached to sample position t_k.
struct SdfRay {
    Vec3 origin = Vec3::Zero();
    Vec3 dir = Vec3::Zero(); // unit
    double t0 = 0.0, t1 = 0.0;
    int samples = 0; // number of field evaluations n

    double alpha = 0.0;   // sum of weights
    double depth_t = 0.0; // weighted mean sample position, 0 when alpha is 0
    bool valid = false;   // alpha > 0.5
    std::vector<double> w; // n-1 weights
    std::vector<double> f; // n sample field values
    std::vector<double> t; // n stratified sample positions (fixed jitter, ascending)
};

inline constexpr int kSdfWindowSamples = 32;
inline constexpr int kSdfFallbackSamples = 64;
inline constexpr double kSdfCdfEps = 1e-6;

SdfRay sdf_render_ray(const SdfGrid& grid, const Vec3& origin, const Vec3& dir, double t0,
                      double t1, int samples);

/// Window of halfwidth delta around a guide depth (ray-parameter units),
/// clipped below to the near plane; kSdfWindowSamples field evaluations.
SdfRay sdf_render_adaptive(const SdfGrid& grid, const Vec3& origin, const Vec3& dir,
                           double center_t, double delta);

/// Coarse full-segment march used when no guide depth exists.
SdfRay sdf_render_fallback(const SdfGrid& grid, const Vec3& origin, const Vec3& dir, double t0,
                           double t1);

/// Adjoint of sdf_render_ray for upstream d(depth_t) and d(alpha); adds into
/// the lattice gradient and the sharpness gradient.
void sdf_render_ray_backward(const SdfGrid& grid, const SdfRay& ray, double d_depth_t,
                             double d_alpha, std::vector<double>& d_values, double& d_s_vr);

struct SdfNormal {
    Vec3 n = Vec3::Zero();
    bool ok = false; // false when the gradient vanishes
};

SdfNormal surface_normal(const SdfGrid& grid, const Vec3& p);

/// Adjoint of surface_normal at fixed p (the point itself is not
/// differentiated through).
void surface_normal_backward(const SdfGrid& grid, const Vec3& p, const Vec3& d_n,
                             std::vector<double>& d_values);

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<uint32_t, 3>> triangles;
};

/// Standard 256-case marching cubes at level `iso` with linear edge
/// interpolation. Triangles are oriented so their normal follows the field
/// gradient (outward for a signed distance field); triangles with area
/// <= 1e-12 are dropped. An all-positive or all-negative field yields an
/// empty mesh.
TriangleMesh marching_cubes(const SdfGrid& grid, double iso = 0.0);

/// Case tables backing marching_cubes, exposed so their internal consistency
/// (each case triangulates exactly the sign-crossing edges) can be audited.
const int (*marching_cubes_edge_corners())[2];
const int8_t (*marching_cubes_triangle_table())[16];

void save_obj(const std::string& path, const TriangleMesh& mesh);

/// Symmetric Chamfer distance: mean of exact nearest-neighbor distances from
/// a to b plus the reverse, halved. Throws invalid_argument on empty input.
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

/// Carves the visual hull of the masks (a node is inside when every camera
/// that sees it projects it into the mask) and converts it into a signed
/// Euclidean distance field; negative inside.
SdfGrid sdf_from_visual_hull(int nx, int ny, int nz, const Vec3& lo, const Vec3& hi,
                             const std::vector<Camera>& cams, const std::vector<Mask>& masks);

} // namespace corea
