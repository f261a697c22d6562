// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "corea/camera.hpp"
#include "corea/gaussian.hpp"

#include <optional>

namespace corea {

/// Alpha contributions below this never enter the blend; transmittance below
/// it terminates a pixel. Both sit at the double-precision noise floor so the
/// truncation cannot perturb finite-difference gradient checks.
inline constexpr double kAlphaCutoff = 1e-12;
inline constexpr double kTransmittanceFloor = 1e-12;
inline constexpr double kAlphaClamp = 0.999;
inline constexpr double kNearClip = 1e-3;
inline constexpr double kCovarianceDilation = 0.3;
inline constexpr double kDepthAlphaFloor = 1e-6;
inline constexpr double kValidAlpha = 0.5;

struct ProjectedGaussian {
    uint32_t index = 0;       // scene list position
    uint64_t id = 0;          // stable identity for depth-tie ordering
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    Mat2 cov_inv = Mat2::Identity();
    double z = 0.0;           // view depth of the center
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    Vec3 normal = Vec3::Zero();
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1; // inclusive pixel bounds, empty if x1 < x0
    double radius3 = 0.0;     // 3-sigma screen radius (stats)
    ShEval sh_eval;           // basis cache for backward
    Vec3 view_dir = Vec3::Zero();
};

/// EWA projection of one Gaussian. Returns nullopt when the center is closer
/// than the near clip or the footprint misses the image. Throws
/// numerical_error if the screen covariance fails to be positive definite.
std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& g, const Camera& cam,
                                                  const Vec3* color_override = nullptr);

struct RenderBuffers {
    ImageRGB color;
    ImageD depth;   // alpha-weighted mean view depth, alpha floored at 1e-6
    ImageD alpha;   // accumulated blend weight
    ImageV3 normal; // blended, renormalized; zero where degenerate
    Mask valid;     // alpha > 0.5
};

struct PixelRecord {
    uint32_t proj;  // index into ForwardCache::projected
    double gauss;   // unclamped kernel value exp(-q/2)
};

struct RenderOptions {
    Vec3 background = Vec3::Zero();
    /// When set, per-Gaussian blend colors come from this array (scene order)
    /// instead of the view-dependent SH evaluation.
    const std::vector<Vec3>* color_override = nullptr;
};

/// Forward render plus everything backward needs: survivors of projection,
/// per-pixel contribution records in blend order, and the buffers.
struct ForwardCache {
    Camera cam;
    Vec3 background = Vec3::Zero();
    bool used_override = false;
    RenderBuffers buffers;
    std::vector<ProjectedGaussian> projected;
    std::vector<std::vector<PixelRecord>> records; // height*width entries
    uint64_t scene_revision = 0;

    const std::vector<PixelRecord>& records_at(int x, int y) const {
        return records[size_t(y) * cam.width + x];
    }
};

ForwardCache render_forward(const GaussianScene& scene, const Camera& cam,
                            const RenderOptions& opt = {});

/// Per-buffer upstream gradients; empty images are treated as zero. d_depth_var
/// weights the gradient of the per-pixel alpha-normalized depth variance.
struct Upstream {
    ImageRGB d_color;
    ImageD d_depth;
    ImageD d_alpha;
    ImageV3 d_normal;
    ImageD d_depth_var;
};

/// Flat per-primitive gradients in scene list order.
struct GradientSet {
    std::vector<Vec3> d_position;
    std::vector<std::array<double, 4>> d_rotation;
    std::vector<Vec3> d_log_scale;
    std::vector<double> d_opacity_logit;
    std::vector<std::array<Vec3, kShCoeffs>> d_sh;
    std::vector<Vec3> d_color_override; // filled when the forward pass used overrides

    void resize(size_t n, bool with_override);
    void accumulate(const GradientSet& o, double weight = 1.0);
    bool all_finite() const;
};

/// Analytic adjoint of render_forward for the given upstream. Throws
/// invalid_state if the scene was structurally modified since the forward
/// pass, numerical_error if a non-finite gradient is produced.
GradientSet render_backward(const GaussianScene& scene, const ForwardCache& cache,
                            const Upstream& upstream);

/// Per-pixel depth variance of the blend, Var = sum_k w_k (z_k - D)^2 / max(A, 1e-6).
/// Zero where there are no contributions.
ImageD depth_variance(const ForwardCache& cache);

struct PseudoNormals {
    ImageV3 normal; // camera frame, unit where valid
    Mask valid;
};

/// Screen-space normals from a depth buffer: unproject pixel neighborhoods,
/// cross the image-axis tangents, orient toward the camera. Pixels without a
/// valid neighbor along each axis are flagged invalid.
PseudoNormals pseudo_normals(const ImageD& depth, const Mask& valid, const Camera& cam);

/// One replacement probe for density control: drop one scene Gaussian from
/// the cached blend and insert pre-projected stand-ins.
struct ProbeOverride {
    int64_t remove_index = -1;
    std::vector<ProjectedGaussian> add;
};

struct ProbePixel {
    Vec3 color = Vec3::Zero();
    double depth = 0.0;
    double alpha = 0.0;
    Vec3 normal = Vec3::Zero();
};

/// Re-blends a single pixel from cached records under an override. Cost is
/// O(record count); the full image is never touched.
ProbePixel blend_pixel(const ForwardCache& cache, int x, int y, const ProbeOverride& ov);

} // namespace corea
