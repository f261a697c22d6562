// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "corea/render.hpp"
#include "corea/sdf.hpp"

namespace corea {

/// Everything one camera view contributes to the cross-representation
/// alignment losses. Depths are view depths (camera z), normals are world
/// frame and unit wherever the owning mask is set. The joint mask is the AND
/// of the two branch masks and `joint_count` its population.
struct AlignmentBatch {
    Camera cam;

    // Gaussian branch. `gauss_valid` requires alpha > 0.5, a defined
    // depth-gradient pseudo-normal, and a non-degenerate blended normal:
    // silhouette pixels carry unreliable normals.
    ImageD gauss_depth;
    ImageV3 gauss_normal;        // alpha-blended primitive normals
    ImageV3 gauss_pseudo_normal; // from depth-buffer gradients; detached target
    Mask gauss_valid;

    // SDF branch. One rendered ray per pixel (guided window where the
    // Gaussian depth is valid, coarse full-segment march elsewhere, empty when
    // the ray misses the lattice bounds entirely). `sdf_valid` requires the
    // render valid flag and a non-vanishing field gradient at the hit point.
    ImageD sdf_depth;
    ImageV3 sdf_normal;
    Mask sdf_valid;
    std::vector<SdfRay> rays;    // row-major, width*height entries
    std::vector<Vec3> hit_point; // world hit positions; zero where invalid

    Mask joint;
    int64_t joint_count = 0;

    const SdfRay& ray_at(int x, int y) const { return rays[size_t(y) * cam.width + x]; }
};

struct AlignmentOptions {
    /// Halfwidth of the guided sampling window, in grid cells.
    double window_cells = 4.0;
};

/// Renders the SDF branch against an existing Gaussian forward pass and
/// assembles the batch.
AlignmentBatch build_alignment_batch(const ForwardCache& cache, const SdfGrid& grid,
                                     const AlignmentOptions& opt = {});

struct LossValue {
    double value = 0.0;
    bool empty = false; // no joint pixels; value is 0
};

/// Mean absolute view-depth difference over the joint mask.
LossValue loss_depth(const AlignmentBatch& batch);

/// Mean (1 - cos) between SDF normals and the detached Gaussian
/// pseudo-normals over the joint mask. Throws invalid_argument when either
/// field is not unit length on a joint pixel.
LossValue loss_sdf_normal(const AlignmentBatch& batch);

/// Mean (1 - cos) between the blended Gaussian normals and the detached SDF
/// normals over the joint mask; same unit-length validation.
LossValue loss_gauss_normal(const AlignmentBatch& batch);

/// Mean |f(center)| over the scene: a soft pull of Gaussian centers onto the
/// SDF zero set. When `d_position` is given it is resized and filled with
/// dL/d(center); the lattice is never differentiated here.
double projection_penalty(const GaussianScene& scene, const SdfGrid& grid,
                          std::vector<Vec3>* d_position = nullptr);

/// Loss weights for the SDF-side step. Defaults are the training values.
struct DsaWeights {
    double silhouette = 1.0; // reconstruction: |accumulated weight - mask|
    double eikonal = 0.1;
    double curvature = 0.05;
    double depth = 0.01;  // shared with the Gaussian-side step
    double normal = 0.001; // shared with the Gaussian-side step
};

/// Loss weights for the Gaussian-side step. `depth` also scales the
/// projection penalty.
struct NgaWeights {
    double l1 = 0.8;
    double ssim = 0.2;
    double mask = 0.01;
    double depth_var = 0.01;
    double depth = 0.01;
    double normal = 0.001;
};

struct SdfGradients {
    std::vector<double> d_values; // lattice size
    double d_s_vr = 0.0;
};

/// Points the SDF-side regularizers are evaluated at: a fixed low-discrepancy
/// cover of the lattice bounds plus every surface hit point of the batch.
std::vector<Vec3> alignment_regularizer_points(const AlignmentBatch& batch, const SdfGrid& grid);

struct DsaTerms {
    double silhouette = 0.0;
    double depth = 0.0;
    double normal = 0.0;
    double eikonal = 0.0;
    double curvature = 0.0;
    double total = 0.0;
    bool empty_joint = false; // depth/normal terms skipped, regularizers kept
    int64_t joint_pixels = 0;
};

/// SDF-side alignment step: silhouette reconstruction against the object
/// mask, depth/normal alignment toward the (detached) Gaussian branch, and
/// eikonal/curvature regularizers evaluated at the surface hit points plus a
/// fixed low-discrepancy cover of the lattice bounds. Gradients flow to the
/// lattice values and the sharpness only; hit points and the guide depth are
/// treated as constants.
DsaTerms dsa_step(const AlignmentBatch& batch, const SdfGrid& grid, const Mask& object_mask,
                  const DsaWeights& weights, SdfGradients& grads);

struct NgaTerms {
    double photometric = 0.0; // L1
    double ssim = 0.0;        // 1 - SSIM
    double mask = 0.0;        // binary cross-entropy on accumulated alpha
    double depth_var = 0.0;   // blend depth dispersion over valid pixels
    double depth = 0.0;
    double normal = 0.0;
    double projection = 0.0;
    double total = 0.0;
    bool empty_joint = false;
    int64_t joint_pixels = 0;
};

/// Gaussian-side step: photometric + mask + depth-dispersion terms against
/// the ground truth, depth/normal alignment toward the (detached) SDF branch,
/// and the projection penalty folded under the shared depth weight. `grads`
/// receives the full gradient; `normal_grads` receives the gradient of the
/// normal term alone (densification statistics consume its position part).
/// The lattice is never differentiated.
NgaTerms nga_step(const GaussianScene& scene, const ForwardCache& cache,
                  const AlignmentBatch& batch, const SdfGrid& grid, const ImageRGB& gt_image,
                  const Mask& object_mask, const NgaWeights& weights, GradientSet& grads,
                  GradientSet& normal_grads);

enum class AlignPhase { Sdf, Gaussian, Both };

/// Alternating schedule: even iterations update the SDF, odd the Gaussians;
/// simultaneous mode runs both every iteration.
AlignPhase alternate(int64_t iteration, bool simultaneous = false);

} // namespace corea
