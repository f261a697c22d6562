// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "corea/gaussian.hpp"
#include "corea/geometry.hpp"
#include "corea/render.hpp"

namespace corea {

/// Per-Gaussian gradient statistics gathered between densification events.
/// The photometric and normal-alignment channels accumulate independently,
/// each with its own contribution count, so their means are comparable even
/// when the two step kinds run at different cadences.
struct DensifyStats {
    std::vector<double> image_grad;    // summed |dL/dmu| from photometric steps
    std::vector<double> normal_grad;   // summed |dL/dmu| from the raw normal loss
    std::vector<int64_t> image_count;  // steps in which the Gaussian contributed
    std::vector<int64_t> normal_count;
    std::vector<double> max_radius;    // largest 3-sigma screen radius seen (px)

    void resize(size_t n);
    void reset(); // zero every accumulator, keep the size
    size_t size() const { return image_grad.size(); }
};

enum class GradSource { Image, Normal };

/// Adds each nonzero position-gradient norm into the tagged accumulator and
/// counts that Gaussian as contributing; zero-gradient entries are untouched.
/// Throws invalid_argument when the gradient set and stats disagree in size.
void accumulate(DensifyStats& stats, const GradientSet& grads, GradSource source);

/// Folds the 3-sigma screen radii of one forward pass into max_radius.
void observe_radii(DensifyStats& stats, const ForwardCache& cache);

struct DensifyThresholds {
    double image = 2e-4;  // mean image-gradient trigger
    double normal = 1e-3; // mean normal-gradient trigger
};

/// Scene indices whose mean image OR mean normal gradient strictly exceeds
/// its threshold. A channel with a zero count never triggers.
std::vector<uint32_t> flag_candidates(const DensifyStats& stats,
                                      const DensifyThresholds& thresholds);

using LossFn = std::function<double(const GaussianScene&)>;

struct SplitProbe {
    SymMat3 matrix;      // symmetrized Hessian estimate over the center
    bool usable = false; // false when any probed loss came back non-finite
};

/// Local curvature of the summed losses with respect to one Gaussian center,
/// probed by central finite differences on a private copy of the scene with
/// step h = 0.1 * min(sigma) (or h_override when positive). Uses 19 loss
/// evaluations; the result is symmetrized. Distinct candidates may be probed
/// concurrently since the caller's scene is never written.
SplitProbe estimate_split_matrix(const GaussianScene& scene, uint32_t index,
                                 const std::vector<LossFn>& losses, double h_override = 0.0);

/// Blend factor between the photometric and normal splitting matrices.
inline constexpr double kDdcAlpha = 0.2;

/// (1 - alpha) * s_img + alpha * s_nrm; alpha must lie in [0, 1].
SymMat3 combine(const SymMat3& s_img, const SymMat3& s_nrm, double alpha);

struct DdcDecision {
    bool split = false;             // the minimum eigenvalue is strictly negative
    Vec3 direction = Vec3::UnitX(); // unit eigenvector of the minimum eigenvalue
};

/// Split along the most negative curvature direction, and only when one
/// exists; the decision is invariant to positive rescaling of the matrix.
DdcDecision ddc_decide(const SymMat3& s_total);

/// Replaces one Gaussian with two children placed at mu +- 0.5 * sigma_dir
/// along `direction`, where sigma_dir is the Gaussian's extent along it;
/// child scales shrink by 1.6 and every other parameter is copied.
void split(GaussianScene& scene, uint32_t index, const Vec3& direction);

/// Duplicates a Gaussian (the classic response for small candidates), placing
/// the copy one gradient step downhill: mu - lr * d_position.
void clone(GaussianScene& scene, uint32_t index, const Vec3& d_position, double lr);

/// Removes Gaussians whose activated opacity falls below min_opacity or whose
/// largest world sigma exceeds max_world_size; returns how many were removed.
size_t prune(GaussianScene& scene, double min_opacity, double max_world_size);

/// One text line per densification event, for ablation logs.
struct DensifyEvent {
    int64_t iteration = 0;
    int64_t candidates = 0;
    int64_t splits = 0;
    int64_t clones = 0;
    int64_t prunes = 0;
    double alpha = kDdcAlpha;
    std::string line() const;
};

} // namespace corea
