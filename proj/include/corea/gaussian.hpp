// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "corea/geometry.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace corea {

inline constexpr int kShDegree = 2;
inline constexpr int kShCoeffs = (kShDegree + 1) * (kShDegree + 1); // 9
inline constexpr int kIndirectCoeffs = 4;                           // degree 1
inline constexpr double kMinRoughness = 0.04;

/// One relightable Gaussian. Storage is the unconstrained optimizer space;
/// activations (exp / sigmoid / normalization) are applied by the accessors.
struct GaussianPrimitive {
    uint64_t id = 0;
    Vec3 position = Vec3::Zero();
    Quaternion rotation;                 // unnormalized storage
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    std::array<Vec3, kShCoeffs> sh;      // view-dependent radiance, RGB per coeff
    Vec3 albedo_logit = Vec3::Zero();
    double roughness_raw = 0.0;
    std::array<Vec3, kIndirectCoeffs> indirect_sh; // local incident light, RGB

    GaussianPrimitive() {
        // Eigen vectors are left uninitialized by value-init, so {} on the
        // arrays would not produce zeros.
        sh.fill(Vec3::Zero());
        indirect_sh.fill(Vec3::Zero());
    }

    Vec3 scale() const {
        return Vec3(std::exp(log_scale.x()), std::exp(log_scale.y()), std::exp(log_scale.z()));
    }
    double opacity() const { return sigmoid(opacity_logit); }
    Vec3 albedo() const {
        return Vec3(sigmoid(albedo_logit.x()), sigmoid(albedo_logit.y()), sigmoid(albedo_logit.z()));
    }
    double roughness() const { return kMinRoughness + (1.0 - kMinRoughness) * sigmoid(roughness_raw); }
};

struct Aabb {
    Vec3 min = Vec3::Constant(std::numeric_limits<double>::max());
    Vec3 max = Vec3::Constant(std::numeric_limits<double>::lowest());

    void expand(const Vec3& p) {
        min = min.cwiseMin(p);
        max = max.cwiseMax(p);
    }
    bool empty() const { return min.x() > max.x(); }
    Vec3 extent() const { return empty() ? Vec3::Zero() : Vec3(max - min); }
    double diagonal() const { return extent().norm(); }
};

/// Uniform grid over points; supports exact k-nearest-neighbor queries and
/// conservative candidate gathering along rays (entries are inserted into
/// every cell their radius overlaps).
class SpatialHash {
public:
    void build(const std::vector<Vec3>& points, const std::vector<double>& radii,
               double cell_size);

    /// Indices of the k nearest points to `p`, excluding `exclude` (pass a
    /// negative value to keep all). Exact; ties broken by index.
    std::vector<uint32_t> knn(const Vec3& p, int k, int64_t exclude = -1) const;

    /// Superset of entries whose inserted radius can reach the ray segment
    /// [0, t_max] from `origin` along unit `dir`. Sorted, deduplicated.
    std::vector<uint32_t> ray_candidates(const Vec3& origin, const Vec3& dir, double t_max) const;

    double cell_size() const { return cell_; }
    bool empty() const { return points_.empty(); }

private:
    double cell_ = 1.0;
    std::vector<Vec3> points_;
    std::unordered_map<int64_t, std::vector<uint32_t>> cells_;
    // Bounding box of occupied cells: ring searches clip to it so queries
    // far from the data stay cheap.
    Eigen::Vector3i cells_min_ = Eigen::Vector3i::Zero();
    Eigen::Vector3i cells_max_ = Eigen::Vector3i::Zero();
    Eigen::Vector3i cell_of(const Vec3& p) const;
    static int64_t key_of(const Eigen::Vector3i& c);
};

/// Ordered Gaussian collection. Structural edits go through add/remove so the
/// revision counter can invalidate cached render state, and so identifiers
/// stay unique across splits and clones.
class GaussianScene {
public:
    std::vector<GaussianPrimitive>& prims() { return prims_; }
    const std::vector<GaussianPrimitive>& prims() const { return prims_; }
    size_t size() const { return prims_.size(); }
    const GaussianPrimitive& operator[](size_t i) const { return prims_[i]; }
    GaussianPrimitive& operator[](size_t i) { return prims_[i]; }

    uint64_t add(GaussianPrimitive g); // assigns a fresh id, returns it
    void remove(const std::vector<uint32_t>& indices);

    uint64_t revision() const { return revision_; }
    void bump_revision() { ++revision_; }
    uint64_t next_id() const { return next_id_; }

    bool geometry_frozen() const { return frozen_; }
    void set_geometry_frozen(bool f) { frozen_ = f; }

    Aabb bounds() const;

    /// Hash over centers with per-primitive 3-sigma radii; rebuilt on demand.
    const SpatialHash& spatial_hash() const;

    void save(const std::string& path) const;
    static GaussianScene load(const std::string& path);

private:
    std::vector<GaussianPrimitive> prims_;
    uint64_t next_id_ = 0;
    uint64_t revision_ = 0;
    bool frozen_ = false;
    mutable SpatialHash hash_;
    mutable uint64_t hash_revision_ = ~0ull;
};

struct ShEval {
    Vec3 color = Vec3::Zero();                       // clamped at 0 per channel
    std::array<bool, 3> clamped = {false, false, false};
    std::array<double, kShCoeffs> basis{};           // basis values at dir
};

/// Radiance of the view-dependent SH expansion in unit direction `dir`,
/// clamped at 0 from below. Basis values are returned for backward use.
ShEval evaluate_sh_color(const GaussianPrimitive& g, const Vec3& dir);

/// d(basis_k)/d(dir) for the degree-2 real SH basis (unnormalized direction
/// handling is the caller's job).
std::array<Vec3, kShCoeffs> sh_basis_gradient(const Vec3& dir);

std::array<double, kIndirectCoeffs> indirect_basis(const Vec3& dir);

/// Indirect incident radiance l_i(dir), clamped at 0 per channel.
Vec3 evaluate_indirect(const GaussianPrimitive& g, const Vec3& dir,
                       std::array<bool, 3>* clamped = nullptr);

/// Geometric normal: the rotated shortest-scale axis, sign-flipped to face
/// the camera (dot(normal, view_dir) <= 0 for view_dir pointing at the
/// Gaussian). Ties on the shortest axis break toward the lower index.
Vec3 gaussian_normal(const GaussianPrimitive& g, const Vec3& view_dir);

/// Seeds a scene from a point cloud: isotropic scale from the mean distance
/// to the 3 nearest neighbors (1% of the unit bound as a degenerate-cloud
/// fallback), opacity 0.1, SH DC term matching `colors`, albedo = color,
/// roughness 0.5, zero indirect light.
GaussianScene init_from_points(const std::vector<Vec3>& points, const std::vector<Vec3>& colors);

} // namespace corea
