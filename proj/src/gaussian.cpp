// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#include "corea/gaussian.hpp"

#include "corea/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>

namespace corea {

namespace {

constexpr double kSh0 = 0.28209479177387814;
constexpr double kSh1 = 0.4886025119029199;
constexpr double kSh2a = 1.0925484305920792;  // xy, yz, xz
constexpr double kSh2b = 0.31539156525252005; // 3z^2 - 1
constexpr double kSh2c = 0.5462742152960396;  // x^2 - y^2

std::array<double, kShCoeffs> sh_basis(const Vec3& d) {
    double x = d.x(), y = d.y(), z = d.z();
    return {kSh0,
            kSh1 * y,
            kSh1 * z,
            kSh1 * x,
            kSh2a * x * y,
            kSh2a * y * z,
            kSh2b * (3.0 * z * z - 1.0),
            kSh2a * x * z,
            kSh2c * (x * x - y * y)};
}

} // namespace

std::array<Vec3, kShCoeffs> sh_basis_gradient(const Vec3& d) {
    double x = d.x(), y = d.y(), z = d.z();
    return {Vec3::Zero(),
            Vec3(0.0, kSh1, 0.0),
            Vec3(0.0, 0.0, kSh1),
            Vec3(kSh1, 0.0, 0.0),
            Vec3(kSh2a * y, kSh2a * x, 0.0),
            Vec3(0.0, kSh2a * z, kSh2a * y),
            Vec3(0.0, 0.0, kSh2b * 6.0 * z),
            Vec3(kSh2a * z, 0.0, kSh2a * x),
            Vec3(kSh2c * 2.0 * x, -kSh2c * 2.0 * y, 0.0)};
}

ShEval evaluate_sh_color(const GaussianPrimitive& g, const Vec3& dir) {
    COREA_CHECK_ARG(dir.allFinite(), "direction must be finite");
    ShEval out;
    out.basis = sh_basis(dir);
    Vec3 c = Vec3::Zero();
    for (int k = 0; k < kShCoeffs; ++k) c += out.basis[k] * g.sh[k];
    for (int ch = 0; ch < 3; ++ch) {
        if (c[ch] < 0.0) {
            out.clamped[ch] = true;
            c[ch] = 0.0;
        }
    }
    out.color = c;
    return out;
}

std::array<double, kIndirectCoeffs> indirect_basis(const Vec3& d) {
    return {kSh0, kSh1 * d.y(), kSh1 * d.z(), kSh1 * d.x()};
}

Vec3 evaluate_indirect(const GaussianPrimitive& g, const Vec3& dir,
                       std::array<bool, 3>* clamped) {
    auto b = indirect_basis(dir);
    Vec3 c = Vec3::Zero();
    for (int k = 0; k < kIndirectCoeffs; ++k) c += b[k] * g.indirect_sh[k];
    for (int ch = 0; ch < 3; ++ch) {
        bool cl = c[ch] < 0.0;
        if (clamped) (*clamped)[ch] = cl;
        if (cl) c[ch] = 0.0;
    }
    return c;
}

Vec3 gaussian_normal(const GaussianPrimitive& g, const Vec3& view_dir) {
    COREA_CHECK_ARG(view_dir.allFinite() && view_dir.norm() > 1e-12,
                    "view direction must be nonzero");
    Vec3 s = g.log_scale;
    int axis = 0;
    if (s.y() < s[axis]) axis = 1;
    if (s.z() < s[axis]) axis = 2;
    Vec3 n = quat_to_rotation(g.rotation).col(axis);
    if (n.dot(view_dir) > 0.0) n = -n;
    return n;
}

uint64_t GaussianScene::add(GaussianPrimitive g) {
    COREA_CHECK_STATE(!frozen_, "geometry is frozen");
    g.id = next_id_++;
    prims_.push_back(g);
    ++revision_;
    return g.id;
}

void GaussianScene::remove(const std::vector<uint32_t>& indices) {
    COREA_CHECK_STATE(!frozen_, "geometry is frozen");
    if (indices.empty()) return;
    std::vector<uint8_t> drop(prims_.size(), 0);
    for (uint32_t i : indices) {
        COREA_CHECK_ARG(i < prims_.size(), "remove index out of range");
        drop[i] = 1;
    }
    size_t w = 0;
    for (size_t r = 0; r < prims_.size(); ++r)
        if (!drop[r]) prims_[w++] = prims_[r];
    prims_.resize(w);
    ++revision_;
}

Aabb GaussianScene::bounds() const {
    Aabb b;
    for (const auto& g : prims_) b.expand(g.position);
    return b;
}

const SpatialHash& GaussianScene::spatial_hash() const {
    if (hash_revision_ != revision_) {
        std::vector<Vec3> pts;
        std::vector<double> radii;
        pts.reserve(prims_.size());
        radii.reserve(prims_.size());
        double mean_r = 0.0;
        for (const auto& g : prims_) {
            pts.push_back(g.position);
            double r = 3.0 * g.scale().maxCoeff();
            radii.push_back(r);
            mean_r += r;
        }
        double cell = prims_.empty() ? 1.0 : std::max(1e-6, 2.0 * mean_r / double(prims_.size()));
        Aabb b = bounds();
        if (!b.empty()) cell = std::max(cell, b.diagonal() / 128.0);
        hash_.build(pts, radii, cell);
        hash_revision_ = revision_;
    }
    return hash_;
}

Eigen::Vector3i SpatialHash::cell_of(const Vec3& p) const {
    // Clamp into the key packing range; pulling far indices inward keeps the
    // ring search's distance bounds one-sided and valid.
    const double lim = double((1 << 20) - 2);
    auto idx = [&](double v) { return int(std::clamp(std::floor(v / cell_), -lim, lim)); };
    return Eigen::Vector3i(idx(p.x()), idx(p.y()), idx(p.z()));
}

int64_t SpatialHash::key_of(const Eigen::Vector3i& c) {
    // 21 bits per axis, offset to stay positive.
    const int64_t off = 1 << 20;
    return ((int64_t(c.x()) + off) << 42) | ((int64_t(c.y()) + off) << 21) |
           (int64_t(c.z()) + off);
}

void SpatialHash::build(const std::vector<Vec3>& points, const std::vector<double>& radii,
                        double cell_size) {
    COREA_CHECK_ARG(cell_size > 0.0, "cell size must be positive");
    COREA_CHECK_ARG(radii.size() == points.size(), "radius count mismatch");
    cell_ = cell_size;
    points_ = points;
    cells_.clear();
    cells_min_ = Eigen::Vector3i::Constant(INT32_MAX);
    cells_max_ = Eigen::Vector3i::Constant(INT32_MIN);
    for (uint32_t i = 0; i < points.size(); ++i) {
        Vec3 r = Vec3::Constant(radii[i]);
        Eigen::Vector3i lo = cell_of(points[i] - r);
        Eigen::Vector3i hi = cell_of(points[i] + r);
        cells_min_ = cells_min_.cwiseMin(lo);
        cells_max_ = cells_max_.cwiseMax(hi);
        for (int x = lo.x(); x <= hi.x(); ++x)
            for (int y = lo.y(); y <= hi.y(); ++y)
                for (int z = lo.z(); z <= hi.z(); ++z)
                    cells_[key_of({x, y, z})].push_back(i);
    }
}

std::vector<uint32_t> SpatialHash::knn(const Vec3& p, int k, int64_t exclude) const {
    COREA_CHECK_ARG(k >= 1, "k must be >= 1");
    if (points_.empty()) return {};
    // Exact expanding-ring search over the center cells. Entries were fat-
    // inserted, so dedupe by best-distance map semantics: gather candidates
    // per ring, track the k best, stop once the next ring cannot improve.
    // Rings outside the occupied cell box hold nothing, so the scan starts
    // at the first ring touching it, clips to it, and ends when past it.
    std::vector<std::pair<double, uint32_t>> best;
    Eigen::Vector3i c0 = cell_of(p);
    int ring_min = 0, ring_max = 0;
    for (int a = 0; a < 3; ++a) {
        ring_min = std::max({ring_min, cells_min_[a] - c0[a], c0[a] - cells_max_[a]});
        ring_max = std::max({ring_max, std::abs(cells_min_[a] - c0[a]),
                             std::abs(cells_max_[a] - c0[a])});
    }
    auto consider = [&](uint32_t idx) {
        if (int64_t(idx) == exclude) return;
        double d2 = (points_[idx] - p).squaredNorm();
        best.emplace_back(d2, idx);
    };
    std::vector<uint8_t> seen(points_.size(), 0);
    for (int ring = ring_min; ring <= ring_max; ++ring) {
        for (int x = std::max(c0.x() - ring, cells_min_.x());
             x <= std::min(c0.x() + ring, cells_max_.x()); ++x) {
            for (int y = std::max(c0.y() - ring, cells_min_.y());
                 y <= std::min(c0.y() + ring, cells_max_.y()); ++y) {
                for (int z = std::max(c0.z() - ring, cells_min_.z());
                     z <= std::min(c0.z() + ring, cells_max_.z()); ++z) {
                    if (std::max({std::abs(x - c0.x()), std::abs(y - c0.y()),
                                  std::abs(z - c0.z())}) != ring)
                        continue;
                    auto it = cells_.find(key_of({x, y, z}));
                    if (it == cells_.end()) continue;
                    for (uint32_t idx : it->second) {
                        if (!seen[idx]) {
                            seen[idx] = 1;
                            consider(idx);
                        }
                    }
                }
            }
        }
        std::sort(best.begin(), best.end());
        if (int(best.size()) >= k) {
            // Safe ring distance: points outside ring r are at least
            // (r) * cell away (Chebyshev bound).
            double safe = double(ring) * cell_;
            if (best[k - 1].first <= safe * safe) break;
        }
    }
    std::vector<uint32_t> out;
    for (int i = 0; i < int(best.size()) && i < k; ++i) out.push_back(best[i].second);
    return out;
}

std::vector<uint32_t> SpatialHash::ray_candidates(const Vec3& origin, const Vec3& dir,
                                                  double t_max) const {
    std::vector<uint32_t> out;
    if (points_.empty() || !(t_max > 0.0)) return out;
    std::vector<uint8_t> seen(points_.size(), 0);
    // Conservative DDA: march in half-cell steps and take the 3x3x3 block
    // around each visited cell (entries are fat-inserted by their radius).
    double step = 0.5 * cell_;
    int64_t nsteps = int64_t(t_max / step) + 1;
    Eigen::Vector3i prev(INT32_MIN, INT32_MIN, INT32_MIN);
    for (int64_t s = 0; s <= nsteps; ++s) {
        double t = std::min(t_max, s * step);
        Eigen::Vector3i c = cell_of(origin + t * dir);
        if (c == prev) continue;
        prev = c;
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    auto it = cells_.find(key_of({c.x() + dx, c.y() + dy, c.z() + dz}));
                    if (it == cells_.end()) continue;
                    for (uint32_t idx : it->second)
                        if (!seen[idx]) {
                            seen[idx] = 1;
                            out.push_back(idx);
                        }
                }
    }
    std::sort(out.begin(), out.end());
    return out;
}

GaussianScene init_from_points(const std::vector<Vec3>& points, const std::vector<Vec3>& colors) {
    COREA_CHECK_ARG(!points.empty(), "point cloud is empty");
    COREA_CHECK_ARG(points.size() == colors.size(), "point/color count mismatch");
    for (const auto& p : points) COREA_CHECK_ARG(p.allFinite(), "points must be finite");
    for (const auto& c : colors) COREA_CHECK_ARG(c.allFinite(), "colors must be finite");

    size_t n = points.size();
    Aabb b;
    for (const auto& p : points) b.expand(p);
    double fallback = 0.01 * std::max(1.0, b.diagonal());

    // Mean distance to the 3 nearest neighbors, brute force below a size
    // cutoff and hash-accelerated above it.
    std::vector<double> nn_dist(n, 0.0);
    auto mean3 = [&](size_t i, const std::vector<uint32_t>& idx) {
        double acc = 0.0;
        int cnt = 0;
        for (uint32_t j : idx) {
            acc += (points[j] - points[i]).norm();
            ++cnt;
        }
        return cnt ? acc / cnt : 0.0;
    };
    if (n <= 2000) {
        for (size_t i = 0; i < n; ++i) {
            std::vector<std::pair<double, uint32_t>> d;
            d.reserve(n - 1);
            for (size_t j = 0; j < n; ++j)
                if (j != i) d.emplace_back((points[j] - points[i]).squaredNorm(), uint32_t(j));
            std::partial_sort(d.begin(), d.begin() + std::min<size_t>(3, d.size()), d.end());
            double acc = 0.0;
            size_t k = std::min<size_t>(3, d.size());
            for (size_t t = 0; t < k; ++t) acc += std::sqrt(d[t].first);
            nn_dist[i] = k ? acc / double(k) : 0.0;
        }
    } else {
        SpatialHash hash;
        std::vector<double> radii(n, 0.0);
        hash.build(points, radii, std::max(1e-9, b.diagonal() / 64.0));
        for (size_t i = 0; i < n; ++i)
            nn_dist[i] = mean3(i, hash.knn(points[i], 3, int64_t(i)));
    }

    GaussianScene scene;
    for (size_t i = 0; i < n; ++i) {
        GaussianPrimitive g;
        g.position = points[i];
        double s = nn_dist[i] > 1e-12 ? nn_dist[i] : fallback;
        g.log_scale = Vec3::Constant(std::log(s));
        g.opacity_logit = logit(0.1);
        Vec3 c = colors[i].cwiseMax(0.0).cwiseMin(1.0);
        g.sh[0] = c / kSh0;
        Vec3 ca = c.cwiseMax(1e-4).cwiseMin(1.0 - 1e-4);
        g.albedo_logit = Vec3(logit(ca.x()), logit(ca.y()), logit(ca.z()));
        g.roughness_raw = logit((0.5 - kMinRoughness) / (1.0 - kMinRoughness));
        scene.add(g);
    }
    return scene;
}

// --- checkpoint format -------------------------------------------------
//
// Little-endian binary. Header: magic "CORG", version u32, count u64,
// SH degree u32, next-id u64. Then per primitive, in list order: id u64
// followed by 54 doubles (position 3, rotation wxyz 4, log-scale 3,
// opacity logit 1, SH 27, albedo logit 3, roughness 1, indirect SH 12).

namespace {
constexpr uint32_t kCorgVersion = 1;
}

void GaussianScene::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path + " for writing");
    ByteWriter w(f);
    w.magic("CORG");
    w.u32(kCorgVersion);
    w.u64(prims_.size());
    w.u32(uint32_t(kShDegree));
    w.u64(next_id_);
    for (const auto& g : prims_) {
        w.u64(g.id);
        w.vec3(g.position);
        w.f64(g.rotation.w);
        w.f64(g.rotation.x);
        w.f64(g.rotation.y);
        w.f64(g.rotation.z);
        w.vec3(g.log_scale);
        w.f64(g.opacity_logit);
        for (const auto& c : g.sh) w.vec3(c);
        w.vec3(g.albedo_logit);
        w.f64(g.roughness_raw);
        for (const auto& c : g.indirect_sh) w.vec3(c);
    }
    if (!f) throw io_error("write failed: " + path);
}

GaussianScene GaussianScene::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    ByteReader r(f, path);
    r.magic("CORG");
    uint32_t version = r.u32();
    if (version != kCorgVersion)
        throw io_error(path + ": unsupported scene checkpoint version " + std::to_string(version));
    uint64_t count = r.u64();
    uint32_t degree = r.u32();
    if (degree != uint32_t(kShDegree))
        throw io_error(path + ": unsupported SH degree " + std::to_string(degree));
    GaussianScene scene;
    scene.next_id_ = r.u64();
    scene.prims_.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        GaussianPrimitive g;
        g.id = r.u64();
        g.position = r.vec3();
        g.rotation.w = r.f64();
        g.rotation.x = r.f64();
        g.rotation.y = r.f64();
        g.rotation.z = r.f64();
        g.log_scale = r.vec3();
        g.opacity_logit = r.f64();
        for (auto& c : g.sh) c = r.vec3();
        g.albedo_logit = r.vec3();
        g.roughness_raw = r.f64();
        for (auto& c : g.indirect_sh) c = r.vec3();
        scene.prims_.push_back(g);
    }
    return scene;
}

} // namespace corea
