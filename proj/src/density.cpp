// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#include "corea/density.hpp"

#include <cmath>
#include <cstdio>

#include "corea/common.hpp"

namespace corea {

void DensifyStats::resize(size_t n) {
    image_grad.assign(n, 0.0);
    normal_grad.assign(n, 0.0);
    image_count.assign(n, 0);
    normal_count.assign(n, 0);
    max_radius.assign(n, 0.0);
}

void DensifyStats::reset() { resize(size()); }

void accumulate(DensifyStats& stats, const GradientSet& grads, GradSource source) {
    COREA_CHECK_ARG(grads.d_position.size() == stats.size(), "gradient/stats size mismatch");
    std::vector<double>& sum = source == GradSource::Image ? stats.image_grad : stats.normal_grad;
    std::vector<int64_t>& count =
        source == GradSource::Image ? stats.image_count : stats.normal_count;
    for (size_t i = 0; i < stats.size(); ++i) {
        double n = grads.d_position[i].norm();
        if (n > 0.0) {
            sum[i] += n;
            ++count[i];
        }
    }
}

void observe_radii(DensifyStats& stats, const ForwardCache& cache) {
    for (const ProjectedGaussian& pg : cache.projected) {
        COREA_CHECK_ARG(pg.index < stats.size(), "projection/stats size mismatch");
        // Largest eigenvalue of the 2x2 screen covariance.
        double mean = 0.5 * (pg.cov2d(0, 0) + pg.cov2d(1, 1));
        double half = 0.5 * (pg.cov2d(0, 0) - pg.cov2d(1, 1));
        double lmax = mean + std::sqrt(half * half + pg.cov2d(0, 1) * pg.cov2d(0, 1));
        double radius = 3.0 * std::sqrt(std::max(lmax, 0.0));
        stats.max_radius[pg.index] = std::max(stats.max_radius[pg.index], radius);
    }
}

std::vector<uint32_t> flag_candidates(const DensifyStats& stats,
                                      const DensifyThresholds& thresholds) {
    std::vector<uint32_t> out;
    for (size_t i = 0; i < stats.size(); ++i) {
        bool image = stats.image_count[i] > 0 &&
                     stats.image_grad[i] / double(stats.image_count[i]) > thresholds.image;
        bool normal = stats.normal_count[i] > 0 &&
                      stats.normal_grad[i] / double(stats.normal_count[i]) > thresholds.normal;
        if (image || normal) out.push_back(uint32_t(i));
    }
    return out;
}

namespace {

double eval_losses(const GaussianScene& scene, const std::vector<LossFn>& losses) {
    double sum = 0.0;
    for (const LossFn& f : losses) sum += f(scene);
    return sum;
}

} // namespace

SplitProbe estimate_split_matrix(const GaussianScene& scene, uint32_t index,
                                 const std::vector<LossFn>& losses, double h_override) {
    COREA_CHECK_ARG(index < scene.size(), "index out of range");
    COREA_CHECK_ARG(!losses.empty(), "at least one loss is required");
    const double h = h_override > 0.0 ? h_override : 0.1 * scene[index].scale().minCoeff();

    GaussianScene probe = scene; // private copy: the caller's scene stays untouched
    const Vec3 mu = probe[index].position;
    auto eval = [&](const Vec3& offset) {
        probe[index].position = mu + offset;
        probe.bump_revision(); // keep any derived caches honest about the move
        return eval_losses(probe, losses);
    };

    const double f0 = eval(Vec3::Zero());
    double fp[3], fm[3];
    for (int a = 0; a < 3; ++a) {
        fp[a] = eval(h * Vec3::Unit(a));
        fm[a] = eval(-h * Vec3::Unit(a));
    }
    Mat3 hess = Mat3::Zero();
    for (int a = 0; a < 3; ++a) hess(a, a) = (fp[a] - 2.0 * f0 + fm[a]) / (h * h);
    for (int a = 0; a < 3; ++a)
        for (int c = a + 1; c < 3; ++c) {
            Vec3 ea = h * Vec3::Unit(a), ec = h * Vec3::Unit(c);
            double v = (eval(ea + ec) - eval(ea - ec) - eval(-ea + ec) + eval(-ea - ec)) /
                       (4.0 * h * h);
            hess(a, c) = hess(c, a) = v;
        }

    SplitProbe out;
    out.matrix = SymMat3::from_matrix(hess);
    out.usable = hess.allFinite();
    return out;
}

SymMat3 combine(const SymMat3& s_img, const SymMat3& s_nrm, double alpha) {
    COREA_CHECK_ARG(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
    return s_img * (1.0 - alpha) + s_nrm * alpha;
}

DdcDecision ddc_decide(const SymMat3& s_total) {
    COREA_CHECK_ARG(s_total.to_matrix().allFinite(), "matrix must be finite");
    EigenPair min = sym3_min_eig(s_total);
    DdcDecision d;
    d.split = min.value < 0.0;
    d.direction = min.vector;
    return d;
}

void split(GaussianScene& scene, uint32_t index, const Vec3& direction) {
    COREA_CHECK_ARG(index < scene.size(), "index out of range");
    COREA_CHECK_ARG(std::abs(direction.norm() - 1.0) < 1e-6, "direction must be unit");
    COREA_CHECK_STATE(!scene.geometry_frozen(), "scene geometry is frozen");

    const GaussianPrimitive parent = scene[index];
    SymMat3 cov = covariance_from(parent.scale(), parent.rotation);
    double sigma_dir = std::sqrt(direction.dot(cov.to_matrix() * direction));

    GaussianPrimitive child = parent;
    child.log_scale -= Vec3::Constant(std::log(1.6));
    scene.remove({index});
    child.position = parent.position + 0.5 * sigma_dir * direction;
    scene.add(child);
    child.position = parent.position - 0.5 * sigma_dir * direction;
    scene.add(child);
}

void clone(GaussianScene& scene, uint32_t index, const Vec3& d_position, double lr) {
    COREA_CHECK_ARG(index < scene.size(), "index out of range");
    COREA_CHECK_STATE(!scene.geometry_frozen(), "scene geometry is frozen");
    GaussianPrimitive copy = scene[index];
    copy.position -= lr * d_position;
    scene.add(copy);
}

size_t prune(GaussianScene& scene, double min_opacity, double max_world_size) {
    COREA_CHECK_STATE(!scene.geometry_frozen(), "scene geometry is frozen");
    std::vector<uint32_t> doomed;
    for (size_t i = 0; i < scene.size(); ++i)
        if (scene[i].opacity() < min_opacity || scene[i].scale().maxCoeff() > max_world_size)
            doomed.push_back(uint32_t(i));
    scene.remove(doomed);
    return doomed.size();
}

std::string DensifyEvent::line() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "densify iter=%lld candidates=%lld splits=%lld clones=%lld prunes=%lld "
                  "alpha=%.3f",
                  static_cast<long long>(iteration), static_cast<long long>(candidates),
                  static_cast<long long>(splits), static_cast<long long>(clones),
                  static_cast<long long>(prunes), alpha);
    return std::string(buf);
}

} // namespace corea
