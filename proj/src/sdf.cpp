// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#include "corea/sdf.hpp"

#include "corea/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <unordered_set>

namespace corea {

SdfGrid::SdfGrid(int nx, int ny, int nz, const Vec3& lo, const Vec3& hi, double init)
    : nx_(nx), ny_(ny), nz_(nz), lo_(lo), hi_(hi) {
    COREA_CHECK_ARG(nx >= 2 && ny >= 2 && nz >= 2, "grid resolution must be >= 2 per axis");
    COREA_CHECK_ARG(lo.allFinite() && hi.allFinite(), "grid bounds must be finite");
    COREA_CHECK_ARG((hi - lo).minCoeff() > 0.0, "grid bounds must be nondegenerate");
    values_.assign(size_t(nx) * ny * nz, init);
}

Vec3 SdfGrid::spacing() const {
    return Vec3((hi_.x() - lo_.x()) / (nx_ - 1), (hi_.y() - lo_.y()) / (ny_ - 1),
                (hi_.z() - lo_.z()) / (nz_ - 1));
}

Vec3 SdfGrid::node_position(int ix, int iy, int iz) const {
    Vec3 h = spacing();
    return lo_ + Vec3(ix * h.x(), iy * h.y(), iz * h.z());
}

void SdfGrid::set_s_vr(double s) {
    COREA_CHECK_ARG(std::isfinite(s) && s > 0.0, "sharpness must be positive");
    s_vr_ = s;
}

SdfGrid::Stencil SdfGrid::stencil(const Vec3& p) const {
    COREA_CHECK_STATE(!values_.empty(), "grid is empty");
    Vec3 h = spacing();
    int cell[3];
    double u[3];
    const int n[3] = {nx_, ny_, nz_};
    for (int a = 0; a < 3; ++a) {
        double t = (p[a] - lo_[a]) / h[a];
        t = std::clamp(t, 0.0, double(n[a] - 1));
        // ceil(t)-1 keeps faces owned by the lower cell, so the gradient is
        // taken from the side a point on a face belongs to.
        int c = std::clamp(int(std::ceil(t)) - 1, 0, n[a] - 2);
        cell[a] = c;
        u[a] = t - c;
    }
    Stencil st;
    for (int i = 0; i < 8; ++i) {
        int dx = i & 1, dy = (i >> 1) & 1, dz = (i >> 2) & 1;
        double wx = dx ? u[0] : 1.0 - u[0];
        double wy = dy ? u[1] : 1.0 - u[1];
        double wz = dz ? u[2] : 1.0 - u[2];
        double sx = (dx ? 1.0 : -1.0) / h.x();
        double sy = (dy ? 1.0 : -1.0) / h.y();
        double sz = (dz ? 1.0 : -1.0) / h.z();
        st.node[i] = node_index(cell[0] + dx, cell[1] + dy, cell[2] + dz);
        st.weight[i] = wx * wy * wz;
        st.weight_grad[i] = Vec3(sx * wy * wz, wx * sy * wz, wx * wy * sz);
    }
    return st;
}

double SdfGrid::sample(const Vec3& p) const {
    Stencil st = stencil(p);
    double v = 0.0;
    for (int i = 0; i < 8; ++i) v += st.weight[i] * values_[st.node[i]];
    return v;
}

Vec3 SdfGrid::gradient(const Vec3& p) const {
    Stencil st = stencil(p);
    Vec3 g = Vec3::Zero();
    for (int i = 0; i < 8; ++i) g += st.weight_grad[i] * values_[st.node[i]];
    return g;
}

void SdfGrid::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path + " for writing");
    ByteWriter w(f);
    w.magic("CSDF");
    w.u32(1);
    w.u32(uint32_t(nx_));
    w.u32(uint32_t(ny_));
    w.u32(uint32_t(nz_));
    w.f64(s_vr_);
    w.vec3(lo_);
    w.vec3(hi_);
    w.f64_array(values_.data(), values_.size());
    if (!f) throw io_error("failed writing " + path);
}

SdfGrid SdfGrid::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    ByteReader r(f, path);
    r.magic("CSDF");
    uint32_t version = r.u32();
    if (version != 1) throw io_error(path + ": unsupported grid version");
    uint32_t nx = r.u32(), ny = r.u32(), nz = r.u32();
    if (nx < 2 || ny < 2 || nz < 2 || uint64_t(nx) * ny * nz > (1ull << 31))
        throw io_error(path + ": implausible grid resolution");
    double s = r.f64();
    Vec3 lo = r.vec3(), hi = r.vec3();
    SdfGrid g(int(nx), int(ny), int(nz), lo, hi);
    g.set_s_vr(s);
    r.f64_array(g.values_.data(), g.values_.size());
    return g;
}

double eikonal_loss(const SdfGrid& grid, const std::vector<Vec3>& points,
                    std::vector<double>* d_values) {
    COREA_CHECK_ARG(!points.empty(), "eikonal loss needs at least one point");
    if (d_values)
        COREA_CHECK_ARG(d_values->size() == grid.node_count(), "gradient buffer size mismatch");
    double loss = 0.0;
    const double inv_n = 1.0 / double(points.size());
    for (const Vec3& p : points) {
        SdfGrid::Stencil st = grid.stencil(p);
        Vec3 g = Vec3::Zero();
        for (int i = 0; i < 8; ++i) g += st.weight_grad[i] * grid.values()[st.node[i]];
        double norm = g.norm();
        double r = norm - 1.0;
        loss += r * r;
        if (d_values && norm > 1e-12) {
            Vec3 d_g = (2.0 * r * inv_n / norm) * g;
            for (int i = 0; i < 8; ++i) (*d_values)[st.node[i]] += d_g.dot(st.weight_grad[i]);
        }
    }
    return loss * inv_n;
}

double curvature_loss(const SdfGrid& grid, const std::vector<Vec3>& points,
                      std::vector<double>* d_values) {
    COREA_CHECK_ARG(!points.empty(), "curvature loss needs at least one point");
    if (d_values)
        COREA_CHECK_ARG(d_values->size() == grid.node_count(), "gradient buffer size mismatch");
    Vec3 h = grid.spacing();
    const double ix2 = 1.0 / (h.x() * h.x());
    const double iy2 = 1.0 / (h.y() * h.y());
    const double iz2 = 1.0 / (h.z() * h.z());

    // First pass counts the interior stencil nodes so the mean is known
    // before gradients are written.
    struct Node {
        int x, y, z;
    };
    std::vector<Node> nodes;
    nodes.reserve(points.size() * 8);
    const size_t plane = size_t(grid.ny()) * grid.nz();
    for (const Vec3& p : points) {
        SdfGrid::Stencil st = grid.stencil(p);
        for (size_t idx : st.node) {
            int x = int(idx / plane);
            int y = int((idx / grid.nz()) % grid.ny());
            int z = int(idx % grid.nz());
            if (x < 1 || x + 1 >= grid.nx() || y < 1 || y + 1 >= grid.ny() || z < 1 ||
                z + 1 >= grid.nz())
                continue;
            nodes.push_back({x, y, z});
        }
    }
    if (nodes.empty()) return 0.0;

    const double inv_m = 1.0 / double(nodes.size());
    double loss = 0.0;
    for (const Node& nd : nodes) {
        double c = grid.value(nd.x, nd.y, nd.z);
        double lap = (grid.value(nd.x + 1, nd.y, nd.z) - 2 * c + grid.value(nd.x - 1, nd.y, nd.z)) * ix2 +
                     (grid.value(nd.x, nd.y + 1, nd.z) - 2 * c + grid.value(nd.x, nd.y - 1, nd.z)) * iy2 +
                     (grid.value(nd.x, nd.y, nd.z + 1) - 2 * c + grid.value(nd.x, nd.y, nd.z - 1)) * iz2;
        loss += lap * lap;
        if (d_values) {
            double k = 2.0 * lap * inv_m;
            auto add = [&](int x, int y, int z, double coeff) {
                (*d_values)[grid.node_index(x, y, z)] += k * coeff;
            };
            add(nd.x, nd.y, nd.z, -2.0 * (ix2 + iy2 + iz2));
            add(nd.x + 1, nd.y, nd.z, ix2);
            add(nd.x - 1, nd.y, nd.z, ix2);
            add(nd.x, nd.y + 1, nd.z, iy2);
            add(nd.x, nd.y - 1, nd.z, iy2);
            add(nd.x, nd.y, nd.z + 1, iz2);
            add(nd.x, nd.y, nd.z - 1, iz2);
        }
    }
    return loss * inv_m;
}

SdfRay sdf_render_ray(const SdfGrid& grid, const Vec3& origin, const Vec3& dir, double t0,
                      double t1, int samples) {
    COREA_CHECK_ARG(samples >= 2, "need at least two samples");
    COREA_CHECK_ARG(t1 > t0, "segment must have positive length");
    COREA_CHECK_ARG(std::abs(dir.norm() - 1.0) < 1e-9, "ray direction must be unit");
    SdfRay ray;
    ray.origin = origin;
    ray.dir = dir;
    ray.t0 = t0;
    ray.t1 = t1;
    ray.samples = samples;
    ray.f.resize(size_t(samples));
    ray.t.resize(size_t(samples));
    ray.w.resize(size_t(samples) - 1);

    // Stratified sampling: the segment is split into `samples` equal strata and the
    // field is evaluated at each stratum center. Deterministic for reproducibility.
    const double step = (t1 - t0) / samples;
    const double s = grid.s_vr();
    for (int k = 0; k < samples; ++k) {
        ray.t[k] = t0 + (k + 0.5) * step;
        ray.f[k] = grid.sample(origin + ray.t[k] * dir);
    }

    double trans = 1.0, alpha = 0.0, zsum = 0.0;
    for (int k = 0; k + 1 < samples; ++k) {
        double sk = sigmoid(s * ray.f[k]);
        double sk1 = sigmoid(s * ray.f[k + 1]);
        double a = std::max(0.0, (sk - sk1) / std::max(sk, kSdfCdfEps));
        double w = a * trans;
        ray.w[k] = w;
        alpha += w;
        zsum += w * ray.t[k];
        trans *= (1.0 - a);
    }
    ray.alpha = alpha;
    ray.depth_t = alpha > 1e-12 ? zsum / alpha : 0.0;
    ray.valid = alpha > 0.5;
    return ray;
}

SdfRay sdf_render_adaptive(const SdfGrid& grid, const Vec3& origin, const Vec3& dir,
                           double center_t, double delta) {
    COREA_CHECK_ARG(delta > 0.0, "window halfwidth must be positive");
    double t0 = std::max(center_t - delta, 1e-3);
    double t1 = std::max(center_t + delta, t0 + 1e-6);
    return sdf_render_ray(grid, origin, dir, t0, t1, kSdfWindowSamples);
}

SdfRay sdf_render_fallback(const SdfGrid& grid, const Vec3& origin, const Vec3& dir, double t0,
                           double t1) {
    return sdf_render_ray(grid, origin, dir, t0, t1, kSdfFallbackSamples);
}

void sdf_render_ray_backward(const SdfGrid& grid, const SdfRay& ray, double d_depth_t,
                             double d_alpha, std::vector<double>& d_values, double& d_s_vr) {
    COREA_CHECK_ARG(d_values.size() == grid.node_count(), "gradient buffer size mismatch");
    if (d_depth_t == 0.0 && d_alpha == 0.0) return;
    const int n = ray.samples;
    const int ni = n - 1; // intervals
    const double s = grid.s_vr();

    // Per-weight upstream; sample positions are treated as constants.
    std::vector<double> dw(size_t(ni), 0.0);
    if (ray.alpha > 1e-12 && d_depth_t != 0.0) {
        for (int k = 0; k < ni; ++k)
            dw[k] = d_depth_t * (ray.t[k] - ray.depth_t) / ray.alpha + d_alpha;
    } else {
        for (int k = 0; k < ni; ++k) dw[k] = d_alpha;
    }

    // Recompute opacities and transmittances, then walk back to front:
    // w_k = a_k T_k with T_k = prod_{j<k} (1 - a_j), so
    // dL/da_k = T_k dw_k - sum_{j>k} dw_j w_j / (1 - a_k).
    std::vector<double> a(size_t(ni), 0.0), trans(size_t(ni), 0.0);
    double t = 1.0;
    for (int k = 0; k < ni; ++k) {
        double sk = sigmoid(s * ray.f[k]);
        double sk1 = sigmoid(s * ray.f[k + 1]);
        a[k] = std::max(0.0, (sk - sk1) / std::max(sk, kSdfCdfEps));
        trans[k] = t;
        t *= (1.0 - a[k]);
    }

    std::vector<double> d_f(size_t(n), 0.0);
    double suffix = 0.0; // sum_{j>k} dw_j w_j
    for (int k = ni - 1; k >= 0; --k) {
        double da = trans[k] * dw[k];
        if (1.0 - a[k] > 1e-12) da -= suffix / (1.0 - a[k]);
        suffix += dw[k] * ray.w[k];

        double sk = sigmoid(s * ray.f[k]);
        double sk1 = sigmoid(s * ray.f[k + 1]);
        double raw = (sk - sk1) / std::max(sk, kSdfCdfEps);
        if (raw <= 0.0) continue; // clamped opacity: no gradient
        double d_sk, d_sk1;
        if (sk > kSdfCdfEps) {
            d_sk = da * sk1 / (sk * sk);
            d_sk1 = -da / sk;
        } else {
            d_sk = da / kSdfCdfEps;
            d_sk1 = -da / kSdfCdfEps;
        }
        double gk = sk * (1.0 - sk);
        double gk1 = sk1 * (1.0 - sk1);
        d_f[k] += d_sk * s * gk;
        d_f[k + 1] += d_sk1 * s * gk1;
        d_s_vr += d_sk * ray.f[k] * gk + d_sk1 * ray.f[k + 1] * gk1;
    }

    for (int k = 0; k < n; ++k) {
        if (d_f[k] == 0.0) continue;
        SdfGrid::Stencil st = grid.stencil(ray.origin + ray.t[k] * ray.dir);
        for (int i = 0; i < 8; ++i) d_values[st.node[i]] += d_f[k] * st.weight[i];
    }
}

SdfNormal surface_normal(const SdfGrid& grid, const Vec3& p) {
    Vec3 g = grid.gradient(p);
    SdfNormal out;
    double n = g.norm();
    // An overflowed gradient has an infinite norm; g / n would then silently
    // yield a zero "unit" normal, so non-finite fields are reported as having
    // no usable normal.
    if (n > 1e-8 && std::isfinite(n)) {
        out.n = g / n;
        out.ok = true;
    }
    return out;
}

void surface_normal_backward(const SdfGrid& grid, const Vec3& p, const Vec3& d_n,
                             std::vector<double>& d_values) {
    COREA_CHECK_ARG(d_values.size() == grid.node_count(), "gradient buffer size mismatch");
    SdfGrid::Stencil st = grid.stencil(p);
    Vec3 g = Vec3::Zero();
    for (int i = 0; i < 8; ++i) g += st.weight_grad[i] * grid.values()[st.node[i]];
    double norm = g.norm();
    if (norm <= 1e-8) return;
    Vec3 nhat = g / norm;
    Vec3 d_g = (d_n - nhat * nhat.dot(d_n)) / norm;
    for (int i = 0; i < 8; ++i) d_values[st.node[i]] += d_g.dot(st.weight_grad[i]);
}

double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    COREA_CHECK_ARG(!a.empty() && !b.empty(), "chamfer needs nonempty point sets");
    auto one_sided = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
        Aabb box;
        for (const Vec3& p : to) box.expand(p);
        double diag = box.diagonal();
        double cell = diag > 0.0 ? diag / std::cbrt(double(to.size())) : 1.0;
        SpatialHash hash;
        hash.build(to, std::vector<double>(to.size(), 0.0), cell);
        double sum = 0.0;
        for (const Vec3& p : from) {
            auto nn = hash.knn(p, 1);
            sum += (p - to[nn[0]]).norm();
        }
        return sum / double(from.size());
    };
    return 0.5 * (one_sided(a, b) + one_sided(b, a));
}

namespace {

// Felzenszwalb-Huttenlocher lower-envelope squared distance transform along
// one axis with node positions i*h. Columns at +inf (no source anywhere in
// their line so far) are excluded from the envelope; if every column is
// infinite the line is left untouched.
void edt_1d(std::vector<double>& f, std::vector<double>& scratch, int n, double h) {
    static constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<int> finite;
    finite.reserve(size_t(n));
    for (int q = 0; q < n; ++q)
        if (f[size_t(q)] < kInf) finite.push_back(q);
    if (finite.empty()) return;

    std::vector<int> v(finite.size());
    std::vector<double> z(finite.size() + 1);
    int k = 0;
    v[0] = finite[0];
    z[0] = -kInf;
    z[1] = kInf;
    for (size_t qi = 1; qi < finite.size(); ++qi) {
        int q = finite[qi];
        double xq = q * h;
        for (;;) {
            double xv = v[size_t(k)] * h;
            double sgm = ((f[size_t(q)] + xq * xq) - (f[size_t(v[size_t(k)])] + xv * xv)) /
                         (2 * xq - 2 * xv);
            if (k > 0 && sgm <= z[size_t(k)]) {
                --k;
                continue;
            }
            ++k;
            v[size_t(k)] = q;
            z[size_t(k)] = sgm;
            z[size_t(k) + 1] = kInf;
            break;
        }
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        double xq = q * h;
        while (z[size_t(k) + 1] < xq) ++k;
        double xv = v[size_t(k)] * h;
        scratch[size_t(q)] = (xq - xv) * (xq - xv) + f[size_t(v[size_t(k)])];
    }
    for (int q = 0; q < n; ++q) f[size_t(q)] = scratch[size_t(q)];
}

// Squared Euclidean distance to the marked node set, anisotropic spacing.
std::vector<double> edt_3d(const std::vector<uint8_t>& marked, int nx, int ny, int nz, Vec3 h) {
    static constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> d(size_t(nx) * ny * nz);
    for (size_t i = 0; i < d.size(); ++i) d[i] = marked[i] ? 0.0 : kInf;
    auto idx = [&](int x, int y, int z) { return (size_t(x) * ny + y) * nz + z; };

    std::vector<double> line, scratch;
    // z axis
    line.resize(size_t(nz));
    scratch.resize(size_t(nz));
    for (int x = 0; x < nx; ++x)
        for (int y = 0; y < ny; ++y) {
            for (int z = 0; z < nz; ++z) line[size_t(z)] = d[idx(x, y, z)];
            edt_1d(line, scratch, nz, h.z());
            for (int z = 0; z < nz; ++z) d[idx(x, y, z)] = line[size_t(z)];
        }
    // y axis
    line.resize(size_t(ny));
    scratch.resize(size_t(ny));
    for (int x = 0; x < nx; ++x)
        for (int z = 0; z < nz; ++z) {
            for (int y = 0; y < ny; ++y) line[size_t(y)] = d[idx(x, y, z)];
            edt_1d(line, scratch, ny, h.y());
            for (int y = 0; y < ny; ++y) d[idx(x, y, z)] = line[size_t(y)];
        }
    // x axis
    line.resize(size_t(nx));
    scratch.resize(size_t(nx));
    for (int y = 0; y < ny; ++y)
        for (int z = 0; z < nz; ++z) {
            for (int x = 0; x < nx; ++x) line[size_t(x)] = d[idx(x, y, z)];
            edt_1d(line, scratch, nx, h.x());
            for (int x = 0; x < nx; ++x) d[idx(x, y, z)] = line[size_t(x)];
        }
    return d;
}

} // namespace

SdfGrid sdf_from_visual_hull(int nx, int ny, int nz, const Vec3& lo, const Vec3& hi,
                             const std::vector<Camera>& cams, const std::vector<Mask>& masks) {
    COREA_CHECK_ARG(cams.size() == masks.size() && !cams.empty(),
                    "need matching nonempty camera and mask lists");
    SdfGrid grid(nx, ny, nz, lo, hi);

    std::vector<uint8_t> inside(grid.node_count(), 0);
    parallel_for(int64_t(nx), [&](int64_t ix) {
        for (int iy = 0; iy < ny; ++iy) {
            for (int iz = 0; iz < nz; ++iz) {
                Vec3 p = grid.node_position(int(ix), iy, iz);
                bool in = true;
                for (size_t c = 0; c < cams.size(); ++c) {
                    const Camera& cam = cams[c];
                    Vec3 pc = cam.to_camera(p);
                    if (pc.z() <= 1e-6) continue; // behind this camera: cannot carve
                    double px = cam.fx * pc.x() / pc.z() + cam.cx;
                    double py = cam.fy * pc.y() / pc.z() + cam.cy;
                    int mx = int(std::floor(px));
                    int my = int(std::floor(py));
                    if (!masks[c].inside(mx, my)) continue; // outside frame: cannot carve
                    if (!masks[c].at(mx, my)) {
                        in = false;
                        break;
                    }
                }
                inside[grid.node_index(int(ix), iy, iz)] = in ? 1 : 0;
            }
        }
    });

    bool any_inside = false, any_outside = false;
    for (uint8_t v : inside) (v ? any_inside : any_outside) = true;

    Vec3 h = grid.spacing();
    if (!any_inside) {
        // Degenerate hull: fall back to "everything far outside".
        std::fill(grid.values().begin(), grid.values().end(), (hi - lo).norm());
        return grid;
    }
    if (!any_outside) {
        std::fill(grid.values().begin(), grid.values().end(), -(hi - lo).norm());
        return grid;
    }

    std::vector<uint8_t> outside(inside.size());
    for (size_t i = 0; i < inside.size(); ++i) outside[i] = inside[i] ? 0 : 1;
    std::vector<double> d_to_inside = edt_3d(inside, nx, ny, nz, h);
    std::vector<double> d_to_outside = edt_3d(outside, nx, ny, nz, h);
    for (size_t i = 0; i < inside.size(); ++i) {
        grid.values()[i] = inside[i] ? -std::sqrt(d_to_outside[i]) : std::sqrt(d_to_inside[i]);
    }
    return grid;
}

void save_obj(const std::string& path, const TriangleMesh& mesh) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot open " + path + " for writing");
    f.precision(12);
    for (const Vec3& v : mesh.vertices) f << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& t : mesh.triangles)
        f << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    if (!f) throw io_error("failed writing " + path);
}

} // namespace corea
