// Copyright Contributors to the corea project
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "corea/align.hpp"
#include "corea/common.hpp"
#include "corea/metrics.hpp"

using namespace corea;

namespace {

constexpr double kSh0 = 0.28209479177387814;

Camera test_camera(int w = 17, int h = 17, double f = 60.0) {
  Camera cam;
  cam.width = w;
  cam.height = h;
  cam.fx = cam.fy = f;
  cam.cx = 0.5 * w;
  cam.cy = 0.5 * h;
  return cam;  // identity pose: camera at origin looking down +z
}

GaussianPrimitive flat_prim(const Vec3& pos, double sigma, const Vec3& color) {
  GaussianPrimitive g;
  g.position = pos;
  // Short z axis: the geometric normal is +-z, flipped to face the camera.
  g.log_scale = Vec3(std::log(sigma), std::log(sigma), std::log(0.2 * sigma));
  g.opacity_logit = logit(0.95);
  g.sh[0] = color / kSh0;
  return g;
}

/// Opaque wall of Gaussians at world z = depth spanning [-half, half]^2.
GaussianScene wall_scene(double depth, double half, double spacing) {
  GaussianScene scene;
  for (double yy = -half; yy <= half + 1e-9; yy += spacing)
    for (double xx = -half; xx <= half + 1e-9; xx += spacing)
      scene.add(flat_prim(Vec3(xx, yy, depth), 0.8 * spacing, Vec3(0.6, 0.5, 0.4)));
  return scene;
}

/// Grid holding f = plane_c - z + bend * x^2 (+ tilt * x): a camera-facing
/// surface with analytic normals; linear when bend = tilt = 0.
SdfGrid plane_grid(double plane_c, double tilt = 0.0, double bend = 0.0, int n = 24) {
  SdfGrid g(n, n, n, Vec3(-1.2, -1.2, 0.4), Vec3(1.2, 1.2, 2.8));
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        Vec3 p = g.node_position(x, y, z);
        g.values()[g.node_index(x, y, z)] =
            plane_c - p.z() + tilt * p.x() + bend * p.x() * p.x();
      }
  return g;
}

/// Hand-built batch over a constant joint mask for the pure loss functions.
AlignmentBatch manual_batch(int w, int h) {
  AlignmentBatch b;
  b.cam = test_camera(w, h);
  b.gauss_depth = ImageD(w, h, 0.0);
  b.gauss_normal = ImageV3(w, h, Vec3(0, 0, -1));
  b.gauss_pseudo_normal = ImageV3(w, h, Vec3(0, 0, -1));
  b.gauss_valid = Mask(w, h, 1);
  b.sdf_depth = ImageD(w, h, 0.0);
  b.sdf_normal = ImageV3(w, h, Vec3(0, 0, -1));
  b.sdf_valid = Mask(w, h, 1);
  b.joint = Mask(w, h, 1);
  b.joint_count = int64_t(w) * h;
  b.rays.resize(size_t(w) * h);
  b.hit_point.assign(size_t(w) * h, Vec3::Zero());
  return b;
}

Vec3 random_unit(Rng& rng) {
  Vec3 v(rng.normal(), rng.normal(), rng.normal());
  while (v.norm() < 1e-3) v = Vec3(rng.normal(), rng.normal(), rng.normal());
  return v.normalized();
}

}  // namespace

TEST_SUITE_BEGIN("align");

TEST_CASE("alternating schedule selects branches") {
  CHECK(alternate(0) == AlignPhase::Sdf);
  CHECK(alternate(1) == AlignPhase::Gaussian);
  CHECK(alternate(7) == AlignPhase::Gaussian);
  CHECK(alternate(1066) == AlignPhase::Sdf);
  for (int64_t i = 0; i < 5; ++i) CHECK(alternate(i, true) == AlignPhase::Both);
}

TEST_CASE("depth loss matches a direct-summation oracle") {
  Rng rng(401);
  AlignmentBatch b = manual_batch(9, 7);
  // Random depths on a random joint mask; oracle summed directly.
  double oracle_sum = 0.0;
  int64_t n = 0;
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 9; ++x) {
      b.gauss_depth.at(x, y) = 1.0 + rng.uniform();
      b.sdf_depth.at(x, y) = 1.0 + rng.uniform();
      bool on = rng.uniform() < 0.6;
      b.joint.at(x, y) = on ? 1 : 0;
      if (on) {
        oracle_sum += std::abs(b.sdf_depth.at(x, y) - b.gauss_depth.at(x, y));
        ++n;
      }
    }
  b.joint_count = n;
  REQUIRE(n > 0);
  LossValue ld = loss_depth(b);
  CHECK_FALSE(ld.empty);
  CHECK(ld.value == doctest::Approx(oracle_sum / double(n)).epsilon(1e-14));

  // Symmetry in the two depth maps.
  AlignmentBatch swapped = b;
  std::swap(swapped.gauss_depth, swapped.sdf_depth);
  CHECK(loss_depth(swapped).value == ld.value);

  // Identical maps and constant offsets.
  AlignmentBatch same = b;
  same.sdf_depth = same.gauss_depth;
  CHECK(loss_depth(same).value == 0.0);
  for (auto& d : same.sdf_depth.data) d += 0.5;
  CHECK(loss_depth(same).value == doctest::Approx(0.5).epsilon(1e-14));

  // Empty joint mask reports the flag instead of dividing by zero.
  AlignmentBatch empty = b;
  std::fill(empty.joint.data.begin(), empty.joint.data.end(), uint8_t(0));
  empty.joint_count = 0;
  LossValue le = loss_depth(empty);
  CHECK(le.empty);
  CHECK(le.value == 0.0);
}

TEST_CASE("cosine losses on analytic and random fields") {
  Rng rng(402);
  AlignmentBatch b = manual_batch(8, 6);

  CHECK(loss_sdf_normal(b).value == 0.0);
  CHECK(loss_gauss_normal(b).value == 0.0);

  // Everywhere antiparallel and everywhere orthogonal.
  AlignmentBatch anti = b;
  for (auto& v : anti.sdf_normal.data) v = Vec3(0, 0, 1);
  CHECK(loss_sdf_normal(anti).value == doctest::Approx(2.0).epsilon(1e-14));
  AlignmentBatch ortho = b;
  for (auto& v : ortho.sdf_normal.data) v = Vec3(1, 0, 0);
  CHECK(loss_sdf_normal(ortho).value == doctest::Approx(1.0).epsilon(1e-14));

  // Uniform 60 degree tilt of the blended normals: 1 - cos(60) = 0.5.
  AlignmentBatch tilt = b;
  double c60 = std::cos(M_PI / 3.0), s60 = std::sin(M_PI / 3.0);
  for (auto& v : tilt.gauss_normal.data) v = Vec3(s60, 0, -c60);
  CHECK(loss_gauss_normal(tilt).value == doctest::Approx(0.5).epsilon(1e-12));

  // Random unit fields against a directly summed oracle, plus range bounds
  // and invariance under a shared rotation.
  AlignmentBatch r = b;
  double oracle = 0.0;
  for (size_t i = 0; i < r.sdf_normal.data.size(); ++i) {
    r.sdf_normal.data[i] = random_unit(rng);
    r.gauss_normal.data[i] = random_unit(rng);
    r.gauss_pseudo_normal.data[i] = r.gauss_normal.data[i];
    oracle += 1.0 - r.sdf_normal.data[i].dot(r.gauss_normal.data[i]);
  }
  oracle /= double(r.joint_count);
  double got = loss_gauss_normal(r).value;
  CHECK(got == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(loss_sdf_normal(r).value == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(got >= 0.0);
  CHECK(got <= 2.0);

  Eigen::AngleAxisd rot(0.83, Vec3(0.2, -0.5, 0.84).normalized());
  AlignmentBatch rr = r;
  for (size_t i = 0; i < rr.sdf_normal.data.size(); ++i) {
    rr.sdf_normal.data[i] = rot * rr.sdf_normal.data[i];
    rr.gauss_normal.data[i] = rot * rr.gauss_normal.data[i];
  }
  CHECK(loss_gauss_normal(rr).value == doctest::Approx(got).epsilon(1e-12));

  // Non-unit input on a joint pixel is rejected.
  AlignmentBatch bad = b;
  bad.sdf_normal.at(3, 2) = Vec3(0, 0, -2);
  CHECK_THROWS_AS(loss_sdf_normal(bad), invalid_argument);
  AlignmentBatch bad2 = b;
  bad2.gauss_normal.at(0, 0) = Vec3::Zero();
  CHECK_THROWS_AS(loss_gauss_normal(bad2), invalid_argument);

  // Empty joint.
  AlignmentBatch empty = b;
  std::fill(empty.joint.data.begin(), empty.joint.data.end(), uint8_t(0));
  empty.joint_count = 0;
  CHECK(loss_sdf_normal(empty).empty);
}

TEST_CASE("projection penalty pulls centers onto the zero set") {
  // f = 1.6 - z: zero set is the plane z = 1.6.
  SdfGrid g = plane_grid(1.6);

  GaussianScene on_surface;
  for (int i = 0; i < 5; ++i)
    on_surface.add(flat_prim(Vec3(-0.4 + 0.2 * i, 0.1, 1.6), 0.05, Vec3::Ones()));
  CHECK(projection_penalty(on_surface, g) == doctest::Approx(0.0).epsilon(1e-12));

  GaussianScene one;
  one.add(flat_prim(Vec3(0.2, -0.3, 1.3), 0.05, Vec3::Ones()));
  CHECK(projection_penalty(one, g) == doctest::Approx(0.3).epsilon(1e-10));

  // Finite-difference oracle for the center gradient on a bent field.
  SdfGrid bent = plane_grid(1.5, 0.2, 0.35);
  GaussianScene scene;
  Rng rng(403);
  for (int i = 0; i < 12; ++i)
    scene.add(flat_prim(Vec3(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8),
                             rng.uniform(0.8, 2.4)),
                        0.05, Vec3::Ones()));
  std::vector<Vec3> d_pos;
  double base = projection_penalty(scene, bent, &d_pos);
  CHECK(base > 0.0);
  const double h = 1e-6;
  for (size_t i = 0; i < scene.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      GaussianScene pert = scene;
      pert[i].position[a] += h;
      double up = projection_penalty(pert, bent);
      pert[i].position[a] -= 2 * h;
      double dn = projection_penalty(pert, bent);
      double num = (up - dn) / (2 * h);
      CHECK(std::abs(d_pos[i][a] - num) < 1e-6 * std::max(1.0, std::abs(num)));
    }
    // The gradient points along sign(f) * grad f: descending it moves the
    // center toward the zero set.
    double f = bent.sample(scene[i].position);
    if (std::abs(f) > 1e-6)
      CHECK(d_pos[i].dot((f > 0 ? 1.0 : -1.0) * bent.gradient(scene[i].position)) > 0.0);
  }

  GaussianScene empty;
  CHECK_THROWS_AS(projection_penalty(empty, g), invalid_argument);
}

TEST_CASE("alignment batch from a rendered wall is consistent") {
  Camera cam = test_camera(19, 15);
  GaussianScene scene = wall_scene(1.5, 0.45, 0.05);
  ForwardCache cache = render_forward(scene, cam);
  SdfGrid grid = plane_grid(1.56);

  AlignmentBatch b = build_alignment_batch(cache, grid);
  CHECK(b.gauss_depth.same_shape(cam.width, cam.height));
  CHECK(b.sdf_depth.same_shape(cam.width, cam.height));
  CHECK(b.joint.same_shape(cam.width, cam.height));
  CHECK(b.rays.size() == size_t(cam.width) * cam.height);

  int64_t pop = 0;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      bool j = b.joint.at(x, y) != 0;
      CHECK(j == (b.gauss_valid.at(x, y) && b.sdf_valid.at(x, y)));
      pop += j ? 1 : 0;
      if (b.gauss_valid.at(x, y)) {
        CHECK(std::abs(b.gauss_normal.at(x, y).norm() - 1.0) < 1e-9);
        CHECK(std::abs(b.gauss_pseudo_normal.at(x, y).norm() - 1.0) < 1e-9);
      }
      if (b.sdf_valid.at(x, y)) {
        CHECK(std::abs(b.sdf_normal.at(x, y).norm() - 1.0) < 1e-9);
        const SdfRay& r = b.ray_at(x, y);
        CHECK(r.valid);
        CHECK(b.sdf_depth.at(x, y) ==
              doctest::Approx(cam.ray_t_to_depth(x, y, r.depth_t)).epsilon(1e-12));
        // The plane sits at view depth 1.56 up to one sample spacing.
        CHECK(std::abs(b.sdf_depth.at(x, y) - 1.56) < 2.0 * (r.t1 - r.t0) / r.samples);
        // World surface normal of f = c - z.
        CHECK((b.sdf_normal.at(x, y) - Vec3(0, 0, -1)).norm() < 1e-9);
      }
    }
  CHECK(pop == b.joint_count);
  CHECK(b.joint_count > 50);

  // The wall depth is 1.5, the surface 1.56: depth loss equals the offset up
  // to the front-attached half-sample bias of the ray integrator.
  CHECK(std::abs(loss_depth(b).value - 0.06) < 0.02);
  // All normals agree here (wall faces the camera, field gradient is -z).
  CHECK(loss_sdf_normal(b).value < 1e-6);
  CHECK(loss_gauss_normal(b).value < 1e-6);

  CHECK_THROWS_AS(build_alignment_batch(cache, grid, AlignmentOptions{0.0}), invalid_argument);
}

TEST_CASE("training weight defaults are pinned") {
  DsaWeights dw;
  CHECK(dw.silhouette == 1.0);
  CHECK(dw.eikonal == 0.1);
  CHECK(dw.curvature == 0.05);
  CHECK(dw.depth == 0.01);
  CHECK(dw.normal == 0.001);
  NgaWeights nw;
  CHECK(nw.l1 == 0.8);
  CHECK(nw.ssim == 0.2);
  CHECK(nw.mask == 0.01);
  CHECK(nw.depth_var == 0.01);
  CHECK(nw.depth == dw.depth);   // shared between the two steps
  CHECK(nw.normal == dw.normal); // shared between the two steps
}

TEST_CASE("sdf step on a perfectly aligned pair reduces to regularizers") {
  Camera cam = test_camera(17, 17);
  GaussianScene scene = wall_scene(1.5, 0.5, 0.05);
  ForwardCache cache = render_forward(scene, cam);
  SdfGrid grid = plane_grid(1.5, 0.0, 0.3); // bent: nonzero regularizers
  grid.set_s_vr(400.0);                     // sharp CDF: saturated silhouette

  AlignmentBatch b = build_alignment_batch(cache, grid);
  REQUIRE(b.joint_count > 0);
  // Perfect alignment by construction: copy the SDF branch over the Gaussian
  // branch.
  b.gauss_depth = b.sdf_depth;
  b.gauss_normal = b.sdf_normal;
  b.gauss_pseudo_normal = b.sdf_normal;
  b.gauss_valid = b.sdf_valid;
  b.joint = b.sdf_valid;
  b.joint_count = 0;
  for (uint8_t v : b.joint.data) b.joint_count += v ? 1 : 0;

  Mask mask(cam.width, cam.height, 1); // the wall covers the whole frame

  SdfGradients grads;
  DsaTerms t = dsa_step(b, grid, mask, DsaWeights{}, grads);
  CHECK_FALSE(t.empty_joint);
  CHECK(t.depth == 0.0);
  CHECK(t.normal < 1e-12);
  CHECK(t.silhouette < 1e-6);
  CHECK(t.eikonal > 1e-4);   // the bent field is not unit-gradient
  CHECK(t.curvature > 1e-6); // nor flat
  CHECK(std::abs(t.total - (1.0 * t.silhouette + 0.1 * t.eikonal + 0.05 * t.curvature +
                            0.01 * t.depth + 0.001 * t.normal)) < 1e-12);

  // With aligned data terms the total is regularizers plus the saturated
  // silhouette residual.
  CHECK(std::abs(t.total - (0.1 * t.eikonal + 0.05 * t.curvature)) < 1e-6);
}

TEST_CASE("sdf step gradients assemble the component adjoints") {
  Camera cam = test_camera(13, 11);
  GaussianScene scene = wall_scene(1.5, 0.5, 0.06);
  ForwardCache cache = render_forward(scene, cam);
  SdfGrid grid = plane_grid(1.58, 0.12, 0.0, 16);
  AlignmentBatch b = build_alignment_batch(cache, grid);
  REQUIRE(b.joint_count > 10);

  Mask mask(cam.width, cam.height, 0);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) mask.at(x, y) = (x + y) % 3 ? 1 : 0;

  // Data terms only: mirror the documented accumulation through the public
  // component adjoints.
  DsaWeights wd;
  wd.eikonal = 0.0;
  wd.curvature = 0.0;
  SdfGradients got;
  DsaTerms t = dsa_step(b, grid, mask, wd, got);
  CHECK(t.depth > 0.0);

  std::vector<double> want(grid.node_count(), 0.0);
  double want_s = 0.0;
  const double inv_p = 1.0 / double(size_t(cam.width) * cam.height);
  const double inv_n = 1.0 / double(b.joint_count);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const SdfRay& ray = b.ray_at(x, y);
      double d_alpha = 0.0, d_depth_t = 0.0;
      if (ray.samples >= 2) {
        double diff = ray.alpha - (mask.at(x, y) ? 1.0 : 0.0);
        d_alpha += wd.silhouette * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)) * inv_p;
      }
      if (b.joint.at(x, y)) {
        double diff = b.sdf_depth.at(x, y) - b.gauss_depth.at(x, y);
        double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        d_depth_t += wd.depth * sign * inv_n / cam.depth_to_ray_t(x, y, 1.0);
        surface_normal_backward(grid, b.hit_point[size_t(y) * cam.width + x],
                                -wd.normal * inv_n * b.gauss_pseudo_normal.at(x, y), want);
      }
      if (ray.samples >= 2 && (d_alpha != 0.0 || d_depth_t != 0.0))
        sdf_render_ray_backward(grid, ray, d_depth_t, d_alpha, want, want_s);
    }
  double scale = 0.0;
  for (double v : want) scale = std::max(scale, std::abs(v));
  REQUIRE(scale > 0.0);
  for (size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got.d_values[i] - want[i]) <= 1e-12 * scale);
  CHECK(got.d_s_vr == doctest::Approx(want_s).epsilon(1e-12));

  // Regularizers only: the adjoints at the published point set.
  DsaWeights wr;
  wr.silhouette = 0.0;
  wr.depth = 0.0;
  wr.normal = 0.0;
  SdfGradients rg;
  DsaTerms tr = dsa_step(b, grid, mask, wr, rg);
  std::vector<Vec3> pts = alignment_regularizer_points(b, grid);
  std::vector<double> de(grid.node_count(), 0.0), dc(grid.node_count(), 0.0);
  double eik = eikonal_loss(grid, pts, &de);
  double curv = curvature_loss(grid, pts, &dc);
  CHECK(tr.eikonal == doctest::Approx(eik).epsilon(1e-14));
  CHECK(tr.curvature == doctest::Approx(curv).epsilon(1e-14));
  CHECK(rg.d_s_vr == 0.0);
  for (size_t i = 0; i < de.size(); ++i)
    CHECK(std::abs(rg.d_values[i] - (wr.eikonal * de[i] + wr.curvature * dc[i])) < 1e-15);
}

TEST_CASE("gaussian step terms, sign, and detachment") {
  Camera cam = test_camera(17, 17);
  GaussianScene scene = wall_scene(1.5, 0.5, 0.05);
  ForwardCache cache = render_forward(scene, cam);
  SdfGrid grid = plane_grid(1.6);
  AlignmentBatch b = build_alignment_batch(cache, grid);
  REQUIRE(b.joint_count > 0);

  // Ground truth: the rendered wall, so photometric terms are tiny; mask all
  // ones.
  ImageRGB gt = cache.buffers.color;
  Mask mask(cam.width, cam.height, 1);

  std::vector<double> grid_before = grid.values();
  auto scene_pos_before = scene[0].position;

  GradientSet grads, normal_grads;
  NgaTerms t = nga_step(scene, cache, b, grid, gt, mask, NgaWeights{}, grads, normal_grads);
  CHECK_FALSE(t.empty_joint);
  CHECK(t.photometric == 0.0);      // identical images
  CHECK(t.ssim == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(t.depth - 0.1) < 0.02); // wall 1.5 vs surface 1.6, half-sample bias
  CHECK(t.normal < 1e-9);                // all normals face the camera
  // Trilinear sampling reproduces the linear field exactly: f(centers) = 0.1.
  CHECK(t.projection == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(t.depth_var >= 0.0);
  CHECK(t.mask > 0.0);              // saturated alpha never reaches exactly 1
  CHECK(std::abs(t.total - (0.8 * t.photometric + 0.2 * t.ssim + 0.01 * t.mask +
                            0.01 * t.depth_var + 0.01 * (t.depth + t.projection) +
                            0.001 * t.normal)) < 1e-12);
  CHECK(grads.all_finite());
  CHECK(normal_grads.all_finite());

  // Detachment: the step never touches the lattice or the scene.
  CHECK(grid.values() == grid_before);
  CHECK(scene[0].position == scene_pos_before);

  // The SDF surface sits behind the wall, and the centers feel f > 0: both
  // the depth term and the projection pull the wall toward +z, so descent
  // needs negative z-gradients on centers.
  NgaWeights depth_only;
  depth_only.l1 = depth_only.ssim = depth_only.mask = depth_only.depth_var = 0.0;
  depth_only.normal = 0.0;
  depth_only.depth = 1.0;
  GradientSet dg, ng;
  nga_step(scene, cache, b, grid, gt, mask, depth_only, dg, ng);
  double mean_z = 0.0;
  for (const Vec3& d : dg.d_position) mean_z += d.z();
  mean_z /= double(scene.size());
  CHECK(mean_z < 0.0);
}

TEST_CASE("normal gradients land exactly on contributors to misaligned pixels") {
  Camera cam = test_camera(33, 17);
  GaussianScene scene;
  // Patch A: camera-facing (aligned with the SDF's -z normals). The patch
  // gap is kept beyond the blend-record cutoff radius plus the silhouette
  // falloff so the two contributor sets cannot overlap.
  for (double yy = -0.12; yy <= 0.12 + 1e-9; yy += 0.04)
    for (double xx = -0.34; xx <= -0.18 + 1e-9; xx += 0.04)
      scene.add(flat_prim(Vec3(xx, yy, 1.5), 0.03, Vec3(0.7, 0.3, 0.3)));
  size_t patch_a = scene.size();
  // Patch B: tilted 30 degrees about y, so its blended normals disagree.
  for (double yy = -0.12; yy <= 0.12 + 1e-9; yy += 0.04)
    for (double xx = 0.18; xx <= 0.34 + 1e-9; xx += 0.04) {
      GaussianPrimitive g = flat_prim(Vec3(xx, yy, 1.5), 0.03, Vec3(0.3, 0.7, 0.3));
      g.rotation = Quaternion::from_axis_angle(Vec3::UnitY(), M_PI / 6.0);
      scene.add(g);
    }

  ForwardCache cache = render_forward(scene, cam);
  SdfGrid grid = plane_grid(1.5);
  AlignmentBatch b = build_alignment_batch(cache, grid);
  REQUIRE(b.joint_count > 20);

  GradientSet grads, normal_grads;
  NgaTerms t = nga_step(scene, cache, b, grid, cache.buffers.color,
                        Mask(cam.width, cam.height, 1), NgaWeights{}, grads, normal_grads);
  CHECK(t.normal > 0.01); // patch B misalignment contributes

  // Oracle: contributors are read straight off the per-pixel blend records of
  // misaligned joint pixels.
  std::set<uint32_t> misaligned_contributors;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      if (!b.joint.at(x, y)) continue;
      if (1.0 - b.gauss_normal.at(x, y).dot(b.sdf_normal.at(x, y)) < 1e-9) continue;
      for (const PixelRecord& r : cache.records_at(x, y))
        misaligned_contributors.insert(cache.projected[r.proj].index);
    }
  REQUIRE(!misaligned_contributors.empty());

  // With one shared normal per pixel the blend direction is invariant to the
  // weights (the renormalization projects the upstream orthogonal to it), so
  // misalignment steers each contributor's orientation rather than its
  // position: the signal lands on the rotation gradient.
  for (uint32_t i = 0; i < scene.size(); ++i) {
    double gr = 0.0;
    for (double c : normal_grads.d_rotation[i]) gr += c * c;
    gr = std::sqrt(gr);
    double gp = normal_grads.d_position[i].norm();
    if (misaligned_contributors.count(i)) {
      CHECK(gr > 1e-10);
    } else {
      CHECK(gr < 1e-14);
      CHECK(gp < 1e-14);
    }
  }
  // The tilted patch is exactly the misaligned one.
  for (uint32_t i : misaligned_contributors) CHECK(i >= patch_a);
}

TEST_CASE("empty joint keeps steps well-defined") {
  Camera cam = test_camera(12, 12);
  GaussianScene scene;
  scene.add(flat_prim(Vec3(50.0, 0.0, 1.5), 0.01, Vec3::Ones())); // off-frame
  ForwardCache cache = render_forward(scene, cam);
  SdfGrid grid = plane_grid(1.6);
  AlignmentBatch b = build_alignment_batch(cache, grid);
  CHECK(b.joint_count == 0);

  Mask mask(cam.width, cam.height, 0);
  SdfGradients grads;
  DsaTerms t = dsa_step(b, grid, mask, DsaWeights{}, grads);
  CHECK(t.empty_joint);
  CHECK(t.depth == 0.0);
  CHECK(t.normal == 0.0);
  CHECK(t.eikonal >= 0.0);
  bool finite = std::isfinite(t.total);
  for (double v : grads.d_values) finite = finite && std::isfinite(v);
  CHECK(finite);

  GradientSet gg, ng;
  NgaTerms nt = nga_step(scene, cache, b, grid, ImageRGB(cam.width, cam.height, Vec3::Zero()),
                         mask, NgaWeights{}, gg, ng);
  CHECK(nt.empty_joint);
  CHECK(nt.depth == 0.0);
  CHECK(nt.normal == 0.0);
  CHECK(gg.all_finite());
}

TEST_SUITE_END();
