// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "nrt/geometry.hpp"
#include "nrt/rng.hpp"

using namespace nrt;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

Camera identity_camera(int h = 8, int w = 8, double f = 4.0) {
  Camera cam;
  cam.intrinsics = Eigen::Matrix3d::Identity();
  cam.intrinsics(0, 0) = f;
  cam.intrinsics(1, 1) = f;
  cam.intrinsics(0, 2) = w / 2.0;
  cam.intrinsics(1, 2) = h / 2.0;
  cam.world_to_camera = Eigen::Matrix4d::Identity();
  cam.height = h;
  cam.width = w;
  cam.near = 0.1;
  cam.far = 10.0;
  return cam;
}

}  // namespace

TEST_SUITE_BEGIN("geometry");

TEST_CASE("camera invariants are enforced") {
  Camera cam = identity_camera();
  CHECK_NOTHROW(cam.validate());
  Camera bad = cam;
  bad.intrinsics(1, 0) = 0.5;
  CHECK_THROWS_AS(bad.validate(), GeometryError);
  bad = cam;
  bad.world_to_camera(0, 0) = 2.0;
  CHECK_THROWS_AS(bad.validate(), GeometryError);
  bad = cam;
  bad.near = 11.0;
  CHECK_THROWS_AS(bad.validate(), GeometryError);
}

TEST_CASE("ray through the principal point follows the optical axis") {
  Camera cam = identity_camera();
  RayBundle rays = generate_rays(cam, {{4, 4}});
  CHECK(rays.origins[0].isApprox(Vector3d::Zero(), 1e-12));
  CHECK(rays.directions[0].isApprox(Vector3d(0, 0, 1), 1e-12));

  // any pixel: origin is the camera center
  RayBundle r2 = generate_rays(cam, {{1, 6}, {7, 0}});
  for (const auto& o : r2.origins) CHECK(o.norm() < 1e-12);
  r2.validate();
}

TEST_CASE("rotated camera rotates the optical axis") {
  Camera cam = identity_camera();
  // 90 degrees about y: camera +z maps to world +x
  Eigen::Matrix3d rot;
  rot = Eigen::AngleAxisd(M_PI / 2.0, Vector3d::UnitY());
  cam.world_to_camera.topLeftCorner<3, 3>() = rot.transpose();
  RayBundle rays = generate_rays(cam, {{4, 4}});
  CHECK(rays.directions[0].isApprox(Vector3d(1, 0, 0), 1e-9));
}

TEST_CASE("out-of-bounds pixels are rejected") {
  Camera cam = identity_camera();
  CHECK_THROWS_AS(generate_rays(cam, {{8, 0}}), GeometryError);
  CHECK_THROWS_AS(generate_rays(cam, {{0, -1}}), GeometryError);
}

TEST_CASE("projection basics") {
  Camera cam = identity_camera();
  Projection p = project(cam, {Vector3d(0, 0, 1), Vector3d(0, 0, -1), Vector3d(0, 0, 0)});
  CHECK(p.pixels[0].isApprox(Vector2d(4, 4), 1e-12));
  CHECK(p.depths[0] == doctest::Approx(1.0));
  CHECK(p.in_frustum[0] == 1);
  CHECK(p.in_frustum[1] == 0);  // behind the camera
  CHECK(p.in_frustum[2] == 0);  // zero depth, no numeric fault
}

TEST_CASE("border pixels count as in-frustum, closed bounds") {
  Camera cam = identity_camera();
  // aim exactly at pixel (0,0): u = v = 0 -> x/z = (0-cx)/f
  const double x = (0.0 - cam.intrinsics(0, 2)) / cam.intrinsics(0, 0);
  Projection p = project(cam, {Vector3d(x, x, 1.0)});
  CHECK(p.pixels[0].x() == doctest::Approx(0.0));
  CHECK(p.in_frustum[0] == 1);
  // nudged outside
  Projection q = project(cam, {Vector3d(x - 1e-6, x, 1.0)});
  CHECK(q.in_frustum[0] == 0);
}

TEST_CASE("project/unproject round trip") {
  Rng rng(77);
  Camera cam = Camera::look_at(Vector3d(0.3, -0.2, -1.0), Vector3d(0, 0, 2), Vector3d(0, 1, 0),
                               9.0, 16, 12, 0.1, 50.0);
  int tested = 0;
  for (int i = 0; i < 200; ++i) {
    const Vector3d pt(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.5, 6));
    Projection p = project(cam, {pt});
    if (!p.in_frustum[0]) continue;
    const Vector3d back = unproject(cam, p.pixels[0], p.depths[0]);
    CHECK((back - pt).cwiseAbs().maxCoeff() < 1e-6);
    ++tested;
  }
  CHECK(tested > 20);
}

TEST_CASE("uniform sampling: midpoints and jitter stay in their bins") {
  RayBundle rays;
  rays.origins = {Vector3d::Zero(), Vector3d::Zero()};
  rays.directions = {Vector3d(0, 0, 1), Vector3d(0, 1, 0)};
  rays.near = {0.0, 2.0};
  rays.far = {1.0, 4.0};

  SamplePoints mid = sample_uniform(rays, 4, false);
  CHECK(mid.depths[0] == doctest::Approx(0.125));
  CHECK(mid.depths[1] == doctest::Approx(0.375));
  CHECK(mid.depths[2] == doctest::Approx(0.625));
  CHECK(mid.depths[3] == doctest::Approx(0.875));
  mid.validate(rays);

  SamplePoints two = sample_uniform(rays, 2, false);
  CHECK(two.depths[2] == doctest::Approx(2.5));
  CHECK(two.depths[3] == doctest::Approx(3.5));

  SamplePoints j1 = sample_uniform(rays, 8, true, 99);
  SamplePoints j2 = sample_uniform(rays, 8, true, 99);
  for (size_t i = 0; i < j1.depths.size(); ++i) CHECK(j1.depths[i] == j2.depths[i]);
  for (size_t b = 0; b < 2; ++b)
    for (int s = 0; s < 8; ++s) {
      const double w = (rays.far[b] - rays.near[b]) / 8.0;
      const double d = j1.depths[b * 8 + s];
      CHECK(d >= rays.near[b] + s * w);
      CHECK(d < rays.near[b] + (s + 1) * w);
    }
  j1.validate(rays);
  CHECK_THROWS_AS(sample_uniform(rays, 1, false), GeometryError);
}

TEST_CASE("epipolar property: sample projections are collinear in a source view") {
  Camera target = Camera::look_at(Vector3d(0, 0, -2), Vector3d(0, 0, 2), Vector3d(0, 1, 0), 20.0,
                                  24, 24, 0.2, 20.0);
  Camera source = Camera::look_at(Vector3d(1.5, 0.8, -1.5), Vector3d(0, 0, 2), Vector3d(0, 1, 0),
                                  20.0, 24, 24, 0.2, 20.0);
  RayBundle rays = generate_rays(target, {{5, 17}});
  SamplePoints pts = sample_uniform(rays, 16, false);
  Projection proj = project(source, pts.positions);

  // line through the first and last projected samples
  const Vector2d a = proj.pixels.front();
  const Vector2d b = proj.pixels.back();
  const Vector2d dir = (b - a).normalized();
  for (const auto& px : proj.pixels) {
    const Vector2d rel = px - a;
    const double off = std::abs(rel.x() * dir.y() - rel.y() * dir.x());
    CHECK(off < 1e-5);
  }
}

TEST_CASE("camera json round trip") {
  Camera cam = Camera::look_at(Vector3d(0.4, 0.1, -1.2), Vector3d(0, 0, 3), Vector3d(0, 1, 0),
                               33.0, 32, 48, 0.5, 6.0);
  Camera back = Camera::from_json(cam.to_json());
  CHECK(back.intrinsics.isApprox(cam.intrinsics, 0));
  CHECK(back.world_to_camera.isApprox(cam.world_to_camera, 0));
  CHECK(back.height == cam.height);
  CHECK(back.width == cam.width);
  CHECK(back.near == cam.near);
  CHECK(back.far == cam.far);
}

TEST_SUITE_END();
