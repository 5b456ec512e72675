// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nrt {

struct GeometryError : std::runtime_error {
  explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

// Conventions, fixed across the project:
//  - poses are world-to-camera rigid transforms; the camera looks down +z
//  - pixels are (row, col) with the origin at the top-left; continuous image
//    coordinates put pixel centers at integer positions, u = col, v = row
//  - depth bounds are strict (near < z < far) but image bounds are closed,
//    so border pixels stay inside the frustum
struct Camera {
  Eigen::Matrix3d intrinsics;        // upper triangular, positive focals
  Eigen::Matrix4d world_to_camera;
  int height = 0, width = 0;
  double near = 0.0, far = 0.0;

  void validate() const;  // throws GeometryError on any broken invariant

  Eigen::Matrix3d rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return world_to_camera.topRightCorner<3, 1>(); }
  Eigen::Vector3d center() const { return -rotation().transpose() * translation(); }
  Eigen::Vector3d optical_axis() const { return rotation().row(2).transpose(); }

  static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                        const Eigen::Vector3d& up, double focal_px, int height, int width,
                        double near, double far);

  std::string to_json() const;
  static Camera from_json(const std::string& text);
};

struct RayBundle {
  std::vector<Eigen::Vector3d> origins;
  std::vector<Eigen::Vector3d> directions;  // unit length
  std::vector<double> near, far;

  size_t size() const { return origins.size(); }
  void validate() const;
};

// Depths are distances along the unit ray direction (not z-depth).
struct SamplePoints {
  int samples_per_ray = 0;
  std::vector<double> depths;                // [rays * samples]
  std::vector<Eigen::Vector3d> positions;    // [rays * samples]

  size_t ray_count() const {
    return samples_per_ray ? depths.size() / samples_per_ray : 0;
  }
  void validate(const RayBundle& rays) const;
};

// Casts one ray per (row, col) pixel through the camera center.
RayBundle generate_rays(const Camera& cam, const std::vector<std::pair<int, int>>& pixels);

struct Projection {
  std::vector<Eigen::Vector2d> pixels;  // (u, v) = (col, row)
  std::vector<double> depths;           // camera-space z
  std::vector<uint8_t> in_frustum;
};

Projection project(const Camera& cam, const std::vector<Eigen::Vector3d>& world_points);

// Inverse of project at a given camera-space z-depth.
Eigen::Vector3d unproject(const Camera& cam, const Eigen::Vector2d& pixel, double depth);

// Stratified-uniform depths over [near, far]: one sample per equal-width
// bin, jittered by the (seed, ray index) counter stream when enabled and at
// bin midpoints otherwise.
SamplePoints sample_uniform(const RayBundle& rays, int count, bool jitter = false,
                            uint64_t seed = 0, uint64_t ray_index_base = 0);

}  // namespace nrt
