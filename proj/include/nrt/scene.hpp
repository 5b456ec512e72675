// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nrt/geometry.hpp"

namespace nrt {

struct SceneError : std::runtime_error {
  explicit SceneError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Texture {
  enum class Kind { Solid, Checker, Gradient } kind = Kind::Solid;
  Eigen::Vector3d c1{0.8, 0.8, 0.8};
  Eigen::Vector3d c2{0.2, 0.2, 0.2};
  double scale = 0.5;  // checker square size, scene units
};

struct Sphere {
  Eigen::Vector3d center;
  double radius;
};
struct Plane {
  Eigen::Vector3d point;
  Eigen::Vector3d normal;  // unit
};
struct Box {
  Eigen::Vector3d lo, hi;
};

struct Primitive {
  std::variant<Sphere, Plane, Box> shape;
  Texture texture;
};

struct DirectionalLight {
  Eigen::Vector3d direction{0.3, -0.6, 0.8};  // travel direction of the light
  double ambient = 0.3;
};

struct HitRecord {
  double t = 0.0;  // distance along the unit ray
  Eigen::Vector3d point;
  Eigen::Vector3d normal;
  Eigen::Vector3d albedo;
  bool hit = false;
};

struct GroundTruth {
  int height = 0, width = 0;
  std::vector<double> rgb;    // [h*w*3]
  std::vector<double> depth;  // ray-distance to the closest hit; 0 on miss
  std::vector<uint8_t> hit;
};

// Analytic multi-view scene: exact poses, exact depth, bit-reproducible
// renders. Stands in for captured datasets at desk scale.
class SyntheticScene {
 public:
  std::vector<Primitive> primitives;
  std::vector<Camera> cameras;
  DirectionalLight light;
  Eigen::Vector3d background{0.0, 0.0, 0.0};
  uint64_t seed = 0;

  static SyntheticScene from_json(const std::string& text);
  static SyntheticScene from_file(const std::string& path);
  std::string to_json() const;
  void validate() const;  // non-empty primitives; every camera sees one

  HitRecord trace(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const;
  Eigen::Vector3d shade(const HitRecord& hit) const;  // Lambertian, one light
  GroundTruth render(const Camera& cam) const;
  GroundTruth render_view(size_t index) const { return render(cameras.at(index)); }
};

}  // namespace nrt
