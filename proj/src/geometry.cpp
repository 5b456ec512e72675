// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/geometry.hpp"

#include <json.hpp>

#include "nrt/rng.hpp"

namespace nrt {

namespace {
constexpr double kOrthoTol = 1e-6;
constexpr double kMinDepth = 1e-12;
}  // namespace

void Camera::validate() const {
  if (height <= 0 || width <= 0) throw GeometryError("camera: non-positive image size");
  if (intrinsics(0, 0) <= 0.0 || intrinsics(1, 1) <= 0.0)
    throw GeometryError("camera: focal lengths must be positive");
  if (intrinsics(1, 0) != 0.0 || intrinsics(2, 0) != 0.0 || intrinsics(2, 1) != 0.0)
    throw GeometryError("camera: intrinsics must be upper triangular");
  const Eigen::Matrix3d r = rotation();
  if (((r.transpose() * r) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > kOrthoTol)
    throw GeometryError("camera: rotation block is not orthonormal");
  const Eigen::RowVector4d bottom = world_to_camera.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 0.0)
    throw GeometryError("camera: bottom row of pose must be (0,0,0,1)");
  if (!(0.0 < near && near < far)) throw GeometryError("camera: need 0 < near < far");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                       const Eigen::Vector3d& up, double focal_px, int height, int width,
                       double near, double far) {
  const Eigen::Vector3d fwd = (target - eye).normalized();
  Eigen::Vector3d down = -up.normalized();
  Eigen::Vector3d right = down.cross(fwd);
  if (right.norm() < 1e-9) throw GeometryError("look_at: view direction parallel to up");
  right.normalize();
  down = fwd.cross(right);  // re-orthogonalized, right-handed

  Camera cam;
  cam.intrinsics = Eigen::Matrix3d::Identity();
  cam.intrinsics(0, 0) = focal_px;
  cam.intrinsics(1, 1) = focal_px;
  cam.intrinsics(0, 2) = (width - 1) / 2.0;
  cam.intrinsics(1, 2) = (height - 1) / 2.0;
  cam.world_to_camera = Eigen::Matrix4d::Identity();
  cam.world_to_camera.block<1, 3>(0, 0) = right.transpose();
  cam.world_to_camera.block<1, 3>(1, 0) = down.transpose();
  cam.world_to_camera.block<1, 3>(2, 0) = fwd.transpose();
  cam.world_to_camera.topRightCorner<3, 1>() =
      -cam.world_to_camera.topLeftCorner<3, 3>() * eye;
  cam.height = height;
  cam.width = width;
  cam.near = near;
  cam.far = far;
  cam.validate();
  return cam;
}

std::string Camera::to_json() const {
  nlohmann::json j;
  auto& k = j["intrinsics"] = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) k.push_back(intrinsics(r, c));
  auto& p = j["world_to_camera"] = nlohmann::json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) p.push_back(world_to_camera(r, c));
  j["size"] = {height, width};
  j["near"] = near;
  j["far"] = far;
  return j.dump();
}

Camera Camera::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Camera cam;
  const auto& k = j.at("intrinsics");
  if (k.size() != 9) throw GeometryError("camera json: intrinsics needs 9 values");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.intrinsics(r, c) = k[r * 3 + c].get<double>();
  const auto& p = j.at("world_to_camera");
  if (p.size() != 16) throw GeometryError("camera json: world_to_camera needs 16 values");
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) cam.world_to_camera(r, c) = p[r * 4 + c].get<double>();
  cam.height = j.at("size")[0].get<int>();
  cam.width = j.at("size")[1].get<int>();
  cam.near = j.at("near").get<double>();
  cam.far = j.at("far").get<double>();
  cam.validate();
  return cam;
}

void RayBundle::validate() const {
  if (directions.size() != origins.size() || near.size() != origins.size() ||
      far.size() != origins.size())
    throw GeometryError("ray bundle: field lengths differ");
  for (size_t i = 0; i < directions.size(); ++i) {
    if (std::abs(directions[i].norm() - 1.0) > 1e-6)
      throw GeometryError("ray bundle: direction " + std::to_string(i) + " is not unit length");
    if (!(near[i] < far[i]))
      throw GeometryError("ray bundle: near >= far at ray " + std::to_string(i));
  }
}

void SamplePoints::validate(const RayBundle& rays) const {
  const size_t B = rays.size();
  if (samples_per_ray <= 0 || depths.size() != B * samples_per_ray ||
      positions.size() != depths.size())
    throw GeometryError("sample points: size mismatch");
  for (size_t b = 0; b < B; ++b)
    for (int s = 0; s < samples_per_ray; ++s) {
      const size_t i = b * samples_per_ray + s;
      if (s > 0 && !(depths[i] > depths[i - 1]))
        throw GeometryError("sample points: depths not strictly increasing");
      const Eigen::Vector3d expect = rays.origins[b] + depths[i] * rays.directions[b];
      if ((positions[i] - expect).cwiseAbs().maxCoeff() > 1e-6)
        throw GeometryError("sample points: position/depth inconsistency");
    }
}

RayBundle generate_rays(const Camera& cam, const std::vector<std::pair<int, int>>& pixels) {
  cam.validate();
  const Eigen::Matrix3d kinv = cam.intrinsics.inverse();
  const Eigen::Matrix3d rt = cam.rotation().transpose();
  const Eigen::Vector3d c = cam.center();
  RayBundle rays;
  rays.origins.reserve(pixels.size());
  rays.directions.reserve(pixels.size());
  for (const auto& [row, col] : pixels) {
    if (row < 0 || row >= cam.height || col < 0 || col >= cam.width)
      throw GeometryError("generate_rays: pixel (" + std::to_string(row) + "," +
                          std::to_string(col) + ") outside image");
    const Eigen::Vector3d dir_cam = kinv * Eigen::Vector3d(col, row, 1.0);
    rays.origins.push_back(c);
    rays.directions.push_back((rt * dir_cam).normalized());
    rays.near.push_back(cam.near);
    rays.far.push_back(cam.far);
  }
  return rays;
}

Projection project(const Camera& cam, const std::vector<Eigen::Vector3d>& world_points) {
  const Eigen::Matrix3d r = cam.rotation();
  const Eigen::Vector3d t = cam.translation();
  Projection out;
  out.pixels.resize(world_points.size());
  out.depths.resize(world_points.size());
  out.in_frustum.resize(world_points.size());
  for (size_t i = 0; i < world_points.size(); ++i) {
    const Eigen::Vector3d pc = r * world_points[i] + t;
    out.depths[i] = pc.z();
    if (std::abs(pc.z()) < kMinDepth) {  // on the image plane: no projection exists
      out.pixels[i] = Eigen::Vector2d(-1.0, -1.0);
      out.in_frustum[i] = 0;
      continue;
    }
    const Eigen::Vector3d h = cam.intrinsics * pc;
    const Eigen::Vector2d px(h.x() / h.z(), h.y() / h.z());
    out.pixels[i] = px;
    const bool depth_ok = pc.z() > cam.near && pc.z() < cam.far;
    const bool image_ok = px.x() >= 0.0 && px.x() <= cam.width - 1.0 && px.y() >= 0.0 &&
                          px.y() <= cam.height - 1.0;
    out.in_frustum[i] = depth_ok && image_ok ? 1 : 0;
  }
  return out;
}

Eigen::Vector3d unproject(const Camera& cam, const Eigen::Vector2d& pixel, double depth) {
  const Eigen::Vector3d pc =
      depth * (cam.intrinsics.inverse() * Eigen::Vector3d(pixel.x(), pixel.y(), 1.0));
  return cam.rotation().transpose() * (pc - cam.translation());
}

SamplePoints sample_uniform(const RayBundle& rays, int count, bool jitter, uint64_t seed,
                            uint64_t ray_index_base) {
  if (count < 2) throw GeometryError("sample_uniform: need at least 2 samples per ray");
  SamplePoints pts;
  pts.samples_per_ray = count;
  pts.depths.resize(rays.size() * count);
  pts.positions.resize(rays.size() * count);
  for (size_t b = 0; b < rays.size(); ++b) {
    CounterRng stream(seed, ray_index_base + b);
    const double span = (rays.far[b] - rays.near[b]) / count;
    for (int s = 0; s < count; ++s) {
      const double xi = jitter ? stream.uniform() : 0.5;
      const double d = rays.near[b] + span * (s + xi);
      pts.depths[b * count + s] = d;
      pts.positions[b * count + s] = rays.origins[b] + d * rays.directions[b];
    }
  }
  return pts;
}

}  // namespace nrt
