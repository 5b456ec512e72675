// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

namespace nrt {

namespace {

using nlohmann::json;

Eigen::Vector3d vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3)
    throw SceneError(std::string(what) + " must be an array of 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Texture parse_texture(const json& j) {
  Texture t;
  if (j.is_null()) return t;
  const std::string kind = j.value("type", "solid");
  if (kind == "solid") {
    t.kind = Texture::Kind::Solid;
    if (j.contains("color")) t.c1 = vec3(j.at("color"), "texture.color");
  } else if (kind == "checker") {
    t.kind = Texture::Kind::Checker;
    t.c1 = vec3(j.at("c1"), "texture.c1");
    t.c2 = vec3(j.at("c2"), "texture.c2");
    t.scale = j.value("scale", 0.5);
    if (t.scale <= 0) throw SceneError("checker scale must be positive");
  } else if (kind == "gradient") {
    t.kind = Texture::Kind::Gradient;
    t.c1 = vec3(j.at("c1"), "texture.c1");
    t.c2 = vec3(j.at("c2"), "texture.c2");
  } else {
    throw SceneError("unknown texture type '" + kind + "'");
  }
  return t;
}

json texture_json(const Texture& t) {
  json j;
  switch (t.kind) {
    case Texture::Kind::Solid:
      j["type"] = "solid";
      j["color"] = {t.c1.x(), t.c1.y(), t.c1.z()};
      break;
    case Texture::Kind::Checker:
      j["type"] = "checker";
      j["scale"] = t.scale;
      j["c1"] = {t.c1.x(), t.c1.y(), t.c1.z()};
      j["c2"] = {t.c2.x(), t.c2.y(), t.c2.z()};
      break;
    case Texture::Kind::Gradient:
      j["type"] = "gradient";
      j["c1"] = {t.c1.x(), t.c1.y(), t.c1.z()};
      j["c2"] = {t.c2.x(), t.c2.y(), t.c2.z()};
      break;
  }
  return j;
}

int line_of_offset(const std::string& text, size_t byte) {
  int line = 1;
  for (size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

// deterministic tangent basis for plane parameterization
void plane_basis(const Eigen::Vector3d& n, Eigen::Vector3d& u, Eigen::Vector3d& v) {
  const Eigen::Vector3d pick =
      std::abs(n.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  u = n.cross(pick).normalized();
  v = n.cross(u);
}

}  // namespace

SyntheticScene SyntheticScene::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SceneError("scene spec parse error at line " +
                     std::to_string(line_of_offset(text, e.byte)) + ": " + e.what());
  }
  SyntheticScene scene;
  scene.seed = j.value("seed", 0ULL);
  if (j.contains("background")) scene.background = vec3(j.at("background"), "background");
  if (j.contains("light")) {
    scene.light.direction = vec3(j.at("light").at("direction"), "light.direction").normalized();
    scene.light.ambient = j.at("light").value("ambient", 0.3);
    if (scene.light.ambient < 0.0 || scene.light.ambient > 1.0)
      throw SceneError("light.ambient must lie in [0, 1]");
  }
  if (!j.contains("primitives") || !j.at("primitives").is_array())
    throw SceneError("scene spec needs a primitives array");
  for (const auto& p : j.at("primitives")) {
    Primitive prim;
    const std::string type = p.value("type", "");
    if (type == "sphere") {
      Sphere s{vec3(p.at("center"), "sphere.center"), p.at("radius").get<double>()};
      if (s.radius <= 0) throw SceneError("sphere radius must be positive");
      prim.shape = s;
    } else if (type == "plane") {
      Plane pl{vec3(p.at("point"), "plane.point"),
               vec3(p.at("normal"), "plane.normal").normalized()};
      prim.shape = pl;
    } else if (type == "box") {
      Box b{vec3(p.at("min"), "box.min"), vec3(p.at("max"), "box.max")};
      for (int a = 0; a < 3; ++a)
        if (!(b.lo[a] < b.hi[a])) throw SceneError("box min must be below max on every axis");
      prim.shape = b;
    } else {
      throw SceneError("unknown primitive type '" + type + "'");
    }
    prim.texture = parse_texture(p.contains("texture") ? p.at("texture") : json());
    scene.primitives.push_back(prim);
  }
  if (j.contains("cameras"))
    for (const auto& c : j.at("cameras")) scene.cameras.push_back(Camera::from_json(c.dump()));
  scene.validate();
  return scene;
}

SyntheticScene SyntheticScene::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw SceneError("cannot open scene spec " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return from_json(text);
}

std::string SyntheticScene::to_json() const {
  json j;
  j["seed"] = seed;
  j["background"] = {background.x(), background.y(), background.z()};
  j["light"] = {{"direction", {light.direction.x(), light.direction.y(), light.direction.z()}},
                {"ambient", light.ambient}};
  j["primitives"] = json::array();
  for (const auto& p : primitives) {
    json pj;
    if (const auto* s = std::get_if<Sphere>(&p.shape)) {
      pj["type"] = "sphere";
      pj["center"] = {s->center.x(), s->center.y(), s->center.z()};
      pj["radius"] = s->radius;
    } else if (const auto* pl = std::get_if<Plane>(&p.shape)) {
      pj["type"] = "plane";
      pj["point"] = {pl->point.x(), pl->point.y(), pl->point.z()};
      pj["normal"] = {pl->normal.x(), pl->normal.y(), pl->normal.z()};
    } else if (const auto* b = std::get_if<Box>(&p.shape)) {
      pj["type"] = "box";
      pj["min"] = {b->lo.x(), b->lo.y(), b->lo.z()};
      pj["max"] = {b->hi.x(), b->hi.y(), b->hi.z()};
    }
    pj["texture"] = texture_json(p.texture);
    j["primitives"].push_back(pj);
  }
  j["cameras"] = json::array();
  for (const auto& c : cameras) j["cameras"].push_back(json::parse(c.to_json()));
  return j.dump(2);
}

void SyntheticScene::validate() const {
  if (primitives.empty()) throw SceneError("scene has no primitives");
  for (const auto& cam : cameras) {
    cam.validate();
    GroundTruth gt = render(cam);
    if (std::none_of(gt.hit.begin(), gt.hit.end(), [](uint8_t h) { return h != 0; }))
      throw SceneError("a camera sees no primitive at all");
  }
}

namespace {

std::optional<double> hit_sphere(const Sphere& s, const Eigen::Vector3d& o,
                                 const Eigen::Vector3d& d) {
  const Eigen::Vector3d oc = o - s.center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double t0 = -b - sq, t1 = -b + sq;
  if (t0 > 1e-9) return t0;
  if (t1 > 1e-9) return t1;
  return std::nullopt;
}

std::optional<double> hit_plane(const Plane& p, const Eigen::Vector3d& o,
                                const Eigen::Vector3d& d) {
  const double denom = p.normal.dot(d);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = p.normal.dot(p.point - o) / denom;
  if (t > 1e-9) return t;
  return std::nullopt;
}

std::optional<std::pair<double, int>> hit_box(const Box& b, const Eigen::Vector3d& o,
                                              const Eigen::Vector3d& d) {
  double tmin = -1e300, tmax = 1e300;
  int axis = 0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (o[a] < b.lo[a] || o[a] > b.hi[a]) return std::nullopt;
      continue;
    }
    double t0 = (b.lo[a] - o[a]) / d[a];
    double t1 = (b.hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > tmin) {
      tmin = t0;
      axis = a;
    }
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return std::nullopt;
  }
  if (tmin > 1e-9) return std::make_pair(tmin, axis);
  return std::nullopt;
}

Eigen::Vector3d texture_color(const Texture& tex, const Primitive& prim,
                              const Eigen::Vector3d& p) {
  switch (tex.kind) {
    case Texture::Kind::Solid:
      return tex.c1;
    case Texture::Kind::Checker: {
      double u = 0, v = 0;
      if (const auto* pl = std::get_if<Plane>(&prim.shape)) {
        Eigen::Vector3d bu, bv;
        plane_basis(pl->normal, bu, bv);
        const Eigen::Vector3d rel = p - pl->point;
        u = rel.dot(bu);
        v = rel.dot(bv);
      } else if (const auto* s = std::get_if<Sphere>(&prim.shape)) {
        const Eigen::Vector3d rel = (p - s->center).normalized();
        u = std::atan2(rel.y(), rel.x()) * s->radius;
        v = std::acos(std::clamp(rel.z(), -1.0, 1.0)) * s->radius;
      } else if (const auto* b = std::get_if<Box>(&prim.shape)) {
        u = p.x() - b->lo.x();
        v = p.y() - b->lo.y() + (p.z() - b->lo.z());
      }
      const auto cell = static_cast<int64_t>(std::floor(u / tex.scale)) +
                        static_cast<int64_t>(std::floor(v / tex.scale));
      return (cell & 1) == 0 ? tex.c1 : tex.c2;
    }
    case Texture::Kind::Gradient: {
      double t = 0.5;
      if (const auto* s = std::get_if<Sphere>(&prim.shape))
        t = (p.y() - s->center.y() + s->radius) / (2 * s->radius);
      else if (const auto* b = std::get_if<Box>(&prim.shape))
        t = (p.y() - b->lo.y()) / (b->hi.y() - b->lo.y());
      else
        t = 0.5 + 0.5 * std::sin(p.x());
      t = std::clamp(t, 0.0, 1.0);
      return (1 - t) * tex.c1 + t * tex.c2;
    }
  }
  return tex.c1;
}

}  // namespace

HitRecord SyntheticScene::trace(const Eigen::Vector3d& origin,
                                const Eigen::Vector3d& dir) const {
  HitRecord best;
  best.t = 1e300;
  for (const auto& prim : primitives) {
    double t = -1.0;
    Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
    if (const auto* s = std::get_if<Sphere>(&prim.shape)) {
      auto hit = hit_sphere(*s, origin, dir);
      if (!hit) continue;
      t = *hit;
      normal = (origin + t * dir - s->center).normalized();
    } else if (const auto* pl = std::get_if<Plane>(&prim.shape)) {
      auto hit = hit_plane(*pl, origin, dir);
      if (!hit) continue;
      t = *hit;
      normal = pl->normal;
    } else if (const auto* b = std::get_if<Box>(&prim.shape)) {
      auto hit = hit_box(*b, origin, dir);
      if (!hit) continue;
      t = hit->first;
      normal = Eigen::Vector3d::Zero();
      normal[hit->second] = dir[hit->second] > 0 ? -1.0 : 1.0;
    }
    if (t < best.t) {
      best.hit = true;
      best.t = t;
      best.point = origin + t * dir;
      if (normal.dot(dir) > 0) normal = -normal;  // face the viewer
      best.normal = normal;
      best.albedo = texture_color(prim.texture, prim, best.point);
    }
  }
  if (!best.hit) best.t = 0.0;
  return best;
}

Eigen::Vector3d SyntheticScene::shade(const HitRecord& hit) const {
  if (!hit.hit) return background;
  const double lambert = std::max(0.0, hit.normal.dot(-light.direction));
  const double intensity = light.ambient + (1.0 - light.ambient) * lambert;
  return (hit.albedo * intensity).cwiseMin(1.0).cwiseMax(0.0);
}

GroundTruth SyntheticScene::render(const Camera& cam) const {
  GroundTruth gt;
  gt.height = cam.height;
  gt.width = cam.width;
  gt.rgb.resize(static_cast<size_t>(cam.height) * cam.width * 3);
  gt.depth.assign(static_cast<size_t>(cam.height) * cam.width, 0.0);
  gt.hit.assign(static_cast<size_t>(cam.height) * cam.width, 0);

  std::vector<std::pair<int, int>> pixels;
  pixels.reserve(gt.hit.size());
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) pixels.emplace_back(y, x);
  RayBundle rays = generate_rays(cam, pixels);
  for (size_t i = 0; i < rays.size(); ++i) {
    HitRecord hit = trace(rays.origins[i], rays.directions[i]);
    const Eigen::Vector3d c = shade(hit);
    gt.rgb[i * 3 + 0] = c.x();
    gt.rgb[i * 3 + 1] = c.y();
    gt.rgb[i * 3 + 2] = c.z();
    gt.depth[i] = hit.t;
    gt.hit[i] = hit.hit ? 1 : 0;
  }
  return gt;
}

}  // namespace nrt
