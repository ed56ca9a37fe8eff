#include "vsap/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include "json.hpp"

#include "vsap/error.hpp"
#include "vsap/rng.hpp"

namespace vsap {
namespace {

using Eigen::Vector3d;

constexpr double kSlab = 0.1;
constexpr std::uint64_t kLibrarySeed = 0x6c1b7a5e3d2f9081ULL;

std::uint64_t mix(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

double lattice(std::uint32_t tex, std::int64_t x, std::int64_t y, std::int64_t z) {
  std::uint64_t h = mix(static_cast<std::uint64_t>(tex) * 0x9e3779b97f4a7c15ULL ^
                        static_cast<std::uint64_t>(x) * 0x85ebca6bULL);
  h = mix(h ^ static_cast<std::uint64_t>(y) * 0xc2b2ae35ULL);
  h = mix(h ^ static_cast<std::uint64_t>(z) * 0x27d4eb2fULL);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(std::uint32_t tex, const Vector3d& p) {
  const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  const auto iz = static_cast<std::int64_t>(fz);
  const double tx = smooth(p.x() - fx), ty = smooth(p.y() - fy), tz = smooth(p.z() - fz);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
        acc += w * lattice(tex, ix + dx, iy + dy, iz + dz);
      }
    }
  }
  return acc;
}

struct TextureParams {
  Vector3d color_a;
  Vector3d color_b;
  int pattern;
  double frequency;
  int axis;
};

TextureParams texture_params(std::uint32_t texture_id) {
  Rng rng(derive_seed(0x7e47u, "texture", texture_id));
  TextureParams p;
  p.color_a = Vector3d(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95));
  p.color_b = Vector3d(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95));
  p.pattern = static_cast<int>(rng.below(4));
  p.frequency = rng.uniform(2.0, 5.0);
  p.axis = static_cast<int>(rng.below(3));
  return p;
}

bool ray_box(const Vector3d& lo, const Vector3d& hi, const Vector3d& o, const Vector3d& d,
             double& t_hit) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (d[k] == 0.0) {
      if (o[k] < lo[k] || o[k] > hi[k]) return false;
      continue;
    }
    const double inv = 1.0 / d[k];
    double a = (lo[k] - o[k]) * inv;
    double b = (hi[k] - o[k]) * inv;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return false;
  }
  if (t0 > 0.0) {
    t_hit = t0;
    return true;
  }
  if (t1 > 0.0) {
    t_hit = t1;
    return true;
  }
  return false;
}

bool ray_sphere(const Vector3d& c, double r, const Vector3d& o, const Vector3d& d, double& t_hit) {
  const Vector3d oc = o - c;
  const double a = d.squaredNorm();
  const double b = oc.dot(d);
  const double cc = oc.squaredNorm() - r * r;
  const double disc = b * b - a * cc;
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  // Stable root pair.
  const double q = -(b + std::copysign(sq, b));
  double r0 = q / a;
  double r1 = q != 0.0 ? cc / q : r0;
  if (r0 > r1) std::swap(r0, r1);
  if (r0 > 0.0) {
    t_hit = r0;
    return true;
  }
  if (r1 > 0.0) {
    t_hit = r1;
    return true;
  }
  return false;
}

Primitive make_slab(const Vector3d& lo, const Vector3d& hi, SemanticClass semantic,
                    std::uint32_t instance, std::uint32_t texture, std::uint32_t room) {
  Primitive p;
  p.kind = ShapeKind::kBox;
  p.lo = lo;
  p.hi = hi;
  p.center = 0.5 * (lo + hi);
  p.semantic = semantic;
  p.instance_id = instance;
  p.texture_id = texture;
  p.room = room;
  return p;
}

bool footprints_overlap(const Primitive& a, const Vector3d& lo, const Vector3d& hi, double gap) {
  return a.lo.x() - gap < hi.x() && lo.x() - gap < a.hi.x() && a.lo.y() - gap < hi.y() &&
         lo.y() - gap < a.hi.y();
}

nlohmann::json vec_json(const Vector3d& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Vector3d json_vec(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

const char* semantic_name(SemanticClass c) {
  switch (c) {
    case SemanticClass::kBackground: return "background";
    case SemanticClass::kWall: return "wall";
    case SemanticClass::kFloor: return "floor";
    case SemanticClass::kCeiling: return "ceiling";
    case SemanticClass::kObject: return "object";
  }
  return "unknown";
}

void SceneSpec::validate() const {
  if (num_rooms < 1 || objects_per_room < 0 || palette_size < 1 || object_library_size < 1) {
    throw Error(Errc::kInvalidArgument, "scene spec counts out of range");
  }
}

std::vector<LibraryObject> object_library(int size) {
  std::vector<LibraryObject> lib;
  lib.reserve(static_cast<std::size_t>(std::max(size, 0)));
  Rng rng(kLibrarySeed);
  for (int i = 0; i < size; ++i) {
    LibraryObject obj;
    obj.kind = rng.uniform() < 0.3 ? ShapeKind::kSphere : ShapeKind::kBox;
    obj.half_extent = Vector3d(rng.uniform(0.2, 0.45), rng.uniform(0.2, 0.45), rng.uniform(0.2, 0.55));
    obj.radius = rng.uniform(0.22, 0.4);
    obj.texture_id = kObjectTextureBase + static_cast<std::uint32_t>(i);
    lib.push_back(obj);
  }
  return lib;
}

Vector3d texture_color(std::uint32_t texture_id, const Vector3d& local) {
  const TextureParams p = texture_params(texture_id);
  const Vector3d q = local * p.frequency;
  double t = 0.0;
  switch (p.pattern) {
    case 0: {  // checker
      const auto s = static_cast<std::int64_t>(std::floor(q.x())) +
                     static_cast<std::int64_t>(std::floor(q.y())) +
                     static_cast<std::int64_t>(std::floor(q.z()));
      t = (s & 1) ? 1.0 : 0.0;
      break;
    }
    case 1: {  // stripes
      t = 0.5 + 0.5 * std::sin(6.283185307179586 * q[p.axis]);
      break;
    }
    case 2: {  // blotches
      t = value_noise(texture_id, q) > 0.5 ? 1.0 : 0.0;
      break;
    }
    default: {  // smooth noise
      t = value_noise(texture_id, q);
      break;
    }
  }
  Vector3d c = (1.0 - t) * p.color_a + t * p.color_b;
  const double grain = value_noise(texture_id ^ 0x5a5a5a5au, local * 11.0) - 0.5;
  c.array() += 0.16 * grain;
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

double surface_distance(const Primitive& prim, const Vector3d& p) {
  if (prim.kind == ShapeKind::kSphere) return std::fabs((p - prim.center).norm() - prim.radius);
  const Vector3d c = 0.5 * (prim.lo + prim.hi);
  const Vector3d h = 0.5 * (prim.hi - prim.lo);
  const Vector3d q = (p - c).cwiseAbs() - h;
  const double outside = q.cwiseMax(0.0).norm();
  const double inside = std::min(q.maxCoeff(), 0.0);
  return std::fabs(outside + inside);
}

const Primitive* Scene::find_instance(std::uint32_t instance_id) const {
  for (const auto& p : primitives) {
    if (p.instance_id == instance_id) return &p;
  }
  return nullptr;
}

Scene generate_scene(const SceneSpec& spec, EnvId environment) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "scene"));
  const auto library = object_library(spec.object_library_size);

  Scene scene;
  scene.environment = environment;
  scene.spec = spec;
  std::uint32_t next_instance = 1;
  double x_cursor = 0.0;
  const auto palette = static_cast<std::size_t>(spec.palette_size);

  for (int r = 0; r < spec.num_rooms; ++r) {
    const auto room_id = static_cast<std::uint32_t>(r);
    const double w = rng.uniform(3.0, 4.0);
    const double d = rng.uniform(3.0, 4.0);
    const double h = rng.uniform(2.4, 2.8);
    Room room{{x_cursor, 0.0, 0.0}, {x_cursor + w, d, h}};
    x_cursor += w + 2.0 * kSlab + 1.0;
    scene.rooms.push_back(room);

    const Vector3d lo = room.lo, hi = room.hi;
    auto tex = [&] { return static_cast<std::uint32_t>(rng.below(palette)); };
    scene.primitives.push_back(make_slab({lo.x() - kSlab, lo.y() - kSlab, lo.z() - kSlab},
                                         {hi.x() + kSlab, hi.y() + kSlab, lo.z()},
                                         SemanticClass::kFloor, next_instance++, tex(), room_id));
    scene.primitives.push_back(make_slab({lo.x() - kSlab, lo.y() - kSlab, hi.z()},
                                         {hi.x() + kSlab, hi.y() + kSlab, hi.z() + kSlab},
                                         SemanticClass::kCeiling, next_instance++, tex(), room_id));
    scene.primitives.push_back(make_slab({lo.x() - kSlab, lo.y() - kSlab, lo.z()},
                                         {lo.x(), hi.y() + kSlab, hi.z()}, SemanticClass::kWall,
                                         next_instance++, tex(), room_id));
    scene.primitives.push_back(make_slab({hi.x(), lo.y() - kSlab, lo.z()},
                                         {hi.x() + kSlab, hi.y() + kSlab, hi.z()},
                                         SemanticClass::kWall, next_instance++, tex(), room_id));
    scene.primitives.push_back(make_slab({lo.x(), lo.y() - kSlab, lo.z()},
                                         {hi.x(), lo.y(), hi.z()}, SemanticClass::kWall,
                                         next_instance++, tex(), room_id));
    scene.primitives.push_back(make_slab({lo.x(), hi.y(), lo.z()},
                                         {hi.x(), hi.y() + kSlab, hi.z()}, SemanticClass::kWall,
                                         next_instance++, tex(), room_id));

    const std::size_t first_object = scene.primitives.size();
    const std::uint32_t first_instance = next_instance;
    bool room_done = false;
    // A crowded draw restarts the room's whole object layout.
    for (int layout = 0; layout < 50 && !room_done; ++layout) {
      scene.primitives.resize(first_object);
      next_instance = first_instance;
      bool layout_ok = true;
      for (int k = 0; k < spec.objects_per_room && layout_ok; ++k) {
        // Library object 0 is always present so every pair of environments
        // shares at least one object.
        const std::size_t lib_id = (r == 0 && k == 0) ? 0 : rng.below(library.size());
        const LibraryObject& obj = library[lib_id];
        const Vector3d half = obj.kind == ShapeKind::kSphere
                                  ? Vector3d(obj.radius, obj.radius, obj.radius)
                                  : obj.half_extent;
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
          const double margin = 0.35;
          const double cx = rng.uniform(lo.x() + margin + half.x(), hi.x() - margin - half.x());
          const double cy = rng.uniform(lo.y() + margin + half.y(), hi.y() - margin - half.y());
          const Vector3d blo(cx - half.x(), cy - half.y(), lo.z());
          const Vector3d bhi(cx + half.x(), cy + half.y(), lo.z() + 2.0 * half.z());
          bool clash = false;
          for (std::size_t q = first_object; q < scene.primitives.size() && !clash; ++q) {
            clash = footprints_overlap(scene.primitives[q], blo, bhi, 0.3);
          }
          if (clash) continue;
          Primitive p;
          p.kind = obj.kind;
          p.lo = blo;
          p.hi = bhi;
          p.center = 0.5 * (blo + bhi);
          p.radius = obj.radius;
          p.semantic = SemanticClass::kObject;
          p.instance_id = next_instance++;
          p.library_id = static_cast<std::int32_t>(lib_id);
          p.texture_id = obj.texture_id;
          p.texture_origin = blo;
          p.room = room_id;
          scene.primitives.push_back(p);
          placed = true;
        }
        layout_ok = placed;
      }
      room_done = layout_ok;
    }
    if (!room_done) throw Error(Errc::kGeneration, "could not place objects without overlap");
  }
  return scene;
}

std::vector<Pose> sample_trajectory(const Scene& scene, int num_views, std::uint64_t seed) {
  if (num_views < 2) throw Error(Errc::kInvalidArgument, "trajectory needs at least two views");
  if (scene.rooms.empty()) throw Error(Errc::kGeneration, "scene has no rooms");
  Rng rng(derive_seed(seed, "trajectory", scene.environment));
  std::vector<Pose> poses;
  poses.reserve(static_cast<std::size_t>(num_views));
  const std::size_t rooms = scene.rooms.size();

  for (int v = 0; v < num_views; ++v) {
    const std::size_t r = static_cast<std::size_t>(v) * rooms / static_cast<std::size_t>(num_views);
    const Room& room = scene.rooms[r];
    std::vector<const Primitive*> objects;
    for (const auto& p : scene.primitives) {
      if (p.room == r && p.semantic == SemanticClass::kObject) objects.push_back(&p);
    }
    bool placed = false;
    for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
      const Vector3d eye(rng.uniform(room.lo.x() + 0.3, room.hi.x() - 0.3),
                         rng.uniform(room.lo.y() + 0.3, room.hi.y() - 0.3),
                         rng.uniform(0.9, 1.7));
      bool blocked = false;
      for (const auto* o : objects) {
        if ((eye.array() > o->lo.array() - 0.25).all() && (eye.array() < o->hi.array() + 0.25).all()) {
          blocked = true;
          break;
        }
      }
      if (blocked) continue;
      Vector3d target;
      if (!objects.empty() && rng.uniform() < 0.8) {
        const Primitive* o = objects[rng.below(objects.size())];
        target = o->center + Vector3d(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                                      rng.uniform(-0.1, 0.1));
      } else {
        target = Vector3d(rng.uniform(room.lo.x(), room.hi.x()), rng.uniform(room.lo.y(), room.hi.y()),
                          rng.uniform(0.3, 1.2));
      }
      const double dist = (target - eye).norm();
      if (dist < 1.0 || dist > 3.2) continue;
      poses.push_back(look_at(eye, target));
      placed = true;
    }
    if (!placed) throw Error(Errc::kGeneration, "no valid camera placement");
  }
  return poses;
}

std::optional<RayHit> cast_ray(const Scene& scene, const Vector3d& origin, const Vector3d& direction) {
  std::optional<RayHit> best;
  for (const auto& p : scene.primitives) {
    double t = 0.0;
    const bool hit = p.kind == ShapeKind::kSphere ? ray_sphere(p.center, p.radius, origin, direction, t)
                                                  : ray_box(p.lo, p.hi, origin, direction, t);
    if (hit && (!best || t < best->t)) best = RayHit{t, &p};
  }
  return best;
}

PosedView render(const Scene& scene, const Pose& pose, const Intrinsics& intr,
                 const RenderOptions& options) {
  intr.validate();
  PosedView view;
  view.width = intr.width;
  view.height = intr.height;
  const std::size_t npx = static_cast<std::size_t>(intr.width) * intr.height;
  view.rgb.assign(npx * 3, 0);
  view.depth.assign(npx, 0.0f);
  view.instance.assign(npx, 0);
  view.semantic.assign(npx, static_cast<std::uint32_t>(SemanticClass::kBackground));
  view.intr = intr;
  view.pose = pose;
  view.environment = scene.environment;

  Rng noise(options.noise_seed);
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      const Vector3d dir_cam((u + 0.5 - intr.cx) / intr.fx, (v + 0.5 - intr.cy) / intr.fy, 1.0);
      const Vector3d dir = pose.rotation * dir_cam;
      const auto hit = cast_ray(scene, pose.translation, dir);
      if (!hit) continue;
      const std::size_t idx = view.index(u, v);
      const Vector3d point = pose.translation + hit->t * dir;
      const Vector3d color = texture_color(hit->primitive->texture_id,
                                           point - hit->primitive->texture_origin);
      for (int c = 0; c < 3; ++c) {
        view.rgb[idx * 3 + c] = static_cast<std::uint8_t>(std::lround(color[c] * 255.0));
      }
      double depth = hit->t;  // camera-frame z, since dir_cam.z == 1
      if (options.depth_noise_std > 0.0) depth *= std::max(0.05, 1.0 + options.depth_noise_std * noise.normal());
      view.depth[idx] = static_cast<float>(depth);
      view.instance[idx] = hit->primitive->instance_id;
      view.semantic[idx] = static_cast<std::uint32_t>(hit->primitive->semantic);
    }
  }
  return view;
}

std::string Scene::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "vsap-scene";
  j["version"] = 1;
  j["environment"] = environment;
  j["spec"] = {{"seed", spec.seed},
               {"num_rooms", spec.num_rooms},
               {"objects_per_room", spec.objects_per_room},
               {"palette_size", spec.palette_size},
               {"object_library_size", spec.object_library_size}};
  j["rooms"] = nlohmann::json::array();
  for (const auto& r : rooms) j["rooms"].push_back({{"lo", vec_json(r.lo)}, {"hi", vec_json(r.hi)}});
  j["primitives"] = nlohmann::json::array();
  for (const auto& p : primitives) {
    nlohmann::ordered_json pj;
    pj["kind"] = p.kind == ShapeKind::kBox ? "box" : "sphere";
    pj["lo"] = vec_json(p.lo);
    pj["hi"] = vec_json(p.hi);
    pj["center"] = vec_json(p.center);
    pj["radius"] = p.radius;
    pj["semantic"] = semantic_name(p.semantic);
    pj["instance_id"] = p.instance_id;
    pj["library_id"] = p.library_id;
    pj["texture_id"] = p.texture_id;
    pj["texture_origin"] = vec_json(p.texture_origin);
    pj["room"] = p.room;
    j["primitives"].push_back(pj);
  }
  return j.dump(1) + "\n";
}

Scene Scene::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "vsap-scene") throw Error(Errc::kFormat, "not a scene manifest");
    Scene s;
    s.environment = j.at("environment").get<EnvId>();
    const auto& sj = j.at("spec");
    s.spec.seed = sj.at("seed").get<std::uint64_t>();
    s.spec.num_rooms = sj.at("num_rooms").get<int>();
    s.spec.objects_per_room = sj.at("objects_per_room").get<int>();
    s.spec.palette_size = sj.at("palette_size").get<int>();
    s.spec.object_library_size = sj.at("object_library_size").get<int>();
    for (const auto& rj : j.at("rooms")) s.rooms.push_back({json_vec(rj.at("lo")), json_vec(rj.at("hi"))});
    for (const auto& pj : j.at("primitives")) {
      Primitive p;
      p.kind = pj.at("kind") == "box" ? ShapeKind::kBox : ShapeKind::kSphere;
      p.lo = json_vec(pj.at("lo"));
      p.hi = json_vec(pj.at("hi"));
      p.center = json_vec(pj.at("center"));
      p.radius = pj.at("radius").get<double>();
      const auto sem = pj.at("semantic").get<std::string>();
      p.semantic = SemanticClass::kBackground;
      for (int c = 0; c < kNumSemanticClasses; ++c) {
        if (sem == semantic_name(static_cast<SemanticClass>(c))) p.semantic = static_cast<SemanticClass>(c);
      }
      p.instance_id = pj.at("instance_id").get<std::uint32_t>();
      p.library_id = pj.at("library_id").get<std::int32_t>();
      p.texture_id = pj.at("texture_id").get<std::uint32_t>();
      p.texture_origin = json_vec(pj.at("texture_origin"));
      p.room = pj.at("room").get<std::uint32_t>();
      s.primitives.push_back(p);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kFormat, std::string("scene manifest: ") + e.what());
  }
}

}  // namespace vsap
