#include "scenefuse/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "binary_io.hpp"
#include "json.hpp"
#include "scenefuse/error.hpp"
#include "scenefuse/ply.hpp"

namespace scenefuse {

namespace {

using Rng = std::mt19937_64;

struct Placed {
  int cls = 0;
  Primitive shape = Primitive::kBox;
  Vec3 center = Vec3::Zero();  // footprint center on the floor (z = 0)
  Vec3 size = Vec3::Zero();    // full width, depth, height
  Vec3 color = Vec3::Zero();

  Vec3 lo() const { return center - 0.5 * Vec3(size.x(), size.y(), 0.0); }
  Vec3 hi() const { return center + Vec3(0.5 * size.x(), 0.5 * size.y(), size.z()); }
};

double uniform(Rng& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

class Sampler {
 public:
  Sampler(const SceneSpec& spec, Rng& rng, GeneratedScene& out)
      : spec_(spec), rng_(rng), out_(out), spacing_(1.0 / std::sqrt(spec.density)) {}

  // Stratified samples over the parallelogram origin + s*u + t*v, s,t in [0,1].
  template <typename Keep>
  void rect(const Vec3& origin, const Vec3& u, const Vec3& v, const Vec3& color, int cls, int inst,
            Keep keep) {
    const int nu = std::max(1, static_cast<int>(std::lround(u.norm() / spacing_)));
    const int nv = std::max(1, static_cast<int>(std::lround(v.norm() / spacing_)));
    for (int i = 0; i < nu; ++i) {
      for (int j = 0; j < nv; ++j) {
        const double s = (i + 0.5 + uniform(rng_, -0.25, 0.25)) / nu;
        const double t = (j + 0.5 + uniform(rng_, -0.25, 0.25)) / nv;
        const Vec3 p = origin + s * u + t * v;
        if (keep(p)) emit(p, color, cls, inst);
      }
    }
  }

  void rect(const Vec3& origin, const Vec3& u, const Vec3& v, const Vec3& color, int cls, int inst) {
    rect(origin, u, v, color, cls, inst, [](const Vec3&) { return true; });
  }

  void cylinder(const Placed& o, int inst) {
    const double r = 0.5 * o.size.x();
    const double h = o.size.z();
    const int nt = std::max(3, static_cast<int>(std::lround(2.0 * std::numbers::pi * r / spacing_)));
    const int nz = std::max(1, static_cast<int>(std::lround(h / spacing_)));
    for (int i = 0; i < nt; ++i) {
      for (int j = 0; j < nz; ++j) {
        const double a = 2.0 * std::numbers::pi * (i + 0.5 + uniform(rng_, -0.25, 0.25)) / nt;
        const double z = h * (j + 0.5 + uniform(rng_, -0.25, 0.25)) / nz;
        emit(o.center + Vec3(r * std::cos(a), r * std::sin(a), z), o.color, o.cls, inst);
      }
    }
    const Vec3 corner = o.center + Vec3(-r, -r, h);
    rect(corner, Vec3(2 * r, 0, 0), Vec3(0, 2 * r, 0), o.color, o.cls, inst, [&](const Vec3& p) {
      return (p - o.center).head<2>().norm() <= r;
    });
  }

  void sphere(const Placed& o, int inst) {
    const double r = 0.5 * o.size.x();
    const Vec3 c = o.center + Vec3(0, 0, r);
    const int n = std::max(4, static_cast<int>(std::lround(4.0 * std::numbers::pi * r * r * spec_.density)));
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    const double offset = uniform(rng_, 0.0, 2.0 * std::numbers::pi);
    for (int i = 0; i < n; ++i) {
      const double z = 1.0 - 2.0 * (i + 0.5) / n;
      const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double a = offset + golden * i;
      emit(c + r * Vec3(rho * std::cos(a), rho * std::sin(a), z), o.color, o.cls, inst);
    }
  }

  void box(const Placed& o, int inst) {
    const Vec3 lo = o.lo(), hi = o.hi();
    const Vec3 ex(hi.x() - lo.x(), 0, 0), ey(0, hi.y() - lo.y(), 0), ez(0, 0, hi.z());
    rect(Vec3(lo.x(), lo.y(), hi.z()), ex, ey, o.color, o.cls, inst);
    rect(lo, ey, ez, o.color, o.cls, inst);
    rect(Vec3(hi.x(), lo.y(), 0), ey, ez, o.color, o.cls, inst);
    rect(lo, ex, ez, o.color, o.cls, inst);
    rect(Vec3(lo.x(), hi.y(), 0), ex, ez, o.color, o.cls, inst);
  }

 private:
  void emit(const Vec3& p, const Vec3& base, int cls, int inst) {
    std::normal_distribution<double> noise(0.0, 1.0);
    Vec3 q = p;
    if (spec_.position_jitter > 0.0) {
      for (int a = 0; a < 3; ++a) q[a] += spec_.position_jitter * noise(rng_);
    }
    Vec3 c = base;
    if (spec_.color_noise > 0.0) {
      for (int a = 0; a < 3; ++a) c[a] += spec_.color_noise * noise(rng_);
    }
    out_.cloud.push_back(q, c.cwiseMax(0.0).cwiseMin(1.0), cls, inst);
  }

  const SceneSpec& spec_;
  Rng& rng_;
  GeneratedScene& out_;
  double spacing_;
};

void add_quad(TriangleMesh& mesh, const Vec3& o, const Vec3& u, const Vec3& v, const Vec3& color) {
  const int base = static_cast<int>(mesh.vertices.size());
  for (const Vec3& p : {o, Vec3(o + u), Vec3(o + u + v), Vec3(o + v)}) {
    mesh.vertices.push_back(p);
    mesh.vertex_color.push_back(color);
    mesh.vertex_point.push_back(kNoPoint);
  }
  mesh.triangles.push_back({base, base + 1, base + 2});
  mesh.triangles.push_back({base, base + 2, base + 3});
}

void add_object_mesh(TriangleMesh& mesh, const Placed& o) {
  if (o.shape == Primitive::kBox || o.shape == Primitive::kPlane) {
    const Vec3 lo = o.lo(), hi = o.hi();
    const Vec3 ex(hi.x() - lo.x(), 0, 0), ey(0, hi.y() - lo.y(), 0), ez(0, 0, hi.z());
    add_quad(mesh, Vec3(lo.x(), lo.y(), hi.z()), ex, ey, o.color);
    add_quad(mesh, lo, ey, ez, o.color);
    add_quad(mesh, Vec3(hi.x(), lo.y(), 0), ey, ez, o.color);
    add_quad(mesh, lo, ex, ez, o.color);
    add_quad(mesh, Vec3(lo.x(), hi.y(), 0), ex, ez, o.color);
    return;
  }
  const int segments = 24;
  const double r = 0.5 * o.size.x();
  if (o.shape == Primitive::kCylinder) {
    const double h = o.size.z();
    const Vec3 top = o.center + Vec3(0, 0, h);
    for (int i = 0; i < segments; ++i) {
      const double a0 = 2.0 * std::numbers::pi * i / segments, a1 = 2.0 * std::numbers::pi * (i + 1) / segments;
      const Vec3 p0 = o.center + Vec3(r * std::cos(a0), r * std::sin(a0), 0);
      const Vec3 p1 = o.center + Vec3(r * std::cos(a1), r * std::sin(a1), 0);
      add_quad(mesh, p0, p1 - p0, Vec3(0, 0, h), o.color);
      const int base = static_cast<int>(mesh.vertices.size());
      for (const Vec3& p : {top, Vec3(p0 + Vec3(0, 0, h)), Vec3(p1 + Vec3(0, 0, h))}) {
        mesh.vertices.push_back(p);
        mesh.vertex_color.push_back(o.color);
        mesh.vertex_point.push_back(kNoPoint);
      }
      mesh.triangles.push_back({base, base + 1, base + 2});
    }
    return;
  }
  const Vec3 c = o.center + Vec3(0, 0, r);
  const int rings = 12;
  auto at = [&](int ring, int seg) {
    const double phi = std::numbers::pi * ring / rings;
    const double th = 2.0 * std::numbers::pi * seg / segments;
    return Vec3(c + r * Vec3(std::sin(phi) * std::cos(th), std::sin(phi) * std::sin(th), std::cos(phi)));
  };
  for (int ring = 0; ring < rings; ++ring) {
    for (int seg = 0; seg < segments; ++seg) {
      const int base = static_cast<int>(mesh.vertices.size());
      for (const Vec3& p : {at(ring, seg), at(ring + 1, seg), at(ring + 1, seg + 1), at(ring, seg + 1)}) {
        mesh.vertices.push_back(p);
        mesh.vertex_color.push_back(o.color);
        mesh.vertex_point.push_back(kNoPoint);
      }
      if (ring > 0) mesh.triangles.push_back({base, base + 1, base + 3});
      if (ring < rings - 1) mesh.triangles.push_back({base + 1, base + 2, base + 3});
    }
  }
}

bool footprint_clear(const Placed& a, const Placed& b, double gap) {
  const Vec3 alo = a.lo(), ahi = a.hi(), blo = b.lo(), bhi = b.hi();
  return alo.x() >= bhi.x() + gap || blo.x() >= ahi.x() + gap || alo.y() >= bhi.y() + gap ||
         blo.y() >= ahi.y() + gap;
}

bool inside_room(const Placed& o, const SceneSpec& spec) {
  const Vec3 lo = o.lo(), hi = o.hi();
  return lo.x() >= spec.wall_margin && lo.y() >= spec.wall_margin &&
         hi.x() <= spec.room_extent.x() - spec.wall_margin && hi.y() <= spec.room_extent.y() - spec.wall_margin &&
         hi.z() <= spec.room_extent.z();
}

bool in_footprint(const Placed& o, const Vec3& p) {
  if (o.shape == Primitive::kCylinder) return (p - o.center).head<2>().norm() <= 0.5 * o.size.x();
  if (o.shape == Primitive::kSphere) return false;
  const Vec3 lo = o.lo(), hi = o.hi();
  return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y();
}

double footprint_area(const Placed& o) {
  if (o.shape == Primitive::kCylinder) return std::numbers::pi * 0.25 * o.size.x() * o.size.x();
  if (o.shape == Primitive::kSphere) return 0.0;
  return o.size.x() * o.size.y();
}

double surface_area(const Placed& o) {
  const double w = o.size.x(), d = o.size.y(), h = o.size.z();
  switch (o.shape) {
    case Primitive::kCylinder:
      return std::numbers::pi * w * h + std::numbers::pi * 0.25 * w * w;
    case Primitive::kSphere:
      return std::numbers::pi * w * w;
    default:
      return w * d + 2.0 * (w + d) * h;
  }
}

Placed random_object(const SceneSpec& spec, Rng& rng, int cls) {
  const ClassSpec& c = spec.vocabulary[cls];
  Placed o;
  o.cls = cls;
  o.shape = c.shape;
  for (int a = 0; a < 3; ++a) o.size[a] = uniform(rng, c.min_size[a], c.max_size[a]);
  if (o.shape != Primitive::kBox) o.size.y() = o.size.x();
  if (o.shape == Primitive::kSphere) o.size.z() = o.size.x();
  for (int a = 0; a < 3; ++a) {
    o.color[a] = std::clamp(c.color[a] + uniform(rng, -spec.instance_color_variation, spec.instance_color_variation),
                            0.0, 1.0);
  }
  return o;
}

void random_center(const SceneSpec& spec, Rng& rng, Placed& o) {
  const double hx = 0.5 * o.size.x(), hy = 0.5 * o.size.y();
  o.center = Vec3(uniform(rng, spec.wall_margin + hx, spec.room_extent.x() - spec.wall_margin - hx),
                  uniform(rng, spec.wall_margin + hy, spec.room_extent.y() - spec.wall_margin - hy), 0.0);
}

nlohmann::json box_json(const Box3D& b) {
  return {{"min", {b.min.x(), b.min.y(), b.min.z()}}, {"max", {b.max.x(), b.max.y(), b.max.z()}}, {"label", b.label}};
}

Box3D box_from_json(const nlohmann::json& j) {
  Box3D b;
  for (int a = 0; a < 3; ++a) {
    b.min[a] = j.at("min").at(a).get<double>();
    b.max[a] = j.at("max").at(a).get<double>();
  }
  b.label = j.at("label").get<int>();
  b.origin = BoxOrigin::kGroundTruth;
  return b;
}

}  // namespace

void SceneSpec::validate() const {
  if (!(room_extent.array() > 0.0).all()) throw Error(ErrorCode::kBadParam, "room extent must be positive");
  if (vocabulary.size() < 2) throw Error(ErrorCode::kBadParam, "vocabulary needs floor and wall entries");
  if (min_objects < 0 || max_objects < min_objects) throw Error(ErrorCode::kBadParam, "bad object count range");
  if (max_objects > 0 && vocabulary.size() < 3) throw Error(ErrorCode::kBadParam, "no object classes");
  if (!(density > 0.0)) throw Error(ErrorCode::kBadParam, "density must be positive");
  for (const auto& name : novel_classes) {
    if (std::none_of(vocabulary.begin(), vocabulary.end(), [&](const ClassSpec& c) { return c.name == name; })) {
      throw Error(ErrorCode::kBadParam, "novel class not in vocabulary: " + name);
    }
  }
}

SceneSpec default_scene_spec() {
  SceneSpec spec;
  spec.vocabulary = {
      {"floor", Primitive::kPlane, Vec3(0.55, 0.42, 0.30), Vec3::Zero(), Vec3::Zero()},
      {"wall", Primitive::kPlane, Vec3(0.70, 0.70, 0.70), Vec3::Zero(), Vec3::Zero()},
      {"chair", Primitive::kBox, Vec3(0.80, 0.18, 0.15), Vec3(0.30, 0.30, 0.30), Vec3(0.40, 0.40, 0.45)},
      {"table", Primitive::kBox, Vec3(0.20, 0.60, 0.18), Vec3(0.45, 0.45, 0.30), Vec3(0.65, 0.65, 0.40)},
      {"sofa", Primitive::kBox, Vec3(0.18, 0.25, 0.80), Vec3(0.55, 0.30, 0.20), Vec3(0.75, 0.40, 0.30)},
      {"lamp", Primitive::kCylinder, Vec3(0.80, 0.72, 0.12), Vec3(0.14, 0.14, 0.35), Vec3(0.20, 0.20, 0.50)},
      {"shelf", Primitive::kBox, Vec3(0.60, 0.20, 0.72), Vec3(0.35, 0.18, 0.40), Vec3(0.50, 0.24, 0.55)},
      {"bin", Primitive::kCylinder, Vec3(0.12, 0.65, 0.70), Vec3(0.18, 0.18, 0.15), Vec3(0.26, 0.26, 0.25)},
  };
  spec.novel_classes = {"lamp", "bin"};
  return spec;
}

GeneratedScene gen_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  GeneratedScene out;
  const int n_classes = static_cast<int>(spec.vocabulary.size());
  const int n_objects = std::uniform_int_distribution<int>(spec.min_objects, spec.max_objects)(rng);
  std::uniform_int_distribution<int> pick_class(2, std::max(2, n_classes - 1));

  std::vector<Placed> objects;
  const bool plant = n_objects >= 2 && n_classes >= 4 && uniform(rng, 0.0, 1.0) < spec.adjacent_probability;
  auto fits = [&](const Placed& o, int skip) {
    if (!inside_room(o, spec)) return false;
    for (int i = 0; i < static_cast<int>(objects.size()); ++i) {
      if (i != skip && !footprint_clear(o, objects[i], spec.min_gap)) return false;
    }
    return true;
  };

  for (int k = 0; k < n_objects; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      if (plant && k == 1) {
        const Placed& partner = objects[0];
        int cls = pick_class(rng);
        while (cls == partner.cls) cls = pick_class(rng);
        Placed o = random_object(spec, rng, cls);
        const int side = std::uniform_int_distribution<int>(0, 3)(rng);
        const int axis = side / 2, other = 1 - axis;
        const double sign = side % 2 ? 1.0 : -1.0;
        o.center[axis] = partner.center[axis] +
                         sign * (0.5 * partner.size[axis] + spec.adjacent_gap + 0.5 * o.size[axis]);
        const double slack = 0.5 * std::min(partner.size[other], o.size[other]);
        o.center[other] = partner.center[other] + uniform(rng, -slack, slack);
        if (fits(o, 0)) {
          objects.push_back(o);
          placed = true;
          out.has_adjacent_pair = true;
        }
        continue;
      }
      Placed o = random_object(spec, rng, pick_class(rng));
      random_center(spec, rng, o);
      if (fits(o, -1)) {
        objects.push_back(o);
        placed = true;
      }
    }
    if (!placed) {
      throw Error(ErrorCode::kPlacementFailure, "could not place object " + std::to_string(k) + " after 1000 tries");
    }
  }

  Sampler sampler(spec, rng, out);
  const Vec3 L = spec.room_extent;
  const Vec3 floor_color = spec.vocabulary[0].color, wall_color = spec.vocabulary[1].color;
  sampler.rect(Vec3::Zero(), Vec3(L.x(), 0, 0), Vec3(0, L.y(), 0), floor_color, 0, kNoInstance,
               [&](const Vec3& p) {
                 return std::none_of(objects.begin(), objects.end(), [&](const Placed& o) { return in_footprint(o, p); });
               });
  sampler.rect(Vec3::Zero(), Vec3(0, L.y(), 0), Vec3(0, 0, L.z()), wall_color, 1, kNoInstance);
  sampler.rect(Vec3(L.x(), 0, 0), Vec3(0, L.y(), 0), Vec3(0, 0, L.z()), wall_color, 1, kNoInstance);
  sampler.rect(Vec3::Zero(), Vec3(L.x(), 0, 0), Vec3(0, 0, L.z()), wall_color, 1, kNoInstance);
  sampler.rect(Vec3(0, L.y(), 0), Vec3(L.x(), 0, 0), Vec3(0, 0, L.z()), wall_color, 1, kNoInstance);
  out.sampled_area = L.x() * L.y() + 2.0 * (L.x() + L.y()) * L.z();

  add_quad(out.mesh, Vec3::Zero(), Vec3(L.x(), 0, 0), Vec3(0, L.y(), 0), floor_color);
  add_quad(out.mesh, Vec3::Zero(), Vec3(0, L.y(), 0), Vec3(0, 0, L.z()), wall_color);
  add_quad(out.mesh, Vec3(L.x(), 0, 0), Vec3(0, L.y(), 0), Vec3(0, 0, L.z()), wall_color);
  add_quad(out.mesh, Vec3::Zero(), Vec3(L.x(), 0, 0), Vec3(0, 0, L.z()), wall_color);
  add_quad(out.mesh, Vec3(0, L.y(), 0), Vec3(L.x(), 0, 0), Vec3(0, 0, L.z()), wall_color);

  for (int k = 0; k < static_cast<int>(objects.size()); ++k) {
    const Placed& o = objects[k];
    switch (o.shape) {
      case Primitive::kCylinder:
        sampler.cylinder(o, k);
        break;
      case Primitive::kSphere:
        sampler.sphere(o, k);
        break;
      default:
        sampler.box(o, k);
    }
    add_object_mesh(out.mesh, o);
    out.sampled_area += surface_area(o) - footprint_area(o);
    Box3D box;
    box.min = o.lo();
    box.max = o.hi();
    box.label = o.cls;
    box.origin = BoxOrigin::kGroundTruth;
    out.boxes.push_back(box);
    out.classes.push_back(o.cls);
  }
  std::sort(out.classes.begin(), out.classes.end());
  return out;
}

std::uint64_t scene_seed(std::uint64_t dataset_seed, int index) {
  std::uint64_t z = dataset_seed + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

int Manifest::class_index(const std::string& name) const {
  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    if (vocabulary[i] == name) return static_cast<int>(i);
  }
  return -1;
}

std::vector<int> Manifest::base_ids() const {
  std::vector<int> out;
  for (const auto& name : base_classes) out.push_back(class_index(name));
  return out;
}

std::vector<int> Manifest::novel_ids() const {
  std::vector<int> out;
  for (const auto& name : novel_classes) out.push_back(class_index(name));
  return out;
}

Dataset gen_dataset_in_memory(const SceneSpec& spec, int n_scenes, int n_test, std::uint64_t seed) {
  if (n_scenes < 1) throw Error(ErrorCode::kBadParam, "n_scenes must be at least 1");
  if (n_test < 0 || n_test > n_scenes) throw Error(ErrorCode::kBadParam, "n_test out of range");
  spec.validate();
  Dataset out;
  Manifest& m = out.manifest;
  m.seed = seed;
  for (const auto& c : spec.vocabulary) {
    m.vocabulary.push_back(c.name);
    m.colors.push_back(c.color);
    if (std::find(spec.novel_classes.begin(), spec.novel_classes.end(), c.name) == spec.novel_classes.end()) {
      m.base_classes.push_back(c.name);
    }
  }
  m.novel_classes = spec.novel_classes;
  for (int i = 0; i < n_scenes; ++i) {
    ManifestScene entry;
    entry.seed = scene_seed(seed, i);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d.ply", i);
    entry.file = name;
    entry.split = i >= n_scenes - n_test ? "test" : "train";
    GeneratedScene scene = gen_scene(spec, entry.seed);
    entry.boxes = scene.boxes;
    entry.classes = scene.classes;
    entry.has_adjacent_pair = scene.has_adjacent_pair;
    m.scenes.push_back(entry);
    out.scenes.push_back(std::move(scene));
  }
  return out;
}

Manifest gen_dataset(const SceneSpec& spec, int n_scenes, int n_test, std::uint64_t seed,
                     const std::filesystem::path& out_dir) {
  Dataset data = gen_dataset_in_memory(spec, n_scenes, n_test, seed);
  data.manifest.root = out_dir;
  for (std::size_t i = 0; i < data.scenes.size(); ++i) {
    write_ply(out_dir / data.manifest.scenes[i].file, data.scenes[i].cloud);
  }
  io::write_file(out_dir / "manifest.json", manifest_to_json(data.manifest));
  return data.manifest;
}

std::string manifest_to_json(const Manifest& m) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["vocabulary"] = m.vocabulary;
  nlohmann::json colors = nlohmann::json::array();
  for (const Vec3& c : m.colors) colors.push_back({c.x(), c.y(), c.z()});
  j["colors"] = colors;
  j["base_classes"] = m.base_classes;
  j["novel_classes"] = m.novel_classes;
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& s : m.scenes) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : s.boxes) boxes.push_back(box_json(b));
    scenes.push_back({{"file", s.file},
                      {"seed", s.seed},
                      {"split", s.split},
                      {"classes", s.classes},
                      {"adjacent_pair", s.has_adjacent_pair},
                      {"boxes", boxes}});
  }
  j["scenes"] = scenes;
  return j.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text, const std::filesystem::path& root) {
  Manifest m;
  m.root = root;
  try {
    const auto j = nlohmann::json::parse(text);
    m.seed = j.value("seed", std::uint64_t{0});
    m.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    for (const auto& c : j.at("colors")) m.colors.emplace_back(c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>());
    m.base_classes = j.at("base_classes").get<std::vector<std::string>>();
    m.novel_classes = j.at("novel_classes").get<std::vector<std::string>>();
    for (const auto& s : j.at("scenes")) {
      ManifestScene e;
      e.file = s.at("file").get<std::string>();
      e.seed = s.at("seed").get<std::uint64_t>();
      e.split = s.at("split").get<std::string>();
      e.classes = s.value("classes", std::vector<int>{});
      e.has_adjacent_pair = s.value("adjacent_pair", false);
      if (s.contains("boxes")) {
        for (const auto& b : s.at("boxes")) e.boxes.push_back(box_from_json(b));
      }
      if (e.split != "train" && e.split != "test") throw Error(ErrorCode::kFormat, "bad split " + e.split);
      m.scenes.push_back(e);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("bad manifest: ") + e.what());
  }
  if (m.colors.size() != m.vocabulary.size()) throw Error(ErrorCode::kFormat, "manifest colors vs vocabulary");
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  return manifest_from_json(io::read_file(path), path.parent_path());
}

SceneSpec scene_spec_from_json(const std::string& text) {
  SceneSpec spec = default_scene_spec();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("bad scene spec: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kConfig, "scene spec must be a flat JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "room_x") spec.room_extent.x() = value.get<double>();
      else if (key == "room_y") spec.room_extent.y() = value.get<double>();
      else if (key == "room_z") spec.room_extent.z() = value.get<double>();
      else if (key == "min_objects") spec.min_objects = value.get<int>();
      else if (key == "max_objects") spec.max_objects = value.get<int>();
      else if (key == "density") spec.density = value.get<double>();
      else if (key == "position_jitter") spec.position_jitter = value.get<double>();
      else if (key == "color_noise") spec.color_noise = value.get<double>();
      else if (key == "instance_color_variation") spec.instance_color_variation = value.get<double>();
      else if (key == "wall_margin") spec.wall_margin = value.get<double>();
      else if (key == "min_gap") spec.min_gap = value.get<double>();
      else if (key == "adjacent_probability") spec.adjacent_probability = value.get<double>();
      else if (key == "adjacent_gap") spec.adjacent_gap = value.get<double>();
      else if (key == "novel_classes") spec.novel_classes = value.get<std::vector<std::string>>();
      else throw Error(ErrorCode::kConfig, "unknown scene spec key: " + key);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::kConfig, "bad value for scene spec key: " + key);
    }
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  return spec;
}

}  // namespace scenefuse
