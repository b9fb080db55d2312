#include "scenefuse/renderer.hpp"

#include <cmath>
#include <thread>

#include "binary_io.hpp"

namespace scenefuse {

Framebuffer::Framebuffer(int w, int h)
    : width(w),
      height(h),
      color(w, h),
      depth(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity()),
      correspondence(static_cast<std::size_t>(w) * h, -1),
      triangle(static_cast<std::size_t>(w) * h, -1) {}

namespace {

struct ScreenVertex {
  double u;
  double v;
  double inv_z;
};

double edge(const ScreenVertex& a, const ScreenVertex& b, double pu, double pv) {
  return (b.u - a.u) * (pv - a.v) - (b.v - a.v) * (pu - a.u);
}

// For positively oriented triangles (see `edge`), top edges run +u with no
// change in v and left edges run -v.
bool top_left(const ScreenVertex& a, const ScreenVertex& b) {
  const double du = b.u - a.u;
  const double dv = b.v - a.v;
  return (dv == 0.0 && du > 0.0) || dv < 0.0;
}

bool covers(double w, bool is_top_left) { return w > 0.0 || (w == 0.0 && is_top_left); }

// Sutherland-Hodgman against z >= near.
std::vector<Vec3> clip_near(const std::array<Vec3, 3>& tri, double near) {
  std::vector<Vec3> out;
  for (int i = 0; i < 3; ++i) {
    const Vec3& a = tri[i];
    const Vec3& b = tri[(i + 1) % 3];
    const bool a_in = a.z() >= near;
    const bool b_in = b.z() >= near;
    if (a_in) out.push_back(a);
    if (a_in != b_in) {
      const double t = (near - a.z()) / (b.z() - a.z());
      Vec3 p = a + t * (b - a);
      p.z() = near;
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace

Framebuffer rasterize(const TriangleMesh& mesh, const CameraIntrinsics& intrinsics,
                      const CameraPose& pose, const Vec3& light_dir, const RasterOptions& options) {
  intrinsics.validate();
  Framebuffer fb(intrinsics.width, intrinsics.height);
  const Vec3 eye = pose.center();
  const Vec3 light = light_dir.normalized();
  std::vector<double> zbuf(fb.depth.size(), std::numeric_limits<double>::infinity());

  for (std::size_t ti = 0; ti < mesh.triangles.size(); ++ti) {
    const auto& t = mesh.triangles[ti];
    const std::array<Vec3, 3> world{mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]};
    const std::array<Vec3, 3> cam{pose.to_camera(world[0]), pose.to_camera(world[1]),
                                  pose.to_camera(world[2])};
    if (cam[0].z() < options.near_plane && cam[1].z() < options.near_plane &&
        cam[2].z() < options.near_plane) {
      continue;
    }

    Vec3 normal = (world[1] - world[0]).cross(world[2] - world[0]);
    if (normal.norm() == 0.0) continue;
    normal.normalize();
    if (normal.dot(eye - world[0]) < 0.0) normal = -normal;
    const Vec3 base =
        (mesh.vertex_color[t[0]] + mesh.vertex_color[t[1]] + mesh.vertex_color[t[2]]) / 3.0;
    const Vec3 shaded =
        (base * (options.ambient + std::max(0.0, normal.dot(light)))).cwiseMax(0.0).cwiseMin(1.0);

    const auto poly = clip_near(cam, options.near_plane);
    std::vector<ScreenVertex> sv;
    for (const auto& p : poly) {
      sv.push_back({intrinsics.fx * p.x() / p.z() + intrinsics.cx,
                    intrinsics.fy * p.y() / p.z() + intrinsics.cy, 1.0 / p.z()});
    }
    for (std::size_t k = 1; k + 1 < sv.size(); ++k) {
      ScreenVertex s0 = sv[0], s1 = sv[k], s2 = sv[k + 1];
      double area = edge(s0, s1, s2.u, s2.v);
      if (area == 0.0 || !std::isfinite(area)) continue;
      if (area < 0.0) {
        std::swap(s1, s2);
        area = -area;
      }
      const double umin = std::min({s0.u, s1.u, s2.u}), umax = std::max({s0.u, s1.u, s2.u});
      const double vmin = std::min({s0.v, s1.v, s2.v}), vmax = std::max({s0.v, s1.v, s2.v});
      const int x0 = std::max(0, static_cast<int>(std::ceil(umin - 0.5)));
      const int x1 = std::min(fb.width - 1, static_cast<int>(std::floor(umax - 0.5)));
      const int y0 = std::max(0, static_cast<int>(std::ceil(vmin - 0.5)));
      const int y1 = std::min(fb.height - 1, static_cast<int>(std::floor(vmax - 0.5)));
      const bool tl0 = top_left(s1, s2), tl1 = top_left(s2, s0), tl2 = top_left(s0, s1);
      for (int y = y0; y <= y1; ++y) {
        const double pv = y + 0.5;
        for (int x = x0; x <= x1; ++x) {
          const double pu = x + 0.5;
          const double w0 = edge(s1, s2, pu, pv);
          const double w1 = edge(s2, s0, pu, pv);
          const double w2 = edge(s0, s1, pu, pv);
          if (!covers(w0, tl0) || !covers(w1, tl1) || !covers(w2, tl2)) continue;
          const double inv_z = (w0 * s0.inv_z + w1 * s1.inv_z + w2 * s2.inv_z) / area;
          const double depth = 1.0 / inv_z;
          const std::size_t idx = fb.index(x, y);
          if (!(depth < zbuf[idx])) continue;
          zbuf[idx] = depth;
          fb.triangle[idx] = static_cast<int>(ti);
          fb.color.set(x, y, shaded);
          const Vec3 surface((pu - intrinsics.cx) / intrinsics.fx * depth,
                             (pv - intrinsics.cy) / intrinsics.fy * depth, depth);
          int best = 0;
          double best_d = (cam[0] - surface).squaredNorm();
          for (int c = 1; c < 3; ++c) {
            const double d = (cam[c] - surface).squaredNorm();
            if (d < best_d) {
              best_d = d;
              best = c;
            }
          }
          fb.correspondence[idx] = std::max(-1, mesh.vertex_point[t[best]]);
        }
      }
    }
  }
  // Vertices without a source point occlude but carry no identity.
  for (std::size_t i = 0; i < zbuf.size(); ++i) {
    if (fb.correspondence[i] >= 0) fb.depth[i] = zbuf[i];
  }
  return fb;
}

std::vector<RenderedView> render_views(const TriangleMesh& mesh, std::span<const Camera> cams,
                                       const Vec3& light_dir, int jobs) {
  std::vector<RenderedView> views(cams.size());
  auto work = [&](std::size_t i) {
    views[i].framebuffer = rasterize(mesh, cams[i].intrinsics, cams[i].pose, light_dir);
    views[i].intrinsics = cams[i].intrinsics;
    views[i].pose = cams[i].pose;
  };
  if (jobs <= 1 || cams.size() <= 1) {
    for (std::size_t i = 0; i < cams.size(); ++i) work(i);
    return views;
  }
  std::vector<std::thread> pool;
  const std::size_t n_threads = std::min<std::size_t>(jobs, cams.size());
  for (std::size_t t = 0; t < n_threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < cams.size(); i += n_threads) work(i);
    });
  }
  for (auto& th : pool) th.join();
  return views;
}

void write_correspondence(const std::filesystem::path& path, const Framebuffer& fb) {
  std::string out = "C3DM";
  io::put_u32(out, static_cast<std::uint32_t>(fb.width));
  io::put_u32(out, static_cast<std::uint32_t>(fb.height));
  for (int v : fb.correspondence) io::put_i32(out, v);
  io::write_file(path, out);
}

void write_depth(const std::filesystem::path& path, const Framebuffer& fb) {
  std::string out = "DPTH";
  io::put_u32(out, static_cast<std::uint32_t>(fb.width));
  io::put_u32(out, static_cast<std::uint32_t>(fb.height));
  for (double d : fb.depth) io::put_f32(out, static_cast<float>(d));
  io::write_file(path, out);
}

Framebuffer read_framebuffer(const std::filesystem::path& ppm, const std::filesystem::path& c3dm,
                             const std::filesystem::path& dpth) {
  const RgbImage image = read_ppm(ppm);
  Framebuffer fb(image.width, image.height);
  fb.color = image;
  {
    const std::string bytes = io::read_file(c3dm);
    io::Reader r(bytes);
    r.expect_magic("C3DM");
    if (static_cast<int>(r.u32()) != fb.width || static_cast<int>(r.u32()) != fb.height) {
      throw Error(ErrorCode::kShapeMismatch, "correspondence dump size differs from image");
    }
    for (auto& v : fb.correspondence) v = r.i32();
  }
  {
    const std::string bytes = io::read_file(dpth);
    io::Reader r(bytes);
    r.expect_magic("DPTH");
    if (static_cast<int>(r.u32()) != fb.width || static_cast<int>(r.u32()) != fb.height) {
      throw Error(ErrorCode::kShapeMismatch, "depth dump size differs from image");
    }
    for (auto& v : fb.depth) v = r.f32();
  }
  return fb;
}

}  // namespace scenefuse
