#pragma once

#include <algorithm>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "scenefuse/error.hpp"
#include "scenefuse/geometry.hpp"
#include "scenefuse/image.hpp"

namespace scenefuse {

struct Framebuffer {
  int width = 0;
  int height = 0;
  RgbImage color;
  std::vector<double> depth;         // +inf where nothing was hit
  std::vector<int> correspondence;   // source point index, -1 where nothing was hit
  std::vector<int> triangle;         // winning triangle index, -1 where nothing was hit

  Framebuffer() = default;
  Framebuffer(int w, int h);

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  bool hit(int x, int y) const { return correspondence[index(x, y)] >= 0; }
};

struct RenderedView {
  Framebuffer framebuffer;
  CameraIntrinsics intrinsics;
  CameraPose pose;
};

struct RasterOptions {
  double ambient = 0.2;
  double near_plane = 1e-3;
};

// Z-buffered rasterization sampled at pixel centers (x + 0.5, y + 0.5) with a
// top-left fill rule. Flat Lambert shading, no back-face culling.
Framebuffer rasterize(const TriangleMesh& mesh, const CameraIntrinsics& intrinsics,
                      const CameraPose& pose, const Vec3& light_dir,
                      const RasterOptions& options = {});

inline const Vec3 kDefaultLight = Vec3(0.3, 0.5, 0.8).normalized();

// Output order matches camera order. `jobs` > 1 renders views concurrently;
// results are bit-identical to the serial path.
std::vector<RenderedView> render_views(const TriangleMesh& mesh, std::span<const Camera> cams,
                                       const Vec3& light_dir = kDefaultLight, int jobs = 1);

// Assigns each hit pixel's value to its 3D point; when several pixels hit
// the same point the nearest-depth pixel wins (row-major order on ties).
template <typename T>
std::map<int, T> lift_pixel_labels(const RenderedView& view, std::span<const T> per_pixel) {
  const Framebuffer& fb = view.framebuffer;
  if (per_pixel.size() != fb.correspondence.size() || fb.width != view.intrinsics.width ||
      fb.height != view.intrinsics.height) {
    throw Error(ErrorCode::kShapeMismatch, "per-pixel values do not match the view size");
  }
  std::map<int, T> out;
  std::map<int, double> best;
  for (std::size_t i = 0; i < fb.correspondence.size(); ++i) {
    const int pt = fb.correspondence[i];
    if (pt < 0) continue;
    auto it = best.find(pt);
    if (it == best.end() || fb.depth[i] < it->second) {
      best[pt] = fb.depth[i];
      out[pt] = per_pixel[i];
    }
  }
  return out;
}

// Dumps. Correspondence: "C3DM", u32 width, u32 height, i32 indices.
// Depth: "DPTH", u32 width, u32 height, f32 meters (+inf kept as inf).
void write_correspondence(const std::filesystem::path& path, const Framebuffer& fb);
void write_depth(const std::filesystem::path& path, const Framebuffer& fb);
// Reads both dumps plus the color image back into a framebuffer.
Framebuffer read_framebuffer(const std::filesystem::path& ppm, const std::filesystem::path& c3dm,
                             const std::filesystem::path& dpth);

}  // namespace scenefuse
