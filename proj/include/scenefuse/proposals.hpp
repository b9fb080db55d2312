#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scenefuse/geometry.hpp"
#include "scenefuse/renderer.hpp"

namespace scenefuse {

enum class BoxOrigin { kFrom2D, kFrom3D, kGroundTruth };

const char* box_origin_name(BoxOrigin origin);

struct Box3D {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
  double score = 1.0;
  BoxOrigin origin = BoxOrigin::kGroundTruth;
  int label = kUnlabeled;  // class id for ground-truth boxes
  std::vector<int> members;  // sorted supporting point ids; not serialized

  double volume() const;
  bool contains(const Vec3& p) const;
};

double iou3d(const Box3D& a, const Box3D& b);

// Inclusive pixel bounds. `pixels` holds the row-major indices of the
// component that produced the box; when empty the whole rectangle is used.
struct Box2D {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;
  double score = 0.0;
  int view = 0;
  std::vector<int> pixels;

  int area() const { return (x1 - x0 + 1) * (y1 - y0 + 1); }
};

// 8-connected components of hit pixels; neighbors join when their
// chromaticities differ by less than one bin width (1 / chroma_bins).
struct Propose2DParams {
  int chroma_bins = 16;
  int min_area_px = 16;
};

std::vector<Box2D> propose_2d(const RenderedView& view, int view_id = 0, const Propose2DParams& params = {});

std::optional<Box3D> lift_2d_to_3d(const Box2D& box, const RenderedView& view,
                                   std::span<const Vec3> positions);

struct Propose3DParams {
  double cluster_radius = 0.08;
  int min_points = 30;
  double floor_threshold = 0.02;
  int ransac_iterations = 300;
  std::uint64_t seed = 0;
};

// Point indices that lie on the dominant RANSAC plane.
std::vector<int> ransac_plane_inliers(std::span<const Vec3> points, double threshold, int iterations,
                                      std::uint64_t seed);

// Single-linkage cluster id per point; -1 for excluded points.
std::vector<int> euclidean_clusters(std::span<const Vec3> points, std::span<const char> include, double radius);

std::vector<Box3D> propose_3d(const PointCloud& cloud, const Propose3DParams& params = {});

std::vector<Box3D> union_proposals(std::span<const Box3D> lifted_2d, std::span<const Box3D> r3d,
                                   double dedup_iou = 0.5);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

PrecisionRecall proposal_pr(std::span<const Box3D> proposals, std::span<const Box3D> gt,
                            double iou_thresh = 0.25);

struct SceneProposals {
  std::vector<Box3D> r2d;  // lifted and pooled over views
  std::vector<Box3D> r3d;
  std::vector<Box3D> united;
};

SceneProposals propose_scene(const PointCloud& cloud, std::span<const RenderedView> views,
                             const Propose2DParams& p2d = {}, const Propose3DParams& p3d = {},
                             double dedup_iou = 0.5);

std::string proposals_to_json(std::span<const Box3D> boxes);
std::vector<Box3D> proposals_from_json(const std::string& text);

}  // namespace scenefuse
