#pragma once

// Per-frame planar segmentation: finite-difference normals, spherical
// k-means in normal space, then density clustering of each normal group in 3D.

#include <cstdint>
#include <vector>

#include "crisp/dataset.hpp"

namespace crisp {

struct NormalMap {
  int width = 0;
  int height = 0;
  std::vector<Eigen::Vector3f> normals;
  Mask valid;
};

struct NormalOptions {
  /// A pixel whose forward and backward differences along either image axis
  /// turn by more than this many degrees sits on a crease or a depth spike and
  /// gets no normal.
  double crease_angle_deg = 45.0;
  /// Pixel distance of the difference stencil.
  int step = 1;
};

/// Central differences along u and v over `step` pixels (one-sided within
/// `step` of the image border), normal
/// = normalized cross product oriented toward the frame's camera center.
/// Invalid when any stencil pixel is invalid.
NormalMap estimate_normals(const PointMap& frame, int width, int height, const Vec3& camera_center,
                           const NormalOptions& options = {});

std::vector<NormalMap> estimate_normals(const PointMapSequence& points, const CameraTrack& cameras,
                                        const NormalOptions& options = {}, int workers = 1);

/// Edge-preserving average: each valid normal is replaced by the normalized
/// mean of valid normals in a (2r+1)^2 window that lie within `gate_deg` of
/// it. radius 0 returns the input unchanged.
NormalMap smooth_normals(const NormalMap& normals, int radius, double gate_deg = 30.0);

struct KMeansOptions {
  int clusters = 6;
  std::uint64_t seed = 0;
  int max_iterations = 100;
  double tolerance = 1e-6;
};

struct NormalClustering {
  std::vector<int> labels;  ///< per pixel in [0, K), -1 where the normal is invalid
  std::vector<Vec3> centroids;
  int iterations = 0;
};

/// Spherical k-means (cosine distance, centroids renormalized each
/// iteration) with farthest-point seeding. Throws InsufficientPoints when
/// fewer than K valid normals exist.
NormalClustering cluster_normals(const NormalMap& normals, const KMeansOptions& options);

/// Relabels clusters whose centroids lie within `max_angle_deg` of each other
/// (transitively) to the smallest label of the set and recomputes the merged
/// centroids. Spare clusters otherwise split one plane into interleaved bands.
void merge_close_clusters(NormalClustering& clustering, const NormalMap& normals, double max_angle_deg);

struct Segment {
  int frame = 0;
  std::vector<int> members;  ///< sorted pixel indices
  Vec3 mean_normal = Vec3::UnitZ();
  Vec3 centroid = Vec3::Zero();
};

struct SpatialSplitOptions {
  double eps = 0.15;
  int min_points = 20;
  int min_segment_size = 200;
};

/// Within each normal label, DBSCAN over 3D positions; noise and clusters
/// below min_segment_size are dropped. Segments are ordered by label, then by
/// cluster id.
std::vector<Segment> split_spatial(int frame_index, const PointMap& frame, const NormalMap& normals,
                                   const std::vector<int>& labels, int clusters,
                                   const SpatialSplitOptions& options);

/// Density thresholds are quoted for 256 x 256 images and scale with pixel count.
SpatialSplitOptions scale_for_resolution(SpatialSplitOptions options, int width, int height);

}  // namespace crisp
